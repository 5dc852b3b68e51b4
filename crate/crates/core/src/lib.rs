//! Domain model, state machines and storage for federated courier
//! instances: the instance registry, delivery lifecycle, courier
//! preferences, community notes, quote negotiation, assignment and
//! anonymized disclosure.

pub mod assignment;
pub mod clock;
pub mod delivery;
pub mod disclosure;
pub mod error;
pub mod federation;
pub mod geo;
pub mod ids;
pub mod instance;
pub mod money;
pub mod notes;
pub mod preferences;
pub mod quoting;
pub mod registry;
pub mod sample;
pub mod store;

pub use error::{Error, ErrorCode, Result};
