//! Deterministic in-process federation simulator and log verifier.

pub mod log;
pub mod scenario;
pub mod sim;
pub mod verify;
