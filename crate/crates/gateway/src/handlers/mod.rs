pub mod admin;
pub mod courier;
pub mod quotes;
pub mod registry;
