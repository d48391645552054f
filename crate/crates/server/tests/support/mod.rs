//! Helpers shared by the service tests and the acceptance target.
#![allow(dead_code)]

#[path = "../../../core/tests/support/mod.rs"]
pub mod checks;
pub mod durability;
pub mod http;

pub use checks::Check;
