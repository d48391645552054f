//! Checks shared by the core integration tests and the acceptance target.
//! Each returns a one-line summary on success and a description of the first
//! mismatch otherwise.
#![allow(dead_code)]

pub mod distance_checks;
pub mod mutations;
pub mod orchestration_checks;
pub mod oracle;
pub mod stats_checks;

pub type Check = Result<String, String>;
