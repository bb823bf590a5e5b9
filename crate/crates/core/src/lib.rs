//! Executable Zab models, an explicit-state explorer and a conformance harness.

pub mod cli;
pub mod domain;
pub mod harness;
pub mod kernel;
pub mod mutation;
pub mod protocol;
pub mod system;
pub mod test_model;
