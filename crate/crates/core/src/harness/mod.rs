//! Generators, experiment records and the verification suite.

pub mod experiment;
pub mod generate;
pub mod verify;
