//! Scenario files, experiment runners and artifact output for the `dgd` binary.

pub mod artifacts;
pub mod run;
pub mod scenario;
