//! Command-line front end for the hosting-capacity solver.

pub mod args;
pub mod commands;
pub mod report;
