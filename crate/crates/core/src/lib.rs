//! Hosting-capacity analysis for radial distribution feeders.
//!
//! The crate builds the maximum λ-weighted PV injection of a radial
//! feeder from closed-form voltage patterns, repairs thermal and
//! power-factor limits, and checks the result against a brute-force
//! grid oracle.

pub mod error;
pub mod fixtures;
pub mod hccore;
pub mod netmodel;
pub mod oracle;
pub mod partition;
pub mod powerflow;
pub mod sequence;

pub use error::{Error, Result};
pub use hccore::{solve_hc, ConstraintSet, HCSolution};
pub use netmodel::{parse_case, Network};
pub use powerflow::{evaluate_injections, VoltageState};
