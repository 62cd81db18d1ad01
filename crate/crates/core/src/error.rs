use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("duplicate bus id {0}")]
    DuplicateBus(i64),

    #[error("missing slack bus")]
    MissingSlack,

    #[error("multiple slack buses ({0} and {1})")]
    MultipleSlack(i64, i64),

    #[error("line {line}: unknown bus id {id}")]
    UnknownBus { line: usize, id: i64 },

    #[error("network is not connected: bus {0} is unreachable from the slack bus")]
    Disconnected(i64),

    #[error("non-radial network: {branches} branches for {buses} buses")]
    NonRadial { buses: usize, branches: usize },

    #[error("branch {from}-{to} has zero impedance")]
    ZeroImpedance { from: i64, to: i64 },

    #[error("invalid branch {from}-{to}: {msg}")]
    InvalidBranch { from: i64, to: i64, msg: String },

    #[error("invalid bus {id}: {msg}")]
    InvalidBus { id: i64, msg: String },

    #[error("invalid constraint set: {0}")]
    InvalidConstraints(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular Jacobian")]
    SingularJacobian,

    #[error("branch {from}-{to} has transfer conductance {g} > 0; the voltage pattern requires G_ik <= 0")]
    PositiveTransferConductance { from: i64, to: i64, g: f64 },

    #[error("thermal limit on branch {from}-{to} cannot be met inside the voltage box")]
    ThermalInfeasible { from: i64, to: i64 },

    #[error("power-factor adjustment infeasible: {0}")]
    PowerFactorInfeasible(String),

    #[error("grid of {points:e} points exceeds the cap of {cap}")]
    GridCapExceeded { points: f64, cap: u64 },

    #[error("expected exactly two free buses, found {0}")]
    FreeBusCount(usize),

    #[error("sequence coupling {metric:.4} exceeds the decoupling threshold {threshold}")]
    DecouplingExceeded { metric: f64, threshold: f64 },

    #[error("singular sequence-{sequence} admittance matrix (no grounded return path)")]
    SingularSequence { sequence: u8 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("constraint verification failed: {0}")]
    Verification(String),
}

impl Error {
    /// Errors that mean "no feasible operating point", as opposed to bad input.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            Error::ThermalInfeasible { .. }
                | Error::PowerFactorInfeasible(_)
                | Error::DecouplingExceeded { .. }
                | Error::SingularSequence { .. }
                | Error::Verification(_)
                | Error::NonConvergence { .. }
                | Error::SingularJacobian
        )
    }
}
