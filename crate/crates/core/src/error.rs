use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid hybrid time domain: {0}")]
    InvalidDomain(String),

    #[error("hybrid time ({t}, {j}) is outside the domain")]
    OutOfDomain { t: f64, j: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("initial condition is in neither the flow set nor the jump set (residual {residual:.3e})")]
    InfeasibleStart { residual: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("solution left the flow set at t = {t} without reaching the jump set")]
    FlowEscape { t: f64 },

    #[error("terminal state violates the terminal constraint (residual {residual:.3e})")]
    TerminalConstraint { residual: f64 },

    #[error("no feasible solution found (best residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("optimal control problem is infeasible at the initial state (best residual {residual:.3e})")]
    MpcInfeasibleStart { residual: f64 },

    #[error("recursive feasibility lost at step {step}, hybrid time ({t}, {j}): best residual {residual:.3e}")]
    FeasibilityLost { step: usize, t: f64, j: usize, residual: f64 },

    #[error("value descent violated at step {step}: J* rose by {excess:.3e} beyond the tolerance")]
    DescentViolated { step: usize, excess: f64 },

    #[error("brute-force grid too large: {0}")]
    GridTooLarge(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
