use thiserror::Error;

/// Errors raised by the library. Every variant is a usage or input error;
/// numerical dead ends are encoded as `-inf` values, not errors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state index {state} out of bounds for {num_states} states")]
    StateOutOfBounds { state: usize, num_states: usize },

    #[error("action index {action} out of bounds for {num_actions} actions")]
    ActionOutOfBounds { action: usize, num_actions: usize },

    #[error("horizon must be at least 1")]
    ZeroHorizon,

    #[error("MDP must have at least one state and one action")]
    EmptySpace,

    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("duplicate transition entry for ({state}, {action}, {next})")]
    DuplicateTransition {
        state: usize,
        action: usize,
        next: usize,
    },

    #[error("trajectory {index}: {reason}")]
    InvalidTrajectory { index: usize, reason: String },

    #[error("psi({state}) = {psi} is outside [0, 1]")]
    PsiOutOfRange { state: usize, psi: f64 },

    #[error("candidate {index} does not strictly tighten the base constraint set")]
    NotAnAugmentation { index: usize },

    #[error("demonstration {index} is infeasible under the base constraints at t = {t}")]
    InfeasibleDemonstration { index: usize, t: usize },

    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("transition kernel is not deterministic at ({state}, {action})")]
    NotDeterministic { state: usize, action: usize },

    #[error("sampler hit {attempts} consecutive dead ends for trajectory {index}")]
    DeadEndLoop { index: usize, attempts: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
