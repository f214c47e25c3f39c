//! Maximum-likelihood inference of state and action chance constraints from
//! demonstrations in stochastic finite-horizon MDPs.
//!
//! The demonstrator is modelled as a maximum-causal-entropy (soft Bellman)
//! agent acting inside its constraints. Candidate constraints are scored by
//! how much partition mass they remove from the start state, and all
//! candidates of one greedy iteration are scored in a single backward pass
//! alongside the base soft backup ([`f_ratio::combined_backup`]).

pub mod constraints;
pub mod demo_sampler;
pub mod error;
pub mod f_ratio;
pub mod gridworld;
pub mod inference;
pub mod io;
pub mod mdp;
pub mod oracle;
pub mod soft_bellman;
pub mod validation;

pub use constraints::{Candidate, ConstraintSet};
pub use error::{Error, Result};
pub use f_ratio::{combined_backup, CombinedBackup, FTable};
pub use inference::{greedy_infer, InferenceConfig, InferenceResult, RiskMode};
pub use mdp::{DemonstrationSet, Mdp, MdpBuilder, Trajectory};
pub use soft_bellman::{policy_from_backup, soft_backup, Policy, SoftBackup};
