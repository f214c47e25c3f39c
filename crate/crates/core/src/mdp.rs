//! Finite-horizon MDP data model.
//!
//! States and actions are plain index sets `0..n`. The transition kernel is
//! stored as one sorted sparse row per `(state, action)` pair; [`Mdp::prob`]
//! gives the dense view. Rows are not required to be stochastic at
//! construction time so that malformed inputs can be reported by
//! [`Mdp::validate`] instead of being rejected outright.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on kernel row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// Strictly positive entries, ascending by next state, one row per `(x, a)`.
    rows: Vec<Vec<(usize, f64)>>,
    row_sums: Vec<f64>,
    /// Entries that are negative or non-finite; kept only for validation.
    bad_entries: Vec<(usize, usize, usize, f64)>,
    running_reward: Vec<f64>,
    terminal_reward: Vec<f64>,
}

/// One broken invariant found by [`Mdp::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    ProbabilityOutOfRange {
        state: usize,
        action: usize,
        next: usize,
        prob: f64,
    },
    NonFiniteRunningReward {
        state: usize,
        action: usize,
        value: f64,
    },
    NonFiniteTerminalReward {
        state: usize,
        value: f64,
    },
}

/// Incremental constructor. Repeated transition entries accumulate.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    entries: Vec<Vec<(usize, f64)>>,
    running_reward: Vec<f64>,
    terminal_reward: Vec<f64>,
}

impl MdpBuilder {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        Self {
            num_states,
            num_actions,
            horizon,
            entries: vec![Vec::new(); num_states * num_actions],
            running_reward: vec![0.0; num_states * num_actions],
            terminal_reward: vec![0.0; num_states],
        }
    }

    fn check(&self, x: usize, a: usize) -> Result<()> {
        check_state(x, self.num_states)?;
        check_action(a, self.num_actions)
    }

    pub fn add_transition(&mut self, x: usize, a: usize, next: usize, p: f64) -> Result<&mut Self> {
        self.check(x, a)?;
        check_state(next, self.num_states)?;
        let row = &mut self.entries[x * self.num_actions + a];
        match row.iter_mut().find(|(y, _)| *y == next) {
            Some(entry) => entry.1 += p,
            None => row.push((next, p)),
        }
        Ok(self)
    }

    pub fn running_reward(&mut self, x: usize, a: usize, r: f64) -> Result<&mut Self> {
        self.check(x, a)?;
        self.running_reward[x * self.num_actions + a] = r;
        Ok(self)
    }

    pub fn terminal_reward(&mut self, x: usize, w: f64) -> Result<&mut Self> {
        check_state(x, self.num_states)?;
        self.terminal_reward[x] = w;
        Ok(self)
    }

    pub fn build(self) -> Result<Mdp> {
        if self.horizon == 0 {
            return Err(Error::ZeroHorizon);
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::EmptySpace);
        }
        let mut rows = Vec::with_capacity(self.entries.len());
        let mut row_sums = Vec::with_capacity(self.entries.len());
        let mut bad_entries = Vec::new();
        for (i, mut row) in self.entries.into_iter().enumerate() {
            let (x, a) = (i / self.num_actions, i % self.num_actions);
            row.sort_by_key(|&(y, _)| y);
            row_sums.push(row.iter().map(|&(_, p)| p).sum());
            row.retain(|&(y, p)| {
                if p.is_nan() || p < 0.0 || p.is_infinite() {
                    bad_entries.push((x, a, y, p));
                    false
                } else {
                    p > 0.0
                }
            });
            rows.push(row);
        }
        Ok(Mdp {
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            rows,
            row_sums,
            bad_entries,
            running_reward: self.running_reward,
            terminal_reward: self.terminal_reward,
        })
    }
}

pub(crate) fn check_state(x: usize, num_states: usize) -> Result<()> {
    if x < num_states {
        Ok(())
    } else {
        Err(Error::StateOutOfBounds {
            state: x,
            num_states,
        })
    }
}

pub(crate) fn check_action(a: usize, num_actions: usize) -> Result<()> {
    if a < num_actions {
        Ok(())
    } else {
        Err(Error::ActionOutOfBounds {
            action: a,
            num_actions,
        })
    }
}

impl Mdp {
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Dense accessor for `S(x, a, next)`. Out-of-range indices read as 0.
    pub fn prob(&self, x: usize, a: usize, next: usize) -> f64 {
        if x >= self.num_states || a >= self.num_actions {
            return 0.0;
        }
        let row = self.row(x, a);
        match row.binary_search_by_key(&next, |&(y, _)| y) {
            Ok(i) => row[i].1,
            Err(_) => 0.0,
        }
    }

    /// Positive-probability successors of `(x, a)` in ascending state order.
    pub fn successors(&self, x: usize, a: usize) -> Result<&[(usize, f64)]> {
        check_state(x, self.num_states)?;
        check_action(a, self.num_actions)?;
        Ok(self.row(x, a))
    }

    #[inline]
    pub(crate) fn row(&self, x: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[x * self.num_actions + a]
    }

    #[inline]
    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.running_reward[x * self.num_actions + a]
    }

    #[inline]
    pub fn terminal(&self, x: usize) -> f64 {
        self.terminal_reward[x]
    }

    pub fn terminal_rewards(&self) -> &[f64] {
        &self.terminal_reward
    }

    /// True when every row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.rows.iter().all(|r| r.len() == 1 && r[0].1 == 1.0)
    }

    /// Largest number of successors of any `(x, a)`.
    pub fn max_out_degree(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Reports every row-sum, range and finiteness violation. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for x in 0..self.num_states {
            for a in 0..self.num_actions {
                let i = x * self.num_actions + a;
                let sum = self.row_sums[i];
                if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    out.push(Violation::RowSum {
                        state: x,
                        action: a,
                        sum,
                    });
                }
                for &(next, prob) in &self.rows[i] {
                    if prob > 1.0 + ROW_SUM_TOLERANCE {
                        out.push(Violation::ProbabilityOutOfRange {
                            state: x,
                            action: a,
                            next,
                            prob,
                        });
                    }
                }
                let r = self.running_reward[i];
                if !r.is_finite() {
                    out.push(Violation::NonFiniteRunningReward {
                        state: x,
                        action: a,
                        value: r,
                    });
                }
            }
        }
        for &(state, action, next, prob) in &self.bad_entries {
            out.push(Violation::ProbabilityOutOfRange {
                state,
                action,
                next,
                prob,
            });
        }
        for (state, &value) in self.terminal_reward.iter().enumerate() {
            if !value.is_finite() {
                out.push(Violation::NonFiniteTerminalReward { state, value });
            }
        }
        out
    }

    /// Every stored transition as `(x, a, next, p)`, in row order.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(i, row)| {
            let (x, a) = (i / self.num_actions, i % self.num_actions);
            row.iter().map(move |&(y, p)| (x, a, y, p))
        })
    }
}

/// State-action path `x_0..x_T`, `a_0..a_{T-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `(x_t, a_t, x_{t+1})` triples.
    pub fn steps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(move |(t, &a)| (self.states[t], a, self.states[t + 1]))
    }

    /// Checks lengths against the horizon, index bounds, and that every
    /// demonstrated transition has positive probability.
    pub fn validate(&self, mdp: &Mdp, index: usize) -> Result<()> {
        let fail = |reason: String| Error::InvalidTrajectory { index, reason };
        if self.actions.len() != mdp.horizon() || self.states.len() != mdp.horizon() + 1 {
            return Err(fail(format!(
                "expected {} states and {} actions, got {} and {}",
                mdp.horizon() + 1,
                mdp.horizon(),
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(&x) = self.states.iter().find(|&&x| x >= mdp.num_states()) {
            return Err(fail(format!("state {x} out of bounds")));
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= mdp.num_actions()) {
            return Err(fail(format!("action {a} out of bounds")));
        }
        for (t, (x, a, y)) in self.steps().enumerate() {
            if mdp.prob(x, a, y) <= 0.0 {
                return Err(fail(format!(
                    "zero-probability transition {x} -> {y} under action {a} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Provenance of a sampled demonstration set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerMetadata {
    pub seed: u64,
    pub generator: String,
    pub aborts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub horizon: usize,
    pub trajectories: Vec<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<SamplerMetadata>,
}

impl DemonstrationSet {
    pub fn new(horizon: usize, trajectories: Vec<Trajectory>) -> Self {
        Self {
            horizon,
            trajectories,
            metadata: None,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        if self.horizon != mdp.horizon() {
            return Err(Error::LengthMismatch {
                what: "demonstration horizon",
                got: self.horizon,
                expected: mdp.horizon(),
            });
        }
        for (i, traj) in self.trajectories.iter().enumerate() {
            traj.validate(mdp, i)?;
        }
        Ok(())
    }
}
