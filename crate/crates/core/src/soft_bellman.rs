//! Maximum-causal-entropy soft Bellman backup.
//!
//! ```text
//! V_T(x)   = w(x)
//! Q_t(x,a) = r(x,a) + sum_x' S(x,a,x') V_{t+1}(x')
//! V_t(x)   = log sum_{a in W_C(x)} exp Q_t(x,a)
//! P(a|x)   = exp(Q_t(x,a) - V_t(x))  for a in W_C(x), else 0
//! ```
//!
//! Everything is kept in log-space. A state with no feasible action (or whose
//! feasible actions all lead somewhere with positive probability that is
//! itself a dead end) has `V = -inf`.

use crate::constraints::{feasibility_mask, ConstraintSet};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Trajectory};

/// Streaming log-sum-exp accumulator. `-inf` terms are absent.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) const EMPTY: Self = Self {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    #[inline]
    pub(crate) fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.sum += (v - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Expected next value `sum S(x,a,x') v(x')`; any positive-mass `-inf`
/// successor makes the expectation `-inf`.
#[inline]
pub(crate) fn expected_next(row: &[(usize, f64)], v_next: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &(y, p) in row {
        let v = v_next[y];
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        acc += p * v;
    }
    acc
}

/// Soft values for one constraint set over the whole horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBackup {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `(T+1) * |X|`, time-major.
    v: Vec<f64>,
    /// `T * |X| * |A|`, time-major. Defined for every action, feasible or not.
    q: Vec<f64>,
    /// `|X| * |A|` feasibility under the constraint set used.
    feasible: Vec<bool>,
}

impl SoftBackup {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn v(&self, t: usize, x: usize) -> f64 {
        self.v[t * self.num_states + x]
    }

    #[inline]
    pub fn q(&self, t: usize, x: usize, a: usize) -> f64 {
        self.q[(t * self.num_states + x) * self.num_actions + a]
    }

    /// `V_t(.)` as a slice.
    pub fn v_slice(&self, t: usize) -> &[f64] {
        &self.v[t * self.num_states..(t + 1) * self.num_states]
    }

    #[inline]
    pub fn is_feasible(&self, x: usize, a: usize) -> bool {
        self.feasible[x * self.num_actions + a]
    }
}

/// Computes `Q_t(x, .)` and `V_t(x)` for one state from `V_{t+1}`.
#[inline]
pub(crate) fn backup_state(
    mdp: &Mdp,
    feasible: &[bool],
    x: usize,
    v_next: &[f64],
    q_out: &mut [f64],
) -> f64 {
    let na = mdp.num_actions();
    let mut lse = LogSumExp::EMPTY;
    for a in 0..na {
        let q = mdp.reward(x, a) + expected_next(mdp.row(x, a), v_next);
        q_out[a] = q;
        if feasible[x * na + a] {
            lse.push(q);
        }
    }
    lse.value()
}

pub(crate) fn empty_backup(mdp: &Mdp, feasible: Vec<bool>) -> SoftBackup {
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut v = vec![0.0; (horizon + 1) * n];
    v[horizon * n..].copy_from_slice(mdp.terminal_rewards());
    SoftBackup {
        num_states: n,
        num_actions: na,
        horizon,
        v,
        q: vec![0.0; horizon * n * na],
        feasible,
    }
}

/// Fills in slice `t` of `backup` from slice `t + 1`.
pub(crate) fn backup_step(mdp: &Mdp, backup: &mut SoftBackup, t: usize) {
    let (n, na) = (backup.num_states, backup.num_actions);
    let (head, tail) = backup.v.split_at_mut((t + 1) * n);
    let v_next = &tail[..n];
    let v_now = &mut head[t * n..];
    let q_now = &mut backup.q[t * n * na..(t + 1) * n * na];
    for x in 0..n {
        v_now[x] = backup_state(
            mdp,
            &backup.feasible,
            x,
            v_next,
            &mut q_now[x * na..(x + 1) * na],
        );
    }
}

/// Full backward recursion under `c`.
pub fn soft_backup(mdp: &Mdp, c: &ConstraintSet) -> Result<SoftBackup> {
    c.check(mdp)?;
    let mut backup = empty_backup(mdp, feasibility_mask(mdp, c));
    for t in (0..mdp.horizon()).rev() {
        backup_step(mdp, &mut backup, t);
    }
    Ok(backup)
}

/// Per-step Boltzmann policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `T * |X| * |A|`, time-major.
    prob: Vec<f64>,
    /// `(t, x)` rows with no feasible continuation; these rows are all zero.
    pub dead_ends: Vec<(usize, usize)>,
}

impl Policy {
    #[inline]
    pub fn prob(&self, t: usize, x: usize, a: usize) -> f64 {
        self.prob[(t * self.num_states + x) * self.num_actions + a]
    }

    pub fn row(&self, t: usize, x: usize) -> &[f64] {
        let i = (t * self.num_states + x) * self.num_actions;
        &self.prob[i..i + self.num_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn is_dead_end(&self, t: usize, x: usize) -> bool {
        self.row(t, x).iter().all(|&p| p == 0.0)
    }
}

/// `P(a|x) = exp(Q - V)` on feasible actions, renormalised per row.
pub fn policy_from_backup(mdp: &Mdp, backup: &SoftBackup) -> Policy {
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut prob = vec![0.0; horizon * n * na];
    let mut dead_ends = Vec::new();
    for t in 0..horizon {
        for x in 0..n {
            let v = backup.v(t, x);
            let row = &mut prob[(t * n + x) * na..(t * n + x + 1) * na];
            if v == f64::NEG_INFINITY {
                dead_ends.push((t, x));
                continue;
            }
            let mut total = 0.0;
            for (a, p) in row.iter_mut().enumerate() {
                if backup.is_feasible(x, a) {
                    *p = (backup.q(t, x, a) - v).exp();
                    total += *p;
                }
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
    }
    Policy {
        num_states: n,
        num_actions: na,
        horizon,
        prob,
        dead_ends,
    }
}

/// Log-likelihood of one demonstration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryLikelihood {
    /// `sum_t log P(a_t | x_t)`.
    pub action: f64,
    /// `action` plus `sum_t log S(x_t, a_t, x_{t+1})`.
    pub full: f64,
}

pub fn trajectory_log_likelihood(
    policy: &Policy,
    mdp: &Mdp,
    traj: &Trajectory,
) -> Result<TrajectoryLikelihood> {
    if traj.actions.len() != policy.horizon || traj.states.len() != policy.horizon + 1 {
        return Err(Error::LengthMismatch {
            what: "trajectory",
            got: traj.actions.len(),
            expected: policy.horizon,
        });
    }
    traj.validate(mdp, 0)?;
    let mut action = 0.0;
    let mut dynamics = 0.0;
    for (t, (x, a, y)) in traj.steps().enumerate() {
        action += policy.prob(t, x, a).ln();
        dynamics += mdp.prob(x, a, y).ln();
    }
    Ok(TrajectoryLikelihood {
        action,
        full: action + dynamics,
    })
}
