//! Constraint hypotheses `(psi, forbidden actions)`, the feasibility
//! indicator, and data-driven risk levels.
//!
//! A state `x` is chance-constrained when `psi[x] < 1`: an action is then
//! admissible at `y` only if its one-step probability of landing in `x` is
//! at most `psi[x]`. `psi[x] = 0` excludes `x` outright.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_action, check_state, DemonstrationSet, Mdp};

/// Slack added to `psi` when comparing against kernel entries, so that a
/// threshold read off the kernel never excludes the transition it came from.
pub const PSI_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub psi: Vec<f64>,
    pub forbidden_actions: BTreeSet<usize>,
}

impl ConstraintSet {
    /// No active constraints.
    pub fn unconstrained(num_states: usize) -> Self {
        Self {
            psi: vec![1.0; num_states],
            forbidden_actions: BTreeSet::new(),
        }
    }

    pub fn check(&self, mdp: &Mdp) -> Result<()> {
        if self.psi.len() != mdp.num_states() {
            return Err(Error::LengthMismatch {
                what: "psi",
                got: self.psi.len(),
                expected: mdp.num_states(),
            });
        }
        for (state, &psi) in self.psi.iter().enumerate() {
            if !(0.0..=1.0).contains(&psi) {
                return Err(Error::PsiOutOfRange { state, psi });
            }
        }
        for &a in &self.forbidden_actions {
            check_action(a, mdp.num_actions())?;
        }
        Ok(())
    }

    /// States with an active chance constraint.
    pub fn constrained_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.psi
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < 1.0)
            .map(|(x, _)| x)
    }

    /// Applies a candidate, returning the tightened set.
    pub fn with(&self, candidate: &Candidate) -> Self {
        let mut next = self.clone();
        match *candidate {
            Candidate::State { state, psi } => next.psi[state] = psi,
            Candidate::Action { action } => {
                next.forbidden_actions.insert(action);
            }
        }
        next
    }
}

/// A single-step tightening of some base constraint set.
///
/// The base is held by whoever evaluates the candidate; a state candidate
/// must strictly lower `psi` at its target and an action candidate must
/// name an action not yet forbidden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Candidate {
    State { state: usize, psi: f64 },
    Action { action: usize },
}

impl Candidate {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Candidate::State { .. } => "state",
            Candidate::Action { .. } => "action",
        }
    }

    pub fn target(&self) -> usize {
        match *self {
            Candidate::State { state, .. } => state,
            Candidate::Action { action } => action,
        }
    }

    /// Ordering key for deterministic tie-breaking: states by index, then actions.
    pub(crate) fn tie_key(&self) -> (u8, usize) {
        match *self {
            Candidate::State { state, .. } => (0, state),
            Candidate::Action { action } => (1, action),
        }
    }

    /// Whether this candidate strictly tightens `base`.
    pub fn augments(&self, mdp: &Mdp, base: &ConstraintSet) -> bool {
        match *self {
            Candidate::State { state, psi } => {
                state < mdp.num_states() && (0.0..=1.0).contains(&psi) && psi < base.psi[state]
            }
            Candidate::Action { action } => {
                action < mdp.num_actions() && !base.forbidden_actions.contains(&action)
            }
        }
    }
}

/// Feasibility indicator: `a` is not forbidden and every one-step
/// probability into a constrained state respects its threshold.
pub fn phi_indicator(mdp: &Mdp, c: &ConstraintSet, x: usize, a: usize) -> bool {
    !c.forbidden_actions.contains(&a)
        && mdp
            .row(x, a)
            .iter()
            .all(|&(y, p)| p <= c.psi[y] + PSI_SLACK)
}

/// Feasible action set `W_C(x)`, ascending. May be empty.
pub fn feasible_actions(mdp: &Mdp, c: &ConstraintSet, x: usize) -> Result<Vec<usize>> {
    check_state(x, mdp.num_states())?;
    Ok((0..mdp.num_actions())
        .filter(|&a| phi_indicator(mdp, c, x, a))
        .collect())
}

/// Row-major `[x * |A| + a]` feasibility mask for every state-action pair.
pub fn feasibility_mask(mdp: &Mdp, c: &ConstraintSet) -> Vec<bool> {
    let mut mask = Vec::with_capacity(mdp.num_states() * mdp.num_actions());
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            mask.push(phi_indicator(mdp, c, x, a));
        }
    }
    mask
}

/// Lower bound on `psi(target)` below which some state that can reach
/// `target` would have every action ruled out. 0 if nothing reaches it.
pub fn precursor_floor(mdp: &Mdp, target: usize) -> Result<f64> {
    check_state(target, mdp.num_states())?;
    let mut floor = 0.0_f64;
    for x in 0..mdp.num_states() {
        let masses = (0..mdp.num_actions()).map(|a| mdp.prob(x, a, target));
        let (reaches, min) =
            masses.fold((false, f64::INFINITY), |(r, m), p| (r || p > 0.0, m.min(p)));
        if reaches {
            floor = floor.max(min);
        }
    }
    Ok(floor)
}

/// Largest one-step probability of entering `target` under any demonstrated
/// state-action pair.
pub fn max_demonstrated_mass(mdp: &Mdp, demos: &DemonstrationSet, target: usize) -> f64 {
    demos
        .iter()
        .flat_map(|traj| traj.steps())
        .map(|(x, a, _)| mdp.prob(x, a, target))
        .fold(0.0, f64::max)
}

/// Tightest threshold for `target` that keeps every demonstration feasible
/// and leaves no precursor state without an action.
pub fn select_risk_level(mdp: &Mdp, demos: &DemonstrationSet, target: usize) -> Result<f64> {
    let floor = precursor_floor(mdp, target)?;
    Ok(max_demonstrated_mass(mdp, demos, target).max(floor))
}

/// First `(trajectory, t)` whose demonstrated action is infeasible under `c`.
pub fn first_excluded_step(
    mdp: &Mdp,
    demos: &DemonstrationSet,
    c: &ConstraintSet,
) -> Option<(usize, usize)> {
    demos.iter().enumerate().find_map(|(i, traj)| {
        traj.steps()
            .position(|(x, a, _)| !phi_indicator(mdp, c, x, a))
            .map(|t| (i, t))
    })
}
