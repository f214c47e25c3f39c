//! Partition-mass ratios for a batch of candidate constraints, computed in the
//! same backward pass as the base soft backup.
//!
//! For a candidate `C+` tightening the base `C0`, `F_t(x) = exp(V+_t(x) - V0_t(x))`
//! obeys
//!
//! ```text
//! F_t(x) = sum_{a in W_{C+}(x)} P_{C0}(a|x) * exp( sum_x' S(x,a,x') log F_{t+1}(x') )
//! ```
//!
//! with `F_T = 1`, so only base quantities and the previous ratio slice are
//! needed. This module tracks `delta = log F`.

use crate::constraints::{feasibility_mask, Candidate, ConstraintSet, PSI_SLACK};
use crate::error::{Error, Result};
use crate::mdp::{check_state, Mdp};
use crate::soft_bellman::{backup_step, empty_backup, LogSumExp, SoftBackup};

/// `delta_t(x) = log F_t(x)` for one candidate, time-major `(T+1) * |X|`.
///
/// Rows where the base itself has no feasible continuation hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FTable {
    pub candidate_id: usize,
    num_states: usize,
    horizon: usize,
    delta: Vec<f64>,
}

impl FTable {
    #[inline]
    pub fn delta(&self, t: usize, x: usize) -> f64 {
        self.delta[t * self.num_states + x]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn values(&self) -> &[f64] {
        &self.delta
    }

    /// `log F_0(x0)`; `-inf` means no feasible behaviour survives from `x0`.
    pub fn at_start(&self, x0: usize) -> f64 {
        self.delta(0, x0)
    }
}

pub fn f_at_start(table: &FTable, x0: usize) -> Result<f64> {
    check_state(x0, table.num_states)?;
    Ok(table.at_start(x0))
}

#[derive(Debug, Clone)]
pub struct CombinedBackup {
    pub base: SoftBackup,
    pub tables: Vec<FTable>,
}

/// Which candidates a state-action pair violates, beyond the base constraints.
struct CandidateIndex {
    by_state: Vec<Vec<(usize, f64)>>,
    by_action: Vec<Vec<usize>>,
}

impl CandidateIndex {
    fn new(mdp: &Mdp, candidates: &[Candidate]) -> Self {
        let mut by_state = vec![Vec::new(); mdp.num_states()];
        let mut by_action = vec![Vec::new(); mdp.num_actions()];
        for (k, c) in candidates.iter().enumerate() {
            match *c {
                Candidate::State { state, psi } => by_state[state].push((k, psi)),
                Candidate::Action { action } => by_action[action].push(k),
            }
        }
        Self {
            by_state,
            by_action,
        }
    }

    fn mark_blocked(&self, row: &[(usize, f64)], a: usize, blocked: &mut [bool]) {
        blocked.fill(false);
        for &k in &self.by_action[a] {
            blocked[k] = true;
        }
        for &(y, p) in row {
            for &(k, psi) in &self.by_state[y] {
                if p > psi + PSI_SLACK {
                    blocked[k] = true;
                }
            }
        }
    }
}

/// Base soft backup plus one [`FTable`] per candidate, in a single sweep.
///
/// Fails with [`Error::NotAnAugmentation`] if a candidate does not strictly
/// tighten `base`.
pub fn combined_backup(
    mdp: &Mdp,
    base: &ConstraintSet,
    candidates: &[Candidate],
) -> Result<CombinedBackup> {
    base.check(mdp)?;
    for (index, c) in candidates.iter().enumerate() {
        if !c.augments(mdp, base) {
            return Err(Error::NotAnAugmentation { index });
        }
    }
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let k = candidates.len();
    let index = CandidateIndex::new(mdp, candidates);
    let mut backup = empty_backup(mdp, feasibility_mask(mdp, base));

    // delta[(t * n + x) * k + j]; terminal slice stays 0
    let mut delta = vec![0.0; (horizon + 1) * n * k];
    let mut blocked = vec![false; k];
    let mut touched = vec![false; k];
    let mut lse = vec![LogSumExp::EMPTY; k];
    let mut expect = vec![0.0; k];

    for t in (0..horizon).rev() {
        backup_step(mdp, &mut backup, t);
        let (head, tail) = delta.split_at_mut((t + 1) * n * k);
        let next = &tail[..n * k];
        let now = &mut head[t * n * k..];
        for x in 0..n {
            let v0 = backup.v(t, x);
            let out = &mut now[x * k..(x + 1) * k];
            if v0 == f64::NEG_INFINITY {
                out.fill(0.0);
                continue;
            }
            lse.fill(LogSumExp::EMPTY);
            touched.fill(false);
            for a in 0..na {
                if !backup.is_feasible(x, a) {
                    continue;
                }
                let log_p = backup.q(t, x, a) - v0;
                let row = mdp.row(x, a);
                index.mark_blocked(row, a, &mut blocked);
                expect.fill(0.0);
                for &(y, p) in row {
                    let d = &next[y * k..(y + 1) * k];
                    for j in 0..k {
                        expect[j] += p * d[j];
                    }
                }
                for j in 0..k {
                    if blocked[j] {
                        touched[j] = true;
                    } else {
                        if expect[j] != 0.0 {
                            touched[j] = true;
                        }
                        lse[j].push(log_p + expect[j]);
                    }
                }
            }
            for j in 0..k {
                // untouched means the candidate changes nothing below (t, x)
                out[j] = if touched[j] { lse[j].value() } else { 0.0 };
            }
        }
    }

    let tables = (0..k)
        .map(|j| FTable {
            candidate_id: j,
            num_states: n,
            horizon,
            delta: (0..=horizon)
                .flat_map(|t| (0..n).map(move |x| (t, x)))
                .map(|(t, x)| delta[(t * n + x) * k + j])
                .collect(),
        })
        .collect();
    Ok(CombinedBackup {
        base: backup,
        tables,
    })
}
