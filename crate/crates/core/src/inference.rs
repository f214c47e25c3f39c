//! Greedy maximum-likelihood constraint selection.
//!
//! Each iteration enumerates single-step tightenings of the current
//! constraint set, scores all of them with one [`combined_backup`], and
//! folds in the candidate with the lowest score
//! `sum_demos log F_0(x~_0)`, i.e. the largest likelihood gain.

use serde::{Deserialize, Serialize};

use crate::constraints::{
    first_excluded_step, max_demonstrated_mass, select_risk_level, Candidate, ConstraintSet,
    PSI_SLACK,
};
use crate::error::{Error, Result};
use crate::f_ratio::{combined_backup, FTable};
use crate::mdp::{DemonstrationSet, Mdp};
use crate::soft_bellman::{
    expected_next, policy_from_backup, trajectory_log_likelihood, SoftBackup,
};

/// How a state candidate's threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "psi", rename_all = "snake_case")]
pub enum RiskMode {
    /// Tightest level that keeps every demonstration and precursor feasible.
    DataDriven,
    /// The same threshold for every state candidate.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub max_iterations: usize,
    /// Minimum mean per-demonstration log-likelihood gain (nats) to keep going.
    pub stop_gain: f64,
    pub risk: RiskMode,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            stop_gain: 0.05,
            risk: RiskMode::DataDriven,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    /// Best gain fell below `stop_gain`.
    Converged,
    /// No admissible candidate left.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    /// `sum_demos log F_0(x~_0)`; `-inf` is written as `null`.
    #[serde(with = "neg_inf_as_null")]
    pub score: f64,
    /// Mean of `log F_0(x~_0)` over demonstrations.
    #[serde(with = "neg_inf_as_null")]
    pub log_f_at_start: f64,
    /// False when the candidate drives some demonstration to probability zero.
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Exact `sum_demos sum_t log P(a~_t | x~_t)` under the iteration's base.
    #[serde(with = "neg_inf_as_null")]
    pub base_log_likelihood: f64,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: usize,
    pub candidate: Candidate,
    pub score: f64,
    /// `-score / |D|`.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub selected: Vec<Selection>,
    pub final_constraints: ConstraintSet,
    pub trace: Vec<IterationTrace>,
    pub status: StopReason,
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Every single-step tightening of `current` that no demonstration rules out.
///
/// State candidates come first in index order, then action candidates for
/// actions never seen in any demonstration.
pub fn generate_candidates(
    mdp: &Mdp,
    demos: &DemonstrationSet,
    current: &ConstraintSet,
    risk: RiskMode,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for state in 0..mdp.num_states() {
        let psi = match risk {
            RiskMode::DataDriven => select_risk_level(mdp, demos, state)?,
            RiskMode::Fixed(psi) => {
                if max_demonstrated_mass(mdp, demos, state) > psi + PSI_SLACK {
                    continue;
                }
                psi
            }
        };
        if psi < current.psi[state] {
            out.push(Candidate::State { state, psi });
        }
    }
    let mut demonstrated = vec![false; mdp.num_actions()];
    for traj in demos.iter() {
        for &a in &traj.actions {
            demonstrated[a] = true;
        }
    }
    for (action, seen) in demonstrated.into_iter().enumerate() {
        if !seen && !current.forbidden_actions.contains(&action) {
            out.push(Candidate::Action { action });
        }
    }
    Ok(out)
}

/// Extra feasibility condition a candidate adds on top of its base.
fn candidate_admits(mdp: &Mdp, cand: &Candidate, x: usize, a: usize) -> bool {
    match *cand {
        Candidate::State { state, psi } => mdp.prob(x, a, state) <= psi + PSI_SLACK,
        Candidate::Action { action } => a != action,
    }
}

/// Whether every demonstrated step keeps positive probability under the
/// candidate: the action stays feasible and no successor is a dead end.
fn keeps_demos(mdp: &Mdp, demos: &DemonstrationSet, cand: &Candidate, table: &FTable) -> bool {
    let n = mdp.num_states();
    demos.iter().all(|traj| {
        traj.steps().enumerate().all(|(t, (x, a, _))| {
            let next = &table.values()[(t + 1) * n..(t + 2) * n];
            candidate_admits(mdp, cand, x, a) && expected_next(mdp.row(x, a), next).is_finite()
        })
    })
}

/// Checks that every demonstration has positive likelihood under `base`.
fn check_demos(
    mdp: &Mdp,
    demos: &DemonstrationSet,
    c: &ConstraintSet,
    backup: &SoftBackup,
) -> Result<()> {
    if let Some((index, t)) = first_excluded_step(mdp, demos, c) {
        return Err(Error::InfeasibleDemonstration { index, t });
    }
    for (index, traj) in demos.iter().enumerate() {
        for (t, (x, a, _)) in traj.steps().enumerate() {
            if !backup.q(t, x, a).is_finite() {
                return Err(Error::InfeasibleDemonstration { index, t });
            }
        }
    }
    Ok(())
}

fn demo_log_likelihood(mdp: &Mdp, demos: &DemonstrationSet, backup: &SoftBackup) -> Result<f64> {
    let policy = policy_from_backup(mdp, backup);
    demos
        .iter()
        .map(|traj| trajectory_log_likelihood(&policy, mdp, traj).map(|l| l.action))
        .sum()
}

pub fn greedy_infer(
    mdp: &Mdp,
    demos: &DemonstrationSet,
    base: &ConstraintSet,
    config: &InferenceConfig,
) -> Result<InferenceResult> {
    demos.validate(mdp)?;
    base.check(mdp)?;
    if let Some((index, t)) = first_excluded_step(mdp, demos, base) {
        return Err(Error::InfeasibleDemonstration { index, t });
    }
    let mut current = base.clone();
    let mut selected = Vec::new();
    let mut trace = Vec::new();
    let mut status = StopReason::MaxIterations;
    let demo_count = demos.len() as f64;

    for iteration in 0..config.max_iterations {
        let candidates = generate_candidates(mdp, demos, &current, config.risk)?;
        let combined = combined_backup(mdp, &current, &candidates)?;
        check_demos(mdp, demos, &current, &combined.base)?;

        let scored: Vec<ScoredCandidate> = candidates
            .iter()
            .zip(&combined.tables)
            .map(|(cand, table)| {
                let score: f64 = demos.iter().map(|d| table.at_start(d.states[0])).sum();
                ScoredCandidate {
                    candidate: *cand,
                    score,
                    log_f_at_start: if demos.is_empty() {
                        0.0
                    } else {
                        score / demo_count
                    },
                    admissible: keeps_demos(mdp, demos, cand, table),
                }
            })
            .collect();

        let best = scored
            .iter()
            .filter(|s| s.admissible)
            .min_by(|a, b| {
                a.score
                    .total_cmp(&b.score)
                    .then(a.candidate.tie_key().cmp(&b.candidate.tie_key()))
            })
            .cloned();

        trace.push(IterationTrace {
            iteration,
            base_log_likelihood: demo_log_likelihood(mdp, demos, &combined.base)?,
            candidates: scored,
        });

        let Some(best) = best else {
            status = StopReason::Exhausted;
            break;
        };
        let gain = if demos.is_empty() {
            0.0
        } else {
            -best.score / demo_count
        };
        if best.score >= 0.0 || gain < config.stop_gain {
            status = StopReason::Converged;
            break;
        }
        current = current.with(&best.candidate);
        if let Some((index, t)) = first_excluded_step(mdp, demos, &current) {
            return Err(Error::InfeasibleDemonstration { index, t });
        }
        selected.push(Selection {
            iteration,
            candidate: best.candidate,
            score: best.score,
            gain,
        });
    }

    Ok(InferenceResult {
        selected,
        final_constraints: current,
        trace,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{MdpBuilder, Trajectory};

    /// Line of three states; action 0 stays, action 1 moves right, action 2
    /// jumps straight to state 2. Demonstrations only ever stay or step.
    fn line() -> (Mdp, DemonstrationSet) {
        let mut b = MdpBuilder::new(3, 3, 2);
        for x in 0..3 {
            b.add_transition(x, 0, x, 1.0).unwrap();
            b.add_transition(x, 1, (x + 1).min(2), 1.0).unwrap();
            b.add_transition(x, 2, 2, 1.0).unwrap();
            for a in 0..3 {
                b.running_reward(x, a, -0.1 * a as f64).unwrap();
            }
        }
        let mdp = b.build().unwrap();
        let demos = DemonstrationSet::new(
            2,
            vec![
                Trajectory {
                    states: vec![0, 1, 2],
                    actions: vec![1, 1],
                },
                Trajectory {
                    states: vec![0, 0, 1],
                    actions: vec![0, 1],
                },
            ],
        );
        (mdp, demos)
    }

    #[test]
    fn empty_demos_make_everything_a_candidate() {
        let (mdp, _) = line();
        let empty = DemonstrationSet::new(2, vec![]);
        let c = ConstraintSet::unconstrained(3);
        let cands = generate_candidates(&mdp, &empty, &c, RiskMode::DataDriven).unwrap();
        let states = cands
            .iter()
            .filter(|c| matches!(c, Candidate::State { .. }))
            .count();
        let actions = cands
            .iter()
            .filter(|c| matches!(c, Candidate::Action { .. }))
            .count();
        // state 2 absorbs every action, so its floor is 1 and it cannot be tightened
        assert_eq!(states, 2);
        assert_eq!(actions, 3);
    }

    #[test]
    fn demonstrated_actions_are_not_candidates() {
        let (mdp, demos) = line();
        let c = ConstraintSet::unconstrained(3);
        let cands = generate_candidates(&mdp, &demos, &c, RiskMode::DataDriven).unwrap();
        let actions: Vec<_> = cands
            .iter()
            .filter_map(|c| match c {
                Candidate::Action { action } => Some(*action),
                _ => None,
            })
            .collect();
        assert_eq!(actions, vec![2]);
    }

    #[test]
    fn fixed_mode_filters_excluding_candidates() {
        let (mdp, demos) = line();
        let c = ConstraintSet::unconstrained(3);
        let cands = generate_candidates(&mdp, &demos, &c, RiskMode::Fixed(0.25)).unwrap();
        // every state is entered by some demonstration with probability 1
        assert!(cands.iter().all(|c| matches!(c, Candidate::Action { .. })));
    }

    #[test]
    fn zero_iterations_returns_base() {
        let (mdp, demos) = line();
        let base = ConstraintSet::unconstrained(3);
        let cfg = InferenceConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let r = greedy_infer(&mdp, &demos, &base, &cfg).unwrap();
        assert_eq!(r.final_constraints, base);
        assert!(r.trace.is_empty());
        assert!(r.selected.is_empty());
        assert_eq!(r.status, StopReason::MaxIterations);
    }

    #[test]
    fn single_candidate_selected_iff_negative() {
        let (mdp, demos) = line();
        let cfg = InferenceConfig {
            max_iterations: 1,
            stop_gain: 0.0,
            risk: RiskMode::Fixed(0.25),
        };
        let base = ConstraintSet::unconstrained(3);
        let r = greedy_infer(&mdp, &demos, &base, &cfg).unwrap();
        assert_eq!(r.trace[0].candidates.len(), 1);
        let only = &r.trace[0].candidates[0];
        assert!(only.score < 0.0);
        assert_eq!(r.selected.len(), 1);
        assert_eq!(r.selected[0].candidate, Candidate::Action { action: 2 });

        // with action 2 already forbidden nothing is left
        let mut base = ConstraintSet::unconstrained(3);
        base.forbidden_actions.insert(2);
        let r = greedy_infer(&mdp, &demos, &base, &cfg).unwrap();
        assert_eq!(r.status, StopReason::Exhausted);
        assert!(r.selected.is_empty());
    }

    #[test]
    fn zero_score_candidate_is_not_selected() {
        let mut b = MdpBuilder::new(2, 2, 1);
        b.add_transition(0, 0, 0, 1.0).unwrap();
        b.add_transition(0, 1, 1, 1.0).unwrap();
        b.add_transition(1, 0, 1, 1.0).unwrap();
        b.add_transition(1, 1, 1, 1.0).unwrap();
        let mdp = b.build().unwrap();
        let demos = DemonstrationSet::new(
            1,
            vec![Trajectory {
                states: vec![0, 0],
                actions: vec![0],
            }],
        );
        let mut base = ConstraintSet::unconstrained(2);
        base.psi[1] = 0.0;
        let cfg = InferenceConfig {
            max_iterations: 3,
            stop_gain: 0.0,
            risk: RiskMode::DataDriven,
        };
        let r = greedy_infer(&mdp, &demos, &base, &cfg).unwrap();
        // action 1 is already infeasible at state 0, so forbidding it scores 0
        assert_eq!(r.trace[0].candidates.len(), 1);
        assert_eq!(r.trace[0].candidates[0].score, 0.0);
        assert!(r.selected.is_empty());
        assert_eq!(r.status, StopReason::Converged);
    }

    #[test]
    fn infeasible_demo_rejected() {
        let (mdp, demos) = line();
        let mut base = ConstraintSet::unconstrained(3);
        base.forbidden_actions.insert(1);
        let r = greedy_infer(&mdp, &demos, &base, &InferenceConfig::default());
        assert!(matches!(r, Err(Error::InfeasibleDemonstration { .. })));
    }

    #[test]
    fn result_round_trips_through_json() {
        let (mdp, demos) = line();
        let r = greedy_infer(
            &mdp,
            &demos,
            &ConstraintSet::unconstrained(3),
            &InferenceConfig::default(),
        )
        .unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: InferenceResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
