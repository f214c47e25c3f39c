//! Boltzmann-policy rollouts through the stochastic kernel.
//!
//! Trajectory `i` draws all of its randomness from ChaCha8 seeded with
//! `seed` on stream `i`. Each draw is a uniform `f64` in `[0, 1)` mapped
//! through the cumulative distribution in ascending index order: first the
//! action from `P(.|x_t)`, then the successor from `S(x_t, a_t, .)`. A
//! rollout that reaches a dead end is discarded and restarted on the same
//! stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::mdp::{check_state, DemonstrationSet, Mdp, SamplerMetadata, Trajectory};
use crate::soft_bellman::{policy_from_backup, soft_backup, Policy};

pub const GENERATOR: &str = "chacha8-stream-per-trajectory";

/// Restarts allowed per trajectory before giving up.
pub const MAX_ATTEMPTS: usize = 10_000;

fn draw<R: Rng>(rng: &mut R, items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, p) in items {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return last;
        }
    }
    last
}

fn rollout<R: Rng>(mdp: &Mdp, policy: &Policy, x0: usize, rng: &mut R) -> Option<Trajectory> {
    let horizon = mdp.horizon();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(x0);
    let mut x = x0;
    for t in 0..horizon {
        let a = draw(rng, policy.row(t, x).iter().copied().enumerate())?;
        x = draw(rng, mdp.row(x, a).iter().copied())?;
        actions.push(a);
        states.push(x);
    }
    Some(Trajectory { states, actions })
}

pub fn sample_demonstrations(
    mdp: &Mdp,
    c: &ConstraintSet,
    x0: usize,
    n: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    check_state(x0, mdp.num_states())?;
    let backup = soft_backup(mdp, c)?;
    let policy = policy_from_backup(mdp, &backup);
    let mut aborts = 0u64;
    let mut trajectories = Vec::with_capacity(n);
    for index in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut attempts = 0;
        let traj = loop {
            if let Some(traj) = rollout(mdp, &policy, x0, &mut rng) {
                break traj;
            }
            aborts += 1;
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::DeadEndLoop { index, attempts });
            }
        };
        trajectories.push(traj);
    }
    Ok(DemonstrationSet {
        horizon: mdp.horizon(),
        trajectories,
        metadata: Some(SamplerMetadata {
            seed,
            generator: GENERATOR.to_string(),
            aborts,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::phi_indicator;
    use crate::gridworld::{build_gridworld, ConstrainedCell, GridSpec};
    use crate::mdp::MdpBuilder;

    #[test]
    fn zero_demos() {
        let mut b = MdpBuilder::new(1, 1, 3);
        b.add_transition(0, 0, 0, 1.0).unwrap();
        let mdp = b.build().unwrap();
        let d = sample_demonstrations(&mdp, &ConstraintSet::unconstrained(1), 0, 0, 1).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn dominant_action_on_deterministic_chain() {
        let mut b = MdpBuilder::new(3, 2, 4);
        for x in 0..3 {
            b.add_transition(x, 0, (x + 1) % 3, 1.0).unwrap();
            b.add_transition(x, 1, x, 1.0).unwrap();
            b.running_reward(x, 1, -200.0).unwrap();
        }
        let mdp = b.build().unwrap();
        let d = sample_demonstrations(&mdp, &ConstraintSet::unconstrained(3), 0, 25, 9).unwrap();
        assert!(d.trajectories.iter().all(|t| *t == d.trajectories[0]));
        assert_eq!(d.trajectories[0].actions, vec![0; 4]);
    }

    #[test]
    fn samples_are_feasible_and_reproducible() {
        let spec = GridSpec {
            width: 5,
            height: 5,
            slip: 0.1,
            start: [0, 0],
            goal: [4, 4],
            horizon: 10,
            true_constraints: vec![ConstrainedCell {
                cell: [2, 2],
                psi: 0.25,
            }],
        };
        let g = build_gridworld(&spec).unwrap();
        let d = sample_demonstrations(&g.mdp, &g.ground_truth, g.start, 40, 7).unwrap();
        d.validate(&g.mdp).unwrap();
        for traj in d.iter() {
            for (x, a, _) in traj.steps() {
                assert!(phi_indicator(&g.mdp, &g.ground_truth, x, a));
            }
        }
        let again = sample_demonstrations(&g.mdp, &g.ground_truth, g.start, 40, 7).unwrap();
        assert_eq!(d, again);
        let other = sample_demonstrations(&g.mdp, &g.ground_truth, g.start, 40, 8).unwrap();
        assert_ne!(d, other);
        // streams are per trajectory, so a prefix is stable under larger n
        let fewer = sample_demonstrations(&g.mdp, &g.ground_truth, g.start, 10, 7).unwrap();
        assert_eq!(fewer.trajectories[..], d.trajectories[..10]);
    }

    #[test]
    fn dead_end_rollouts_are_resampled() {
        // action 1 from state 0 reaches state 1 (a dead end) with prob 0.5
        let mut b = MdpBuilder::new(3, 2, 2);
        b.add_transition(0, 0, 2, 1.0).unwrap();
        b.add_transition(0, 1, 1, 0.5).unwrap();
        b.add_transition(0, 1, 2, 0.5).unwrap();
        for a in 0..2 {
            b.add_transition(1, a, 0, 1.0).unwrap();
            b.add_transition(2, a, 2, 1.0).unwrap();
        }
        let mdp = b.build().unwrap();
        let mut c = ConstraintSet::unconstrained(3);
        c.psi[0] = 0.0;
        // state 1 must move to 0, which is excluded, so V_1(1) = -inf and
        // action 1 at state 0 carries Q = -inf: the policy never takes it
        let d = sample_demonstrations(&mdp, &c, 0, 20, 3).unwrap();
        assert_eq!(d.metadata.as_ref().unwrap().aborts, 0);
        assert!(d.iter().all(|t| t.actions[0] == 0));

        // starting inside the dead end can never succeed
        let err = sample_demonstrations(&mdp, &c, 1, 1, 3).unwrap_err();
        assert!(matches!(err, Error::DeadEndLoop { .. }));
    }
}
