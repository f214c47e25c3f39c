//! Brute-force reference computations.
//!
//! Nothing here calls into `soft_bellman` or `f_ratio`. The soft values are
//! recomputed in probability space with one rescaling constant per time step,
//! and feasibility is re-derived from the dense kernel. Only meant for small
//! instances.

use rand::Rng;

use crate::constraints::{Candidate, ConstraintSet};
use crate::error::{Error, Result};
use crate::mdp::{check_state, Mdp, MdpBuilder};

const SLACK: f64 = 1e-12;

fn admissible(mdp: &Mdp, c: &ConstraintSet, x: usize, a: usize) -> bool {
    if c.forbidden_actions.contains(&a) {
        return false;
    }
    (0..mdp.num_states()).all(|y| mdp.prob(x, a, y) <= c.psi[y] + SLACK)
}

/// `log sum_paths exp(R(path))` over every feasible action sequence from
/// `x0`, for a deterministic kernel.
pub fn enumerate_paths_value(mdp: &Mdp, c: &ConstraintSet, x0: usize) -> Result<f64> {
    check_state(x0, mdp.num_states())?;
    c.check(mdp)?;
    let n = mdp.num_states();
    let mut next = vec![0usize; n * mdp.num_actions()];
    for x in 0..n {
        for a in 0..mdp.num_actions() {
            let row = mdp.successors(x, a)?;
            if row.len() != 1 || row[0].1 != 1.0 {
                return Err(Error::NotDeterministic {
                    state: x,
                    action: a,
                });
            }
            next[x * mdp.num_actions() + a] = row[0].0;
        }
    }
    let mut totals = Vec::new();
    walk(mdp, c, &next, x0, 0, 0.0, &mut totals);
    let Some(max) = totals.iter().cloned().reduce(f64::max) else {
        return Ok(f64::NEG_INFINITY);
    };
    let scaled: f64 = totals.iter().map(|r| (r - max).exp()).sum();
    Ok(max + scaled.ln())
}

fn walk(
    mdp: &Mdp,
    c: &ConstraintSet,
    next: &[usize],
    x: usize,
    t: usize,
    reward: f64,
    out: &mut Vec<f64>,
) {
    if t == mdp.horizon() {
        out.push(reward + mdp.terminal(x));
        return;
    }
    for a in 0..mdp.num_actions() {
        if admissible(mdp, c, x, a) {
            let y = next[x * mdp.num_actions() + a];
            walk(mdp, c, next, y, t + 1, reward + mdp.reward(x, a), out);
        }
    }
}

/// Soft values `V_t(x)`, time-major `(T+1) * |X|`, computed as scaled
/// partition sums `Z_t(x) = exp(s_t) z_t(x)`.
pub fn probability_space_values(mdp: &Mdp, c: &ConstraintSet) -> Result<Vec<f64>> {
    c.check(mdp)?;
    let (n, na, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut scale = vec![0.0; horizon + 1];
    let mut z = vec![0.0; (horizon + 1) * n];

    let terminal_max = (0..n)
        .map(|x| mdp.terminal(x))
        .fold(f64::NEG_INFINITY, f64::max);
    scale[horizon] = terminal_max;
    for x in 0..n {
        z[horizon * n + x] = (mdp.terminal(x) - terminal_max).exp();
    }

    let mut q = vec![f64::NEG_INFINITY; n * na];
    for t in (0..horizon).rev() {
        for x in 0..n {
            for a in 0..na {
                let mut e = 0.0;
                for y in 0..n {
                    let p = mdp.prob(x, a, y);
                    if p > 0.0 {
                        let zy = z[(t + 1) * n + y];
                        e += p * (scale[t + 1] + zy.ln());
                    }
                }
                q[x * na + a] = mdp.reward(x, a) + e;
            }
        }
        let mut s = f64::NEG_INFINITY;
        for x in 0..n {
            for a in 0..na {
                if admissible(mdp, c, x, a) && q[x * na + a] > s {
                    s = q[x * na + a];
                }
            }
        }
        if s == f64::NEG_INFINITY {
            s = 0.0;
        }
        scale[t] = s;
        for x in 0..n {
            let mut sum = 0.0;
            for a in 0..na {
                if admissible(mdp, c, x, a) {
                    sum += (q[x * na + a] - s).exp();
                }
            }
            z[t * n + x] = sum;
        }
    }

    let mut v = vec![0.0; (horizon + 1) * n];
    for t in 0..=horizon {
        for x in 0..n {
            v[t * n + x] = scale[t] + z[t * n + x].ln();
        }
    }
    Ok(v)
}

/// Reference `log F_t(x) = V+_t(x) - V0_t(x)` from two full backups,
/// time-major `(T+1) * |X|`. `NaN` where the base value is `-inf`.
pub fn two_backup_f(mdp: &Mdp, base: &ConstraintSet, candidate: &Candidate) -> Result<Vec<f64>> {
    if !candidate.augments(mdp, base) {
        return Err(Error::NotAnAugmentation { index: 0 });
    }
    let v0 = probability_space_values(mdp, base)?;
    let vp = probability_space_values(mdp, &base.with(candidate))?;
    Ok(v0
        .iter()
        .zip(&vp)
        .map(|(&b, &p)| {
            if b == f64::NEG_INFINITY {
                f64::NAN
            } else {
                p - b
            }
        })
        .collect())
}

/// Random MDP with `2..=max_states` states, `1..=max_actions` actions and
/// horizon `1..=max_horizon`. Stochastic rows have up to three successors.
pub fn random_mdp<R: Rng>(
    rng: &mut R,
    max_states: usize,
    max_actions: usize,
    max_horizon: usize,
    deterministic: bool,
) -> Mdp {
    let n = rng.gen_range(2..=max_states.max(2));
    let na = rng.gen_range(1..=max_actions.max(1));
    let horizon = rng.gen_range(1..=max_horizon.max(1));
    let mut b = MdpBuilder::new(n, na, horizon);
    for x in 0..n {
        for a in 0..na {
            if deterministic {
                b.add_transition(x, a, rng.gen_range(0..n), 1.0).unwrap();
            } else {
                let support = rng.gen_range(1..=n.min(3));
                let mut targets: Vec<usize> = (0..n).collect();
                for i in 0..support {
                    let j = rng.gen_range(i..n);
                    targets.swap(i, j);
                }
                let weights: Vec<f64> = (0..support).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = weights.iter().sum();
                for (y, w) in targets[..support].iter().zip(&weights) {
                    b.add_transition(x, a, *y, w / total).unwrap();
                }
            }
            b.running_reward(x, a, rng.gen_range(-2.0..1.0)).unwrap();
        }
        b.terminal_reward(x, rng.gen_range(-1.0..1.0)).unwrap();
    }
    b.build().unwrap()
}

/// Random base constraints: a few thresholds and possibly forbidden actions,
/// never forbidding every action.
pub fn random_base<R: Rng>(rng: &mut R, mdp: &Mdp) -> ConstraintSet {
    let mut c = ConstraintSet::unconstrained(mdp.num_states());
    for psi in c.psi.iter_mut() {
        if rng.gen_bool(0.25) {
            *psi = rng.gen_range(0.3..1.0);
        }
    }
    for a in 0..mdp.num_actions() {
        if c.forbidden_actions.len() + 1 < mdp.num_actions() && rng.gen_bool(0.15) {
            c.forbidden_actions.insert(a);
        }
    }
    c
}

/// A random single-step tightening of `base`.
pub fn random_candidate<R: Rng>(rng: &mut R, mdp: &Mdp, base: &ConstraintSet) -> Candidate {
    let free: Vec<usize> = (0..mdp.num_actions())
        .filter(|a| !base.forbidden_actions.contains(a))
        .collect();
    if !free.is_empty() && rng.gen_bool(0.4) {
        return Candidate::Action {
            action: free[rng.gen_range(0..free.len())],
        };
    }
    let state = rng.gen_range(0..mdp.num_states());
    let psi = if rng.gen_bool(0.2) {
        0.0
    } else {
        base.psi[state] * rng.gen_range(0.0..1.0)
    };
    Candidate::State { state, psi }
}
