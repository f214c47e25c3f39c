//! Seeded property suite comparing the production backups against the
//! brute-force references in [`crate::oracle`].
//!
//! Each check returns raw measurements; pass/fail thresholds are applied by
//! the caller ([`run_suite`] uses the constants below).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::constraints::{phi_indicator, Candidate, ConstraintSet};
use crate::error::Result;
use crate::f_ratio::{combined_backup, CombinedBackup};
use crate::mdp::Mdp;
use crate::oracle;
use crate::soft_bellman::{policy_from_backup, soft_backup};

pub const RATIO_TOLERANCE: f64 = 1e-9;
pub const VALUE_REL_TOLERANCE: f64 = 1e-9;
pub const ROW_TOLERANCE: f64 = 1e-9;
pub const MONOTONE_SLACK: f64 = 1e-12;

pub const MAX_STATES: usize = 6;
pub const MAX_ACTIONS: usize = 3;
pub const MAX_HORIZON: usize = 4;
pub const CANDIDATES_PER_INSTANCE: usize = 3;

/// Backup under test. Swappable so the suite can be pointed at a faulty
/// implementation.
pub type CombinedFn<'a> = dyn Fn(&Mdp, &ConstraintSet, &[Candidate]) -> Result<CombinedBackup> + 'a;

pub fn production(mdp: &Mdp, base: &ConstraintSet, cands: &[Candidate]) -> Result<CombinedBackup> {
    combined_backup(mdp, base, cands)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Instances exercised.
    pub instances: usize,
    /// Scalar comparisons made.
    pub comparisons: usize,
    /// Worst deviation observed (meaning depends on the check).
    pub worst: f64,
    /// Discrete failures such as finite-vs-infinite mismatches.
    pub mismatches: usize,
}

impl Measurement {
    fn new() -> Self {
        Self {
            instances: 0,
            comparisons: 0,
            worst: 0.0,
            mismatches: 0,
        }
    }

    fn observe(&mut self, deviation: f64) {
        self.comparisons += 1;
        if deviation > self.worst || deviation.is_nan() {
            self.worst = deviation;
        }
    }

    pub fn within(&self, tolerance: f64) -> bool {
        self.mismatches == 0 && self.worst <= tolerance
    }
}

fn stochastic_instance(seed: u64) -> (Mdp, ConstraintSet, Vec<Candidate>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = oracle::random_mdp(&mut rng, MAX_STATES, MAX_ACTIONS, MAX_HORIZON, false);
    let base = oracle::random_base(&mut rng, &mdp);
    let cands = (0..CANDIDATES_PER_INSTANCE)
        .map(|_| oracle::random_candidate(&mut rng, &mdp, &base))
        .collect();
    (mdp, base, cands)
}

fn deterministic_instance(seed: u64) -> (Mdp, ConstraintSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD5A6_1E0F);
    let mdp = oracle::random_mdp(&mut rng, MAX_STATES, MAX_ACTIONS, MAX_HORIZON, true);
    let base = oracle::random_base(&mut rng, &mdp);
    (mdp, base)
}

/// Worst `|delta - (V+ - V0)|` over every `(t, x)` with a finite reference.
pub fn ratio_equivalence(seeds: u64, backup: &CombinedFn) -> Result<Measurement> {
    let mut m = Measurement::new();
    for seed in 0..seeds {
        let (mdp, base, cands) = stochastic_instance(seed);
        let combined = backup(&mdp, &base, &cands)?;
        m.instances += 1;
        for (cand, table) in cands.iter().zip(&combined.tables) {
            let reference = oracle::two_backup_f(&mdp, &base, cand)?;
            for (&want, &got) in reference.iter().zip(table.values()) {
                if want.is_nan() {
                    continue;
                }
                if want.is_finite() && got.is_finite() {
                    m.observe((got - want).abs());
                } else if want != got {
                    m.mismatches += 1;
                }
            }
        }
    }
    Ok(m)
}

/// Worst relative gap between the soft value and exhaustive path enumeration
/// on deterministic instances. Relative error is `|a - b| / max(1, |b|)`.
pub fn deterministic_reduction(seeds: u64) -> Result<Measurement> {
    let mut m = Measurement::new();
    for seed in 0..seeds {
        let (mdp, base) = deterministic_instance(seed);
        let backup = soft_backup(&mdp, &base)?;
        m.instances += 1;
        for x0 in 0..mdp.num_states() {
            let want = oracle::enumerate_paths_value(&mdp, &base, x0)?;
            let got = backup.v(0, x0);
            if want.is_finite() && got.is_finite() {
                m.observe((got - want).abs() / want.abs().max(1.0));
            } else if want != got {
                m.mismatches += 1;
            }
        }
    }
    Ok(m)
}

fn check_policy(mdp: &Mdp, c: &ConstraintSet, m: &mut Measurement) -> Result<()> {
    let backup = soft_backup(mdp, c)?;
    let policy = policy_from_backup(mdp, &backup);
    for t in 0..mdp.horizon() {
        for x in 0..mdp.num_states() {
            let row = policy.row(t, x);
            for (a, &p) in row.iter().enumerate() {
                if p != 0.0 && !phi_indicator(mdp, c, x, a) {
                    m.mismatches += 1;
                }
            }
            if backup.v(t, x).is_finite() {
                m.observe((row.iter().sum::<f64>() - 1.0).abs());
            } else if !policy.is_dead_end(t, x) {
                m.mismatches += 1;
            }
        }
    }
    Ok(())
}

/// Row-sum error and infeasible-mass count over every policy built from the
/// instances of [`ratio_equivalence`] and [`deterministic_reduction`].
pub fn policy_normalization(
    stochastic_seeds: u64,
    deterministic_seeds: u64,
) -> Result<Measurement> {
    let mut m = Measurement::new();
    for seed in 0..stochastic_seeds {
        let (mdp, base, cands) = stochastic_instance(seed);
        check_policy(&mdp, &base, &mut m)?;
        for c in &cands {
            check_policy(&mdp, &base.with(c), &mut m)?;
        }
        m.instances += 1;
    }
    for seed in 0..deterministic_seeds {
        let (mdp, base) = deterministic_instance(seed);
        check_policy(&mdp, &base, &mut m)?;
        m.instances += 1;
    }
    Ok(m)
}

/// Thresholds swept at one state, in strictly decreasing order below `top`.
pub fn psi_sweep(mdp: &Mdp, state: usize, top: f64) -> Vec<f64> {
    let mut values: Vec<f64> = (1..=20).map(|k| top * (1.0 - k as f64 / 20.0)).collect();
    for x in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let p = mdp.prob(x, a, state);
            if p > 0.0 && p < top {
                values.push(p);
                values.push(p * (1.0 - 1e-9));
            }
        }
    }
    values.sort_by(|a, b| b.total_cmp(a));
    values.dedup();
    values
}

/// Largest increase of `delta_0(x)` as `psi` at a fixed state decreases,
/// over every start state with a finite base value.
pub fn psi_monotonicity(seeds: u64, backup: &CombinedFn) -> Result<Measurement> {
    let mut m = Measurement::new();
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001);
        let mdp = oracle::random_mdp(&mut rng, MAX_STATES, MAX_ACTIONS, MAX_HORIZON, false);
        let mut base = oracle::random_base(&mut rng, &mdp);
        let state = seed as usize % mdp.num_states();
        base.psi[state] = 1.0;
        let sweep = psi_sweep(&mdp, state, 1.0);
        let cands: Vec<Candidate> = sweep
            .iter()
            .map(|&psi| Candidate::State { state, psi })
            .collect();
        let combined = backup(&mdp, &base, &cands)?;
        m.instances += 1;
        for x0 in 0..mdp.num_states() {
            if !combined.base.v(0, x0).is_finite() {
                continue;
            }
            let mut previous = 0.0;
            for table in &combined.tables {
                let d = table.at_start(x0);
                m.observe((d - previous).max(0.0));
                if d.is_nan() {
                    m.mismatches += 1;
                }
                previous = d;
            }
        }
    }
    Ok(m)
}

/// Largest `delta` anywhere, and the count of non-zero terminal entries,
/// over the ratio-equivalence and monotonicity instances.
pub fn ratio_range(seeds: u64, backup: &CombinedFn) -> Result<Measurement> {
    let mut m = Measurement::new();
    m.worst = f64::NEG_INFINITY;
    let scan = |combined: &CombinedBackup, mdp: &Mdp, m: &mut Measurement| {
        let n = mdp.num_states();
        let terminal = mdp.horizon() * n;
        for table in &combined.tables {
            for (i, &d) in table.values().iter().enumerate() {
                if d.is_nan() {
                    m.mismatches += 1;
                }
                m.observe(d);
                if i >= terminal && d != 0.0 {
                    m.mismatches += 1;
                }
            }
        }
        m.instances += 1;
    };
    for seed in 0..seeds {
        let (mdp, base, cands) = stochastic_instance(seed);
        scan(&backup(&mdp, &base, &cands)?, &mdp, &mut m);

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0001);
        let mdp = oracle::random_mdp(&mut rng, MAX_STATES, MAX_ACTIONS, MAX_HORIZON, false);
        let mut base = oracle::random_base(&mut rng, &mdp);
        let state = seed as usize % mdp.num_states();
        base.psi[state] = 1.0;
        let cands: Vec<Candidate> = psi_sweep(&mdp, state, 1.0)
            .into_iter()
            .map(|psi| Candidate::State { state, psi })
            .collect();
        scan(&backup(&mdp, &base, &cands)?, &mdp, &mut m);
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: bool,
    pub measurement: Measurement,
}

impl std::fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let m = &self.measurement;
        write!(
            f,
            "[{}] {:<28} instances={:<4} comparisons={:<6} worst={:.3e} mismatches={}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            m.instances,
            m.comparisons,
            m.worst,
            m.mismatches
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub stochastic_seeds: u64,
    pub deterministic_seeds: u64,
    pub monotonicity_seeds: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            stochastic_seeds: 100,
            deterministic_seeds: 50,
            monotonicity_seeds: 50,
        }
    }
}

pub fn run_suite(cfg: SuiteConfig, backup: &CombinedFn) -> Result<Vec<PropertyReport>> {
    let ratio = ratio_equivalence(cfg.stochastic_seeds, backup)?;
    let det = deterministic_reduction(cfg.deterministic_seeds)?;
    let policy = policy_normalization(cfg.stochastic_seeds, cfg.deterministic_seeds)?;
    let mono = psi_monotonicity(cfg.monotonicity_seeds, backup)?;
    let range = ratio_range(cfg.monotonicity_seeds, backup)?;
    Ok(vec![
        PropertyReport {
            name: "ratio equals two backups",
            passed: ratio.within(RATIO_TOLERANCE),
            measurement: ratio,
        },
        PropertyReport {
            name: "deterministic enumeration",
            passed: det.within(VALUE_REL_TOLERANCE),
            measurement: det,
        },
        PropertyReport {
            name: "policy rows normalized",
            passed: policy.within(ROW_TOLERANCE),
            measurement: policy,
        },
        PropertyReport {
            name: "ratio monotone in psi",
            passed: mono.within(MONOTONE_SLACK),
            measurement: mono,
        },
        PropertyReport {
            name: "ratio range",
            passed: range.within(MONOTONE_SLACK),
            measurement: range,
        },
    ])
}
