//! Label-permutation inference under the exchangeability null.
//!
//! Monte Carlo replicates each get their own RNG seeded from
//! `(master_seed, replicate_index)`, so the tally is independent of how the
//! replicates are scheduled across threads. Exact mode enumerates every
//! assignment of the treatment labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Group, TrialDataset};
use crate::error::{Error, Result};

pub const DEFAULT_REPLICATES: usize = 10_000;
pub const DEFAULT_EXACT_CAP: u64 = 200_000;
pub const DEFAULT_SEED: u64 = 175;

/// Relative slack used when deciding whether a permuted statistic is at
/// least as extreme as the observed one, so that assignments reaching the
/// same value through a different summation order still count.
pub const EXTREME_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PermutationMode {
    MonteCarlo { replicates: usize },
    Exact,
}

/// Two-sided permutation plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub mode: PermutationMode,
    pub master_seed: u64,
    /// Largest number of assignments exact mode will enumerate.
    pub exact_cap: u64,
}

impl Default for PermutationPlan {
    fn default() -> Self {
        Self::monte_carlo(DEFAULT_REPLICATES, DEFAULT_SEED)
    }
}

impl PermutationPlan {
    pub fn monte_carlo(replicates: usize, master_seed: u64) -> Self {
        Self {
            mode: PermutationMode::MonteCarlo { replicates },
            master_seed,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }

    pub fn exact() -> Self {
        Self {
            mode: PermutationMode::Exact,
            master_seed: DEFAULT_SEED,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.mode == PermutationMode::Exact
    }

    pub fn replicates(&self) -> Option<usize> {
        match self.mode {
            PermutationMode::MonteCarlo { replicates } => Some(replicates),
            PermutationMode::Exact => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSummary {
    pub n_finite: usize,
    pub mean: f64,
    /// Variance of the finite replicate values: divisor n for exact
    /// enumeration (the full null distribution), n − 1 for Monte Carlo.
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

impl NullSummary {
    fn from_values(values: &[f64], exact: bool) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len();
        if n == 0 {
            return Self {
                n_finite: 0,
                mean: f64::NAN,
                variance: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        let mean = finite.iter().sum::<f64>() / n as f64;
        let ss = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        let variance = if exact {
            ss / n as f64
        } else if n > 1 {
            ss / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n_finite: n,
            mean,
            variance,
            min: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub observed: f64,
    pub p: f64,
    pub replicates_used: usize,
    pub n_extreme: usize,
    /// Replicates whose statistic was not finite; they are counted as
    /// extreme.
    pub n_nonfinite: usize,
    pub null: NullSummary,
    pub exact: bool,
}

/// Seed for replicate `index` of a run seeded with `master_seed`.
///
/// `master + γ(index + 1)` is injective in the index for odd γ, and the
/// SplitMix64 finalizer is a bijection, so distinct indices always get
/// distinct seeds.
pub fn derive_replicate_seed(master_seed: u64, index: u64) -> u64 {
    const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = master_seed.wrapping_add(GAMMA.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn n_choose_k(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Whether a replicate value counts toward the p-value numerator.
pub fn is_extreme(value: f64, observed: f64) -> bool {
    if !value.is_finite() || observed.is_nan() {
        return true;
    }
    let obs = observed.abs();
    value.abs() >= obs - EXTREME_REL_TOL * obs.max(1.0)
}

/// Random treatment mask with `n_treatment` of `n` subjects set, drawn from
/// the replicate's own stream.
pub fn replicate_mask(n: usize, n_treatment: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_treatment) {
        mask[i] = true;
    }
    mask
}

/// Two-sided permutation p-value of `stat`, which maps a treatment mask
/// (`true` = treatment) to a statistic. Group sizes are preserved.
///
/// Monte Carlo: `p = (1 + #{b : |T_b| ≥ |T_obs|}) / (B + 1)`.
/// Exact: `p = #{|T| ≥ |T_obs|} / C(N, n₁)` over all assignments.
pub fn permutation_pvalue<F>(stat: F, observed: &[bool], plan: &PermutationPlan) -> Result<PermutationResult>
where
    F: Fn(&[bool]) -> f64 + Sync,
{
    let n = observed.len();
    let n1 = observed.iter().filter(|&&m| m).count();
    let t_obs = stat(observed);

    let values: Vec<f64> = match plan.mode {
        PermutationMode::MonteCarlo { replicates } => {
            if replicates == 0 {
                return Err(Error::config("permutation.replicates", "must be at least 1"));
            }
            (0..replicates as u64)
                .into_par_iter()
                .map(|b| stat(&replicate_mask(n, n1, derive_replicate_seed(plan.master_seed, b))))
                .collect()
        }
        PermutationMode::Exact => {
            let needed = n_choose_k(n, n1);
            if needed > u128::from(plan.exact_cap) {
                return Err(Error::ExactTooLarge {
                    needed,
                    cap: plan.exact_cap,
                });
            }
            let masks: Vec<Vec<bool>> = Combinations::new(n, n1).collect();
            masks.par_iter().map(|m| stat(m)).collect()
        }
    };

    let n_extreme = values.iter().filter(|&&v| is_extreme(v, t_obs)).count();
    let n_nonfinite = values.iter().filter(|v| !v.is_finite()).count();
    let p = if plan.is_exact() {
        n_extreme as f64 / values.len() as f64
    } else {
        (1 + n_extreme) as f64 / (values.len() + 1) as f64
    };
    Ok(PermutationResult {
        observed: t_obs,
        p,
        replicates_used: values.len(),
        n_extreme,
        n_nonfinite,
        null: NullSummary::from_values(&values, plan.is_exact()),
        exact: plan.is_exact(),
    })
}

/// [`permutation_pvalue`] for a statistic defined on whole datasets. Each
/// replicate is materialized as a relabeled copy of `ds`, which is simple
/// but slow; the test modules use precomputed mask statistics instead.
pub fn permutation_pvalue_dataset<F>(stat: F, ds: &TrialDataset, plan: &PermutationPlan) -> Result<PermutationResult>
where
    F: Fn(&TrialDataset) -> f64 + Sync,
{
    let on_mask = |mask: &[bool]| -> f64 {
        let groups: Vec<Group> = mask
            .iter()
            .map(|&m| if m { Group::Treatment } else { Group::Control })
            .collect();
        match ds.relabeled(&groups) {
            Ok(relabeled) => stat(&relabeled),
            Err(_) => f64::NAN,
        }
    };
    permutation_pvalue(on_mask, &ds.treatment_mask(), plan)
}

/// Lexicographic k-subsets of 0..n as boolean masks.
struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Self {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<bool>;

    fn next(&mut self) -> Option<Vec<bool>> {
        if self.done {
            return None;
        }
        let mut mask = vec![false; self.n];
        for &i in &self.idx {
            mask[i] = true;
        }
        let k = self.idx.len();
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in (i + 1)..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(mask)
    }
}
