//! Tests built on the hierarchical pairwise kernel: the
//! Finkelstein–Schoenfeld statistic and the win ratio.

use std::collections::BTreeMap;

use crate::data::{ordered_hierarchy, EndpointSpec, TrialDataset};
use crate::error::Result;
use crate::kernel::{score_vector, PairMatrix, PairwiseComparator};
use crate::resampling::permutation_pvalue;
use crate::result::{normal_two_sided_p, Flag, Inference, InferenceMode, Method, TestResult};

/// 97.5% standard normal quantile used for win-ratio intervals.
const Z_975: f64 = 1.96;

pub(crate) fn hierarchy_label(h: &[EndpointSpec]) -> String {
    h.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(">")
}

fn base_metadata(ds: &TrialDataset, hierarchy: &[EndpointSpec], excluded: usize) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("n_treatment".into(), ds.n_treatment().to_string());
    m.insert("n_control".into(), ds.n_control().to_string());
    m.insert("hierarchy".into(), hierarchy_label(hierarchy));
    if excluded > 0 {
        m.insert("excluded".into(), excluded.to_string());
    }
    m
}

/// Finkelstein–Schoenfeld test.
///
/// `T = Σ_{i ∈ treatment} u_i` where `u` is the pooled net pairwise score
/// vector. Its permutation variance is `n₁n₀ / (N(N−1)) · Σ u_i²` (the
/// scores sum to zero), which the asymptotic mode uses directly.
pub fn fs_test(ds: &TrialDataset, hierarchy: &[EndpointSpec], inference: Inference) -> Result<TestResult> {
    let hierarchy = ordered_hierarchy(hierarchy)?;
    let (ds, excluded) = ds.apply_missing_policies(&hierarchy)?;
    let cmp = PairwiseComparator::new(&ds, &hierarchy)?;
    let u = score_vector(&cmp);
    let mask = ds.treatment_mask();

    let (n1, n0) = (ds.n_treatment() as f64, ds.n_control() as f64);
    let n = n1 + n0;
    let t: i64 = u.iter().zip(&mask).filter(|(_, &m)| m).map(|(s, _)| s).sum();
    let sum_sq: f64 = u.iter().map(|&s| (s * s) as f64).sum();
    let variance = n1 * n0 / (n * (n - 1.0)) * sum_sq;

    let mut result = TestResult {
        method: Method::Fs,
        statistic: t as f64,
        variance,
        z: 0.0,
        p_two_sided: 1.0,
        inference_mode: inference.mode(),
        flags: Vec::new(),
        metadata: base_metadata(&ds, &hierarchy, excluded),
    };
    if variance == 0.0 {
        result.statistic = 0.0;
        result.flags.push(Flag::DegenerateVariance);
        return Ok(result);
    }
    result.z = result.statistic / variance.sqrt();
    match inference {
        Inference::Asymptotic => result.p_two_sided = normal_two_sided_p(result.z),
        Inference::Permutation(plan) => {
            let stat = |m: &[bool]| -> f64 {
                u.iter().zip(m).filter(|(_, &x)| x).map(|(s, _)| *s).sum::<i64>() as f64
            };
            let perm = permutation_pvalue(stat, &mask, &plan)?;
            result.p_two_sided = perm.p;
            result.record_permutation(&plan, &perm);
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WinRatio {
    /// `n_wins / n_losses`; zero when there are losses but no wins.
    Finite(f64),
    /// Wins but no losses.
    Unbounded,
    /// Every pair tied.
    Undefined,
}

impl WinRatio {
    pub fn value(self) -> f64 {
        match self {
            WinRatio::Finite(v) => v,
            WinRatio::Unbounded => f64::INFINITY,
            WinRatio::Undefined => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WinRatioResult {
    pub n_wins: u64,
    pub n_losses: u64,
    pub n_ties: u64,
    pub win_ratio: WinRatio,
    /// Absent when the ratio is zero, unbounded or undefined.
    pub log_wr: Option<f64>,
    /// Delete-one jackknife standard error of the log win ratio.
    pub se_log_wr: Option<f64>,
    pub ci_95: Option<(f64, f64)>,
    pub p_two_sided: f64,
    pub inference_mode: InferenceMode,
    pub flags: Vec<Flag>,
    pub metadata: BTreeMap<String, String>,
}

impl WinRatioResult {
    /// Flattens into the common result row. The statistic is log WR.
    pub fn to_test_result(&self) -> TestResult {
        let statistic = self.log_wr.unwrap_or_else(|| self.win_ratio.value().ln());
        let (variance, z) = match (self.log_wr, self.se_log_wr) {
            (Some(l), Some(se)) if se > 0.0 => (se * se, l / se),
            _ => (0.0, 0.0),
        };
        let mut metadata = self.metadata.clone();
        metadata.insert("win_ratio".into(), self.win_ratio.value().to_string());
        metadata.insert("wins".into(), self.n_wins.to_string());
        metadata.insert("losses".into(), self.n_losses.to_string());
        metadata.insert("ties".into(), self.n_ties.to_string());
        if let Some((lo, hi)) = self.ci_95 {
            metadata.insert("ci95_low".into(), lo.to_string());
            metadata.insert("ci95_high".into(), hi.to_string());
        }
        TestResult {
            method: Method::WinRatio,
            statistic,
            variance,
            z,
            p_two_sided: self.p_two_sided,
            inference_mode: self.inference_mode,
            flags: self.flags.clone(),
            metadata,
        }
    }
}

fn log_ratio(w: u64, l: u64) -> f64 {
    (w as f64 / l as f64).ln()
}

/// Win ratio of treatment over control across all treatment × control
/// pairs, with a delete-one-subject jackknife standard error for log WR.
pub fn win_ratio_test(ds: &TrialDataset, hierarchy: &[EndpointSpec], inference: Inference) -> Result<WinRatioResult> {
    let hierarchy = ordered_hierarchy(hierarchy)?;
    let (ds, excluded) = ds.apply_missing_policies(&hierarchy)?;
    let cmp = PairwiseComparator::new(&ds, &hierarchy)?;
    let pm = PairMatrix::build(&cmp);
    let mask = ds.treatment_mask();
    let (w, l) = pm.tally(&mask);
    let n_pairs = (ds.n_treatment() * ds.n_control()) as u64;

    let mut flags = Vec::new();
    let win_ratio = match (w, l) {
        (0, 0) => WinRatio::Undefined,
        (_, 0) => WinRatio::Unbounded,
        (w, l) => WinRatio::Finite(w as f64 / l as f64),
    };
    let log_wr = (w > 0 && l > 0).then(|| log_ratio(w, l));
    match win_ratio {
        WinRatio::Undefined => flags.push(Flag::DegenerateVariance),
        _ if log_wr.is_none() => flags.push(Flag::UnboundedRatio),
        _ => {}
    }

    let se_log_wr = log_wr.and_then(|_| jackknife_se(&pm, &mask, w, l));
    if log_wr.is_some() && se_log_wr.is_none() {
        flags.push(Flag::JackknifeUndefined);
    }
    let ci_95 = match (log_wr, se_log_wr) {
        (Some(lw), Some(se)) if se > 0.0 => Some(((lw - Z_975 * se).exp(), (lw + Z_975 * se).exp())),
        _ => None,
    };

    let mut metadata = base_metadata(&ds, &hierarchy, excluded);
    let p_two_sided = match inference {
        Inference::Asymptotic => match (log_wr, se_log_wr) {
            (Some(lw), Some(se)) if se > 0.0 => normal_two_sided_p(lw / se),
            (Some(_), Some(_)) => {
                flags.push(Flag::DegenerateVariance);
                1.0
            }
            _ => 1.0,
        },
        Inference::Permutation(plan) => {
            let stat = |m: &[bool]| {
                let (w, l) = pm.tally(m);
                log_ratio(w, l)
            };
            let perm = permutation_pvalue(stat, &mask, &plan)?;
            metadata.insert("replicates".into(), perm.replicates_used.to_string());
            metadata.insert("seed".into(), plan.master_seed.to_string());
            metadata.insert("null_variance".into(), perm.null.variance.to_string());
            if perm.n_nonfinite > 0 {
                flags.push(Flag::NonFiniteReplicates {
                    count: perm.n_nonfinite,
                });
            }
            perm.p
        }
    };

    Ok(WinRatioResult {
        n_wins: w,
        n_losses: l,
        n_ties: n_pairs - w - l,
        win_ratio,
        log_wr,
        se_log_wr,
        ci_95,
        p_two_sided,
        inference_mode: inference.mode(),
        flags,
        metadata,
    })
}

/// Jackknife SE of log WR over the pooled cohort. `None` if removing some
/// subject leaves no wins or no losses.
fn jackknife_se(pm: &PairMatrix, mask: &[bool], w: u64, l: u64) -> Option<f64> {
    let treat = pm.pack(mask);
    let control = pm.pack(&mask.iter().map(|m| !m).collect::<Vec<_>>());
    let n = mask.len();
    let mut thetas = Vec::with_capacity(n);
    for (k, &is_t) in mask.iter().enumerate() {
        let (wk, lk) = if is_t {
            (w - pm.wins_against(k, &control), l - pm.losses_against(k, &control))
        } else {
            (w - pm.losses_against(k, &treat), l - pm.wins_against(k, &treat))
        };
        if wk == 0 || lk == 0 {
            return None;
        }
        thetas.push(log_ratio(wk, lk));
    }
    let nf = n as f64;
    let mean = thetas.iter().sum::<f64>() / nf;
    let var = (nf - 1.0) / nf * thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>();
    Some(var.sqrt())
}
