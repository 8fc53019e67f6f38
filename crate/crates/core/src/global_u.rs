//! Weighted global U-statistic built from endpoint-specific two-sample
//! kernels.
//!
//! Each kernel φ takes values in {−1, 0, +1} (+1 favouring the first
//! argument) and is antisymmetric, so a group's sum over treatment ×
//! control pairs equals the sum of pooled per-subject scores over the
//! treatment group. That makes relabelling cheap in permutation mode.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EndpointKind, EndpointSpec, MissingPolicy, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::{score_vector, PairwiseComparator};
use crate::resampling::permutation_pvalue;
use crate::result::{normal_two_sided_p, Flag, Inference, Method, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Mann–Whitney sign of the difference; for continuous and binary
    /// endpoints.
    SignedDifference,
    /// Gehan's censoring-aware comparison; for time-to-event endpoints.
    GehanSurvival,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::SignedDifference => "signed_difference",
            KernelKind::GehanSurvival => "gehan_survival",
        }
    }

    pub fn applies_to(self, kind: EndpointKind) -> bool {
        match self {
            KernelKind::GehanSurvival => kind == EndpointKind::TimeToEvent,
            KernelKind::SignedDifference => kind != EndpointKind::TimeToEvent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub endpoint: String,
    pub kernel: KernelKind,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(endpoint: impl Into<String>, kernel: KernelKind, weight: f64) -> Self {
        Self {
            endpoint: endpoint.into(),
            kernel,
            weight,
        }
    }

    /// The natural kernel for an endpoint, with unit weight.
    pub fn natural(spec: &EndpointSpec) -> Self {
        let kernel = match spec.kind {
            EndpointKind::TimeToEvent => KernelKind::GehanSurvival,
            _ => KernelKind::SignedDifference,
        };
        Self::new(&spec.name, kernel, 1.0)
    }
}

/// One endpoint's two-sample U-statistic and its per-subject pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointU {
    pub endpoint: String,
    /// `(1/(n₁n₀)) Σ_{t,c} φ(x_t, x_c)`, in [−1, 1].
    pub u: f64,
    /// Per subject, in dataset order: for a treatment subject its mean
    /// kernel against the control group; for a control subject the mean
    /// kernel of the treatment group against it. Both are from the
    /// treatment perspective.
    pub projection: Vec<f64>,
    /// Per subject, `Σ_j φ(x_i, x_j)` over the pooled cohort.
    pub pooled_score: Vec<f64>,
}

fn checked_spec(ds: &TrialDataset, spec: &KernelSpec) -> Result<EndpointSpec> {
    let es = ds
        .spec(&spec.endpoint)
        .ok_or_else(|| Error::MissingColumn(spec.endpoint.clone()))?;
    if !spec.kernel.applies_to(es.kind) {
        return Err(Error::KernelKindMismatch {
            endpoint: spec.endpoint.clone(),
            kernel: spec.kernel,
            kind: es.kind,
        });
    }
    // Single-level hierarchy for the kernel.
    Ok(EndpointSpec {
        priority: 1,
        ..es.clone()
    })
}

/// Endpoint-specific U-statistic. Missing values contribute a zero
/// kernel unless the endpoint's policy is `CompleteCase`, in which case
/// subjects missing it are dropped first.
pub fn endpoint_u(ds: &TrialDataset, spec: &KernelSpec) -> Result<EndpointU> {
    let es = checked_spec(ds, spec)?;
    if es.missing_policy == MissingPolicy::CompleteCase {
        let (cc, _) = ds.complete_cases(&[es.name.clone()])?;
        return endpoint_u_unchecked(&cc, &es);
    }
    endpoint_u_unchecked(ds, &es)
}

fn endpoint_u_unchecked(ds: &TrialDataset, es: &EndpointSpec) -> Result<EndpointU> {
    let cmp = PairwiseComparator::new(ds, std::slice::from_ref(es))?;
    let mask = ds.treatment_mask();
    let (n1, n0) = (ds.n_treatment() as f64, ds.n_control() as f64);
    let projection: Vec<f64> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let sum: i64 = (0..ds.len())
                .filter(|&j| mask[j] != mask[i])
                .map(|j| cmp.score(i, j))
                .sum();
            if mask[i] {
                sum as f64 / n0
            } else {
                -(sum as f64) / n1
            }
        })
        .collect();
    let u = projection
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .sum::<f64>()
        / n1;
    let pooled_score = score_vector(&cmp).into_iter().map(|s| s as f64).collect();
    Ok(EndpointU {
        endpoint: es.name.clone(),
        u,
        projection,
        pooled_score,
    })
}

fn normalized_weights(kernels: &[KernelSpec]) -> Result<Vec<f64>> {
    if kernels.is_empty() {
        return Err(Error::InvalidWeights("at least one kernel is required".into()));
    }
    if let Some(k) = kernels.iter().find(|k| !(k.weight.is_finite() && k.weight >= 0.0)) {
        return Err(Error::InvalidWeights(format!(
            "weight for `{}` must be finite and non-negative, got {}",
            k.endpoint, k.weight
        )));
    }
    let total: f64 = kernels.iter().map(|k| k.weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidWeights("weights are all zero".into()));
    }
    Ok(kernels.iter().map(|k| k.weight / total).collect())
}

fn sample_variance<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let v: Vec<f64> = values.copied().collect();
    if v.len() < 2 {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Some(v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

/// Global test on `U = Σ_k w_k U_k` with weights normalized to sum 1.
///
/// The asymptotic variance is the two-sample projection estimator
/// `S₁²/n₁ + S₀²/n₀`, where S² are the sample variances of the weighted
/// projections within each group.
pub fn global_u_test(ds: &TrialDataset, kernels: &[KernelSpec], inference: Inference) -> Result<TestResult> {
    let weights = normalized_weights(kernels)?;
    let specs = kernels
        .iter()
        .map(|k| checked_spec(ds, k))
        .collect::<Result<Vec<_>>>()?;
    let cc_names: Vec<String> = specs
        .iter()
        .filter(|s| s.missing_policy == MissingPolicy::CompleteCase)
        .map(|s| s.name.clone())
        .collect();
    let (ds, excluded) = if cc_names.is_empty() {
        (ds.clone(), 0)
    } else {
        ds.complete_cases(&cc_names)?
    };

    let parts = specs
        .iter()
        .map(|s| endpoint_u_unchecked(&ds, s))
        .collect::<Result<Vec<_>>>()?;
    let n = ds.len();
    let mask = ds.treatment_mask();
    let (n1, n0) = (ds.n_treatment(), ds.n_control());

    let u: f64 = parts.iter().zip(&weights).map(|(p, w)| w * p.u).sum();
    let mut h = vec![0.0; n];
    let mut r = vec![0.0; n];
    for (p, w) in parts.iter().zip(&weights) {
        for i in 0..n {
            h[i] += w * p.projection[i];
            r[i] += w * p.pooled_score[i];
        }
    }
    let var_t = sample_variance(h.iter().zip(&mask).filter(|(_, &m)| m).map(|(v, _)| v));
    let var_c = sample_variance(h.iter().zip(&mask).filter(|(_, &m)| !m).map(|(v, _)| v));
    let variance = match (var_t, var_c) {
        (Some(a), Some(b)) => a / n1 as f64 + b / n0 as f64,
        _ => 0.0,
    };

    let mut metadata = BTreeMap::new();
    metadata.insert("n_treatment".into(), n1.to_string());
    metadata.insert("n_control".into(), n0.to_string());
    metadata.insert(
        "kernels".into(),
        kernels
            .iter()
            .zip(&weights)
            .map(|(k, w)| format!("{}/{}/{}", k.endpoint, k.kernel.as_str(), w))
            .collect::<Vec<_>>()
            .join("+"),
    );
    metadata.insert(
        "endpoint_u".into(),
        parts
            .iter()
            .map(|p| p.u.to_string())
            .collect::<Vec<_>>()
            .join("+"),
    );
    if excluded > 0 {
        metadata.insert("excluded".into(), excluded.to_string());
    }

    let mut result = TestResult {
        method: Method::GlobalU,
        statistic: u,
        variance,
        z: 0.0,
        p_two_sided: 1.0,
        inference_mode: inference.mode(),
        flags: Vec::new(),
        metadata,
    };
    let degenerate = !(variance > 0.0);
    if degenerate {
        result.flags.push(Flag::DegenerateVariance);
    } else {
        result.z = u / variance.sqrt();
    }
    let denom = (n1 * n0) as f64;
    match inference {
        Inference::Asymptotic => {
            if !degenerate {
                result.p_two_sided = normal_two_sided_p(result.z);
            }
        }
        Inference::Permutation(plan) => {
            let stat = |m: &[bool]| -> f64 {
                r.iter().zip(m).filter(|(_, &x)| x).map(|(v, _)| v).sum::<f64>() / denom
            };
            let perm = permutation_pvalue(stat, &mask, &plan)?;
            result.p_two_sided = perm.p;
            result.record_permutation(&plan, &perm);
        }
    }
    Ok(result)
}
