//! Synthetic two-group trials with correlated mixed-type endpoints, and
//! rejection-rate studies on top of them.
//!
//! Dependence comes from a latent Gaussian copula: each subject draws a
//! correlated standard normal vector which is pushed through the marginal
//! inverse CDFs (exponential event times with administrative censoring,
//! normal values, Bernoulli indicators).

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::analysis::{run_method, MethodOptions};
use crate::data::{Direction, EndpointSpec, Group, OutcomeValue, Subject, TrialDataset};
use crate::data::render_aligned;
use crate::error::{Error, Result};
use crate::resampling::derive_replicate_seed;
use crate::result::{Inference, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    /// Exponential event times (hazard per day), censored at `horizon`.
    TimeToEvent {
        hazard_treatment: f64,
        hazard_control: f64,
        horizon: f64,
    },
    Continuous {
        mean_treatment: f64,
        mean_control: f64,
        sd_treatment: f64,
        sd_control: f64,
        #[serde(default)]
        direction: Direction,
    },
    Binary {
        p_treatment: f64,
        p_control: f64,
        #[serde(default)]
        direction: Direction,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEndpoint {
    pub name: String,
    #[serde(flatten)]
    pub marginal: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_per_group: usize,
    /// Endpoints in priority order.
    pub endpoints: Vec<SimEndpoint>,
    /// Latent correlation; identity when empty.
    pub correlation: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::mixed(20, 0.0, 1)
    }
}

impl SimConfig {
    /// Three endpoints shaped like the ACTG analysis set: a time-to-event
    /// endpoint (mean event time 1000 days, two-year horizon) and two
    /// standard-normal continuous endpoints, latent correlation 0.3.
    /// `effect` shifts the treatment arm toward benefit: it divides the
    /// treatment hazard by `exp(effect)` and adds `effect` to the
    /// continuous means. `effect = 0` is a null configuration.
    pub fn mixed(n_per_group: usize, effect: f64, seed: u64) -> Self {
        let normal = |name: &str| SimEndpoint {
            name: name.into(),
            marginal: Marginal::Continuous {
                mean_treatment: effect,
                mean_control: 0.0,
                sd_treatment: 1.0,
                sd_control: 1.0,
                direction: Direction::HigherIsBetter,
            },
        };
        let rho = 0.3;
        Self {
            n_per_group,
            endpoints: vec![
                SimEndpoint {
                    name: "event".into(),
                    marginal: Marginal::TimeToEvent {
                        hazard_treatment: 0.001 / effect.exp(),
                        hazard_control: 0.001,
                        horizon: 730.0,
                    },
                },
                normal("change"),
                normal("late"),
            ],
            correlation: vec![vec![1.0, rho, rho], vec![rho, 1.0, rho], vec![rho, rho, 1.0]],
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn correlation_matrix(&self) -> DMatrix<f64> {
        let k = self.endpoints.len();
        if self.correlation.is_empty() {
            DMatrix::identity(k, k)
        } else {
            DMatrix::from_fn(k, k, |i, j| self.correlation[i][j])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSimConfig(m));
        if self.n_per_group == 0 {
            return bad("n_per_group must be at least 1".into());
        }
        if self.endpoints.is_empty() {
            return bad("no endpoints".into());
        }
        let mut names = std::collections::HashSet::new();
        for e in &self.endpoints {
            if !names.insert(&e.name) {
                return bad(format!("endpoint `{}` declared twice", e.name));
            }
            let ok = match e.marginal {
                Marginal::TimeToEvent {
                    hazard_treatment,
                    hazard_control,
                    horizon,
                } => hazard_treatment > 0.0 && hazard_control > 0.0 && horizon > 0.0,
                Marginal::Continuous {
                    mean_treatment,
                    mean_control,
                    sd_treatment,
                    sd_control,
                    ..
                } => mean_treatment.is_finite() && mean_control.is_finite() && sd_treatment > 0.0 && sd_control > 0.0,
                Marginal::Binary {
                    p_treatment,
                    p_control,
                    ..
                } => (0.0..=1.0).contains(&p_treatment) && (0.0..=1.0).contains(&p_control),
            };
            if !ok {
                return bad(format!("parameters of `{}` are out of range", e.name));
            }
        }
        let k = self.endpoints.len();
        if !self.correlation.is_empty() {
            if self.correlation.len() != k || self.correlation.iter().any(|r| r.len() != k) {
                return Err(Error::InvalidCorrelation(format!("expected a {k}×{k} matrix")));
            }
            for i in 0..k {
                if self.correlation[i][i] != 1.0 {
                    return Err(Error::InvalidCorrelation("diagonal must be 1".into()));
                }
                for j in 0..k {
                    let v = self.correlation[i][j];
                    if !v.is_finite() || v != self.correlation[j][i] {
                        return Err(Error::InvalidCorrelation("matrix must be symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Square-root factor `L` with `L Lᵀ = R`, via eigendecomposition so
    /// that positive semi-definite (singular) matrices are accepted.
    fn factor(&self) -> Result<DMatrix<f64>> {
        let r = self.correlation_matrix();
        let eig = SymmetricEigen::new(r);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::InvalidCorrelation(format!(
                "not positive semi-definite (smallest eigenvalue {min:.3e})"
            )));
        }
        let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }

    pub fn endpoint_specs(&self) -> Vec<EndpointSpec> {
        self.endpoints
            .iter()
            .zip(1u32..)
            .map(|(e, p)| match e.marginal {
                Marginal::TimeToEvent { .. } => EndpointSpec::time_to_event(&e.name, p),
                Marginal::Continuous { direction, .. } => EndpointSpec::continuous(&e.name, direction, p),
                Marginal::Binary { direction, .. } => EndpointSpec::binary(&e.name, direction, p),
            })
            .collect()
    }
}

/// Φ(x).
fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Draws one trial: `n_per_group` treatment subjects followed by as many
/// controls. Deterministic in `cfg.seed`.
pub fn simulate_trial(cfg: &SimConfig) -> Result<TrialDataset> {
    cfg.validate()?;
    let factor = cfg.factor()?;
    let k = cfg.endpoints.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut subjects = Vec::with_capacity(2 * cfg.n_per_group);
    for i in 0..2 * cfg.n_per_group {
        let group = if i < cfg.n_per_group {
            Group::Treatment
        } else {
            Group::Control
        };
        let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = &factor * z;
        let treated = group.is_treatment();
        let mut outcomes = BTreeMap::new();
        for (e, &xk) in cfg.endpoints.iter().zip(x.iter()) {
            let value = match e.marginal {
                Marginal::TimeToEvent {
                    hazard_treatment,
                    hazard_control,
                    horizon,
                } => {
                    let hazard = if treated { hazard_treatment } else { hazard_control };
                    // Survival probability 1 − Φ(x) = Φ(−x), evaluated directly
                    // to keep precision in the upper tail.
                    let t = -normal_cdf(-xk).ln() / hazard;
                    if t > horizon {
                        OutcomeValue::TimeToEvent {
                            time: horizon,
                            event_observed: false,
                        }
                    } else {
                        OutcomeValue::TimeToEvent {
                            time: t,
                            event_observed: true,
                        }
                    }
                }
                Marginal::Continuous {
                    mean_treatment,
                    mean_control,
                    sd_treatment,
                    sd_control,
                    ..
                } => {
                    let (m, s) = if treated {
                        (mean_treatment, sd_treatment)
                    } else {
                        (mean_control, sd_control)
                    };
                    OutcomeValue::Continuous(Some(m + s * xk))
                }
                Marginal::Binary {
                    p_treatment,
                    p_control,
                    ..
                } => {
                    let p = if treated { p_treatment } else { p_control };
                    OutcomeValue::Binary(Some(normal_cdf(xk) < p))
                }
            };
            outcomes.insert(e.name.clone(), value);
        }
        subjects.push(Subject {
            id: format!("S{i:05}"),
            arm: group.to_string(),
            group,
            outcomes,
            covariates: BTreeMap::new(),
        });
    }
    TrialDataset::new(subjects, cfg.endpoint_specs())
}

/// Exact (Clopper–Pearson) two-sided 95% interval for a binomial rate.
pub fn clopper_pearson(successes: usize, trials: usize) -> (f64, f64) {
    let (x, n) = (successes as f64, trials as f64);
    // Regularized incomplete beta is increasing in p.
    let solve = |a: f64, b: f64, target: f64| {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if beta_reg(a, b, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let lower = if successes == 0 { 0.0 } else { solve(x, n - x + 1.0, 0.025) };
    let upper = if successes == trials { 1.0 } else { solve(x + 1.0, n - x, 0.975) };
    (lower, upper)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionReport {
    pub method: Method,
    pub n_per_group: usize,
    pub alpha: f64,
    pub n_trials: usize,
    pub rejections: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RejectionReport {
    /// Whether the exact 95% interval for the rejection rate covers α.
    pub fn within_band(&self) -> bool {
        self.ci_low <= self.alpha && self.alpha <= self.ci_high
    }
}

/// Simulates `n_trials` datasets from `cfg` and reports how often
/// `method` rejects at level `alpha`. Trial t uses simulation seed
/// `derive_replicate_seed(cfg.seed, t)`; permutation plans are reseeded
/// the same way from their own master seed.
pub fn error_rate_study(
    cfg: &SimConfig,
    method: Method,
    options: &MethodOptions,
    alpha: f64,
    n_trials: usize,
    inference: Inference,
) -> Result<RejectionReport> {
    cfg.validate()?;
    if n_trials == 0 {
        return Err(Error::InvalidSimConfig("n_trials must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidSimConfig(format!("alpha {alpha} is not a probability")));
    }
    let p_values = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let ds = simulate_trial(&cfg.with_seed(derive_replicate_seed(cfg.seed, t)))?;
            let inference = match inference {
                Inference::Permutation(mut plan) => {
                    plan.master_seed = derive_replicate_seed(plan.master_seed, t);
                    Inference::Permutation(plan)
                }
                Inference::Asymptotic => Inference::Asymptotic,
            };
            let result = run_method(&ds, method, &ds.hierarchy(), options, inference)?;
            Ok(result.p_two_sided)
        })
        .collect::<Result<Vec<f64>>>()?;
    let rejections = p_values.iter().filter(|&&p| p <= alpha).count();
    let (ci_low, ci_high) = clopper_pearson(rejections, n_trials);
    Ok(RejectionReport {
        method,
        n_per_group: cfg.n_per_group,
        alpha,
        n_trials,
        rejections,
        rate: rejections as f64 / n_trials as f64,
        ci_low,
        ci_high,
    })
}

pub fn write_rejection_csv<W: Write>(reports: &[RejectionReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "n_per_group",
        "alpha",
        "n_trials",
        "rejections",
        "rate",
        "ci95_low",
        "ci95_high",
        "within_band",
    ])?;
    for r in reports {
        w.write_record([
            r.method.to_string(),
            r.n_per_group.to_string(),
            r.alpha.to_string(),
            r.n_trials.to_string(),
            r.rejections.to_string(),
            r.rate.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.within_band().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn rejection_summary_text(reports: &[RejectionReport]) -> String {
    let headers: Vec<String> = ["Method", "n/group", "alpha", "Trials", "Rate", "95% CI", "Band"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.n_per_group.to_string(),
                format!("{}", r.alpha),
                r.n_trials.to_string(),
                format!("{:.4}", r.rate),
                format!("[{:.4}, {:.4}]", r.ci_low, r.ci_high),
                if r.within_band() { "within" } else { "OUT" }.to_string(),
            ]
        })
        .collect();
    render_aligned(&headers, &body)
}
