//! Shared result types for every test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::resampling::{PermutationPlan, PermutationResult};

/// The five global procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RankSum,
    Fs,
    WinRatio,
    Multirank,
    GlobalU,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::RankSum,
        Method::Fs,
        Method::WinRatio,
        Method::Multirank,
        Method::GlobalU,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RankSum => "rank_sum",
            Method::Fs => "fs",
            Method::WinRatio => "win_ratio",
            Method::Multirank => "multirank",
            Method::GlobalU => "global_u",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    Asymptotic,
    Permutation,
    Exact,
}

impl InferenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::Asymptotic => "asymptotic",
            InferenceMode::Permutation => "permutation",
            InferenceMode::Exact => "exact",
        }
    }
}

impl FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymptotic" => Ok(InferenceMode::Asymptotic),
            "permutation" => Ok(InferenceMode::Permutation),
            "exact" => Ok(InferenceMode::Exact),
            _ => Err(Error::config("inference_mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// How a test should produce its p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Asymptotic,
    Permutation(PermutationPlan),
}

impl Inference {
    pub fn mode(&self) -> InferenceMode {
        match self {
            Inference::Asymptotic => InferenceMode::Asymptotic,
            Inference::Permutation(p) if p.is_exact() => InferenceMode::Exact,
            Inference::Permutation(_) => InferenceMode::Permutation,
        }
    }
}

/// Non-fatal conditions attached to a result.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Flag {
    /// The variance estimate is zero; statistic and p are reported as
    /// 0 and 1.
    DegenerateVariance,
    /// No losses (or no wins) so the win ratio or its log is unbounded.
    UnboundedRatio,
    /// The delete-one jackknife hit an unbounded ratio; no asymptotic
    /// interval is available.
    JackknifeUndefined,
    /// Covariance was singular; a pseudo-inverse of this rank was used.
    SingularCovariance { rank: usize },
    /// Permutation replicates that produced a non-finite statistic.
    NonFiniteReplicates { count: usize },
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flag::DegenerateVariance => f.write_str("degenerate_variance"),
            Flag::UnboundedRatio => f.write_str("unbounded_ratio"),
            Flag::JackknifeUndefined => f.write_str("jackknife_undefined"),
            Flag::SingularCovariance { rank } => write!(f, "singular_covariance({rank})"),
            Flag::NonFiniteReplicates { count } => write!(f, "nonfinite_replicates({count})"),
        }
    }
}

impl FromStr for Flag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let arg = |prefix: &str| -> Option<usize> {
            s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?.parse().ok()
        };
        match s {
            "degenerate_variance" => Ok(Flag::DegenerateVariance),
            "unbounded_ratio" => Ok(Flag::UnboundedRatio),
            "jackknife_undefined" => Ok(Flag::JackknifeUndefined),
            _ => {
                if let Some(rank) = arg("singular_covariance") {
                    Ok(Flag::SingularCovariance { rank })
                } else if let Some(count) = arg("nonfinite_replicates") {
                    Ok(Flag::NonFiniteReplicates { count })
                } else {
                    Err(Error::config("flags", format!("unknown flag `{s}`")))
                }
            }
        }
    }
}

/// Outcome of one global test.
///
/// For normal- and t-referenced tests `z = statistic / √variance`. The
/// multirank test is chi-square referenced: its `variance` is that of the
/// reference distribution (2·df) and `z` is the normal quantile with the
/// same two-sided p.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: Method,
    pub statistic: f64,
    pub variance: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub inference_mode: InferenceMode,
    pub flags: Vec<Flag>,
    pub metadata: BTreeMap<String, String>,
}

impl TestResult {
    pub fn has_flag(&self, flag: &Flag) -> bool {
        self.flags.contains(flag)
    }

    pub(crate) fn record_permutation(&mut self, plan: &PermutationPlan, perm: &PermutationResult) {
        self.metadata
            .insert("replicates".into(), perm.replicates_used.to_string());
        self.metadata.insert("seed".into(), plan.master_seed.to_string());
        self.metadata
            .insert("null_variance".into(), perm.null.variance.to_string());
        if perm.n_nonfinite > 0 {
            self.flags.push(Flag::NonFiniteReplicates {
                count: perm.n_nonfinite,
            });
        }
    }
}

/// Smallest reported p-value; asymptotic tails that underflow are clamped
/// here so p stays in (0, 1].
pub const P_FLOOR: f64 = f64::MIN_POSITIVE;

fn clamp_p(p: f64) -> f64 {
    if p.is_nan() {
        1.0
    } else {
        p.clamp(P_FLOOR, 1.0)
    }
}

/// Two-sided normal p, `2·Φ(−|z|)`, computed through erfc for accuracy in
/// the far tail.
pub fn normal_two_sided_p(z: f64) -> f64 {
    clamp_p(erfc(z.abs() / std::f64::consts::SQRT_2))
}

pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !df.is_finite() || df <= 0.0 {
        return normal_two_sided_p(t);
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    clamp_p(2.0 * dist.sf(t.abs()))
}

pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    let dist = ChiSquared::new(df).expect("positive df");
    clamp_p(dist.sf(x))
}

/// Normal quantile `z` with `2·Φ(−z) = p`.
pub fn z_from_two_sided_p(p: f64) -> f64 {
    use statrs::distribution::Normal;
    let n = Normal::standard();
    -n.inverse_cdf((p / 2.0).max(1e-300))
}

/// Presentation format: four significant digits, with values below
/// 0.0001 printed as `<0.0001`.
pub fn format_p(p: f64) -> String {
    if p < 1e-4 {
        return "<0.0001".to_string();
    }
    let decimals = (3 - p.log10().floor() as i32).max(0) as usize;
    format!("{p:.decimals$}")
}
