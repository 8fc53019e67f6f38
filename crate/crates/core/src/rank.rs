//! O'Brien's rank-sum test and the multivariate-rank quadratic-form test.
//!
//! Both work on a matrix of pooled midranks, one column per endpoint,
//! oriented so that a larger rank is a better outcome. Time-to-event
//! columns are first converted to Gehan scores (subjects outlived minus
//! subjects outliving, with censoring respected). Only complete cases enter.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::{EndpointKind, OutcomeValue, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::compare_survival;
use crate::resampling::permutation_pvalue;
use crate::result::{
    chi_square_sf, t_two_sided_p, z_from_two_sided_p, Flag, Inference, Method, TestResult,
};

/// Pooled midranks of `values` (1-based; ties share the average rank).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Gehan score of each subject for a time-to-event endpoint: the number
/// of subjects it determinately outlives minus the number that
/// determinately outlive it.
pub fn gehan_scores(ds: &TrialDataset, endpoint: &str) -> Result<Vec<f64>> {
    let (time, event): (Vec<f64>, Vec<bool>) = ds
        .subjects()
        .iter()
        .map(|s| match s.outcome(endpoint) {
            Some(OutcomeValue::TimeToEvent {
                time,
                event_observed,
            }) => Ok((*time, *event_observed)),
            _ => Err(Error::HierarchyMismatch {
                subject: s.id.clone(),
                endpoint: endpoint.to_string(),
            }),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let n = time.len();
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| match compare_survival(time[i], event[i], time[j], event[j]) {
                    Some(v) => v.score() as f64,
                    None => 0.0,
                })
                .sum()
        })
        .collect())
}

/// Direction-aligned pooled midranks over complete cases.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub endpoints: Vec<String>,
    /// N × K.
    pub ranks: DMatrix<f64>,
    pub treatment: Vec<bool>,
    pub subject_ids: Vec<String>,
    /// Subjects dropped for missing values.
    pub excluded: usize,
}

impl RankMatrix {
    pub fn n(&self) -> usize {
        self.ranks.nrows()
    }

    pub fn k(&self) -> usize {
        self.ranks.ncols()
    }

    /// Per-subject rank sums across endpoints.
    pub fn row_sums(&self) -> Vec<f64> {
        self.ranks.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.ranks.column_iter().map(|c| c.sum()).collect()
    }

    pub fn n_treatment(&self) -> usize {
        self.treatment.iter().filter(|&&t| t).count()
    }
}

pub fn rank_matrix(ds: &TrialDataset, endpoints: &[String]) -> Result<RankMatrix> {
    if endpoints.is_empty() {
        return Err(Error::InvalidEndpoint("no endpoints selected for ranking".into()));
    }
    let specs = ds.specs_for(endpoints)?;
    let (cc, excluded) = ds.complete_cases(endpoints)?;
    let n = cc.len();
    let mut ranks = DMatrix::zeros(n, specs.len());
    for (k, spec) in specs.iter().enumerate() {
        let column: Vec<f64> = match spec.kind {
            EndpointKind::TimeToEvent => gehan_scores(&cc, &spec.name)?,
            EndpointKind::Continuous | EndpointKind::Binary => {
                let sign = if spec.higher_is_better() { 1.0 } else { -1.0 };
                cc.subjects()
                    .iter()
                    .map(|s| sign * s.outcomes[&spec.name].numeric().expect("complete case"))
                    .collect()
            }
        };
        for (i, r) in midranks(&column).into_iter().enumerate() {
            ranks[(i, k)] = r;
        }
    }
    Ok(RankMatrix {
        endpoints: endpoints.to_vec(),
        ranks,
        treatment: cc.treatment_mask(),
        subject_ids: cc.subjects().iter().map(|s| s.id.clone()).collect(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankVariance {
    /// Pooled-variance two-sample t on the rank sums.
    Naive,
    /// Welch heteroscedasticity-consistent variance of the mean difference.
    #[default]
    Adjusted,
}

fn group_means(values: &[f64], mask: &[bool]) -> (f64, f64) {
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (v, &m) in values.iter().zip(mask) {
        if m {
            st += v;
            nt += 1;
        } else {
            sc += v;
            nc += 1;
        }
    }
    (st / nt as f64, sc / nc as f64)
}

fn meta(rm: &RankMatrix) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let n1 = rm.n_treatment();
    m.insert("n_treatment".into(), n1.to_string());
    m.insert("n_control".into(), (rm.n() - n1).to_string());
    m.insert("endpoints".into(), rm.endpoints.join("+"));
    if rm.excluded > 0 {
        m.insert("excluded".into(), rm.excluded.to_string());
    }
    m
}

/// O'Brien rank-sum test: difference in mean per-subject rank sums,
/// treatment minus control.
pub fn obrien_test(
    ds: &TrialDataset,
    endpoints: &[String],
    variance: RankVariance,
    inference: Inference,
) -> Result<TestResult> {
    let rm = rank_matrix(ds, endpoints)?;
    let s = rm.row_sums();
    let mask = &rm.treatment;
    let n1 = rm.n_treatment();
    let n0 = rm.n() - n1;
    if n1 == 0 {
        return Err(Error::EmptyGroup(crate::data::Group::Treatment));
    }
    if n0 == 0 {
        return Err(Error::EmptyGroup(crate::data::Group::Control));
    }
    let (mt, mc) = group_means(&s, mask);
    let statistic = mt - mc;
    let (ss_t, ss_c) = s.iter().zip(mask).fold((0.0, 0.0), |(a, b), (v, &m)| {
        if m {
            (a + (v - mt).powi(2), b)
        } else {
            (a, b + (v - mc).powi(2))
        }
    });
    let (f1, f0) = (n1 as f64, n0 as f64);
    let (var, df) = match variance {
        RankVariance::Naive => {
            let df = f1 + f0 - 2.0;
            let sp2 = (ss_t + ss_c) / df;
            (sp2 * (1.0 / f1 + 1.0 / f0), df)
        }
        RankVariance::Adjusted => {
            if n1 < 2 || n0 < 2 {
                (f64::NAN, f64::NAN)
            } else {
                let a = ss_t / (f1 - 1.0) / f1;
                let b = ss_c / (f0 - 1.0) / f0;
                let df = (a + b).powi(2) / (a * a / (f1 - 1.0) + b * b / (f0 - 1.0));
                (a + b, df)
            }
        }
    };

    let mut metadata = meta(&rm);
    metadata.insert(
        "variance".into(),
        match variance {
            RankVariance::Naive => "naive",
            RankVariance::Adjusted => "adjusted",
        }
        .into(),
    );
    let mut result = TestResult {
        method: Method::RankSum,
        statistic,
        variance: if var.is_finite() { var } else { 0.0 },
        z: 0.0,
        p_two_sided: 1.0,
        inference_mode: inference.mode(),
        flags: Vec::new(),
        metadata,
    };
    let degenerate = !(var.is_finite() && var > 0.0);
    if degenerate {
        result.flags.push(Flag::DegenerateVariance);
    } else {
        result.z = statistic / var.sqrt();
        result.metadata.insert("df".into(), df.to_string());
    }
    match inference {
        Inference::Asymptotic => {
            if !degenerate {
                result.p_two_sided = t_two_sided_p(result.z, df);
            }
        }
        Inference::Permutation(plan) => {
            let stat = |m: &[bool]| {
                let (a, b) = group_means(&s, m);
                a - b
            };
            let perm = permutation_pvalue(stat, mask, &plan)?;
            result.p_two_sided = perm.p;
            result.record_permutation(&plan, &perm);
        }
    }
    Ok(result)
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix and its numerical
/// rank.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = max_sv * (m.nrows().max(1) as f64) * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol && s > 0.0).count();
    if rank == 0 {
        return (DMatrix::zeros(m.ncols(), m.nrows()), 0);
    }
    let pinv = svd
        .pseudo_inverse(tol.max(f64::MIN_POSITIVE))
        .expect("u and v were computed");
    (pinv, rank)
}

/// Multivariate-rank test: `T = dᵀ Σ̂⁺ d` where `d` holds the per-endpoint
/// differences in mean midrank and `Σ̂ = S·(1/n₁ + 1/n₀)` with `S` the
/// covariance of the pooled rank rows. Σ̂ is the exact permutation
/// covariance of `d`, so `T` is referred to χ² with df equal to the rank
/// of Σ̂.
pub fn multirank_test(ds: &TrialDataset, endpoints: &[String], inference: Inference) -> Result<TestResult> {
    let rm = rank_matrix(ds, endpoints)?;
    let n = rm.n();
    let n1 = rm.n_treatment();
    let n0 = n - n1;
    if n1 == 0 {
        return Err(Error::EmptyGroup(crate::data::Group::Treatment));
    }
    if n0 == 0 {
        return Err(Error::EmptyGroup(crate::data::Group::Control));
    }
    let k = rm.k();
    let means = DVector::from_iterator(k, rm.ranks.column_iter().map(|c| c.mean()));
    let mut centered = rm.ranks.clone();
    for mut row in centered.row_iter_mut() {
        row -= means.transpose();
    }
    let scale = 1.0 / n1 as f64 + 1.0 / n0 as f64;
    let cov = centered.transpose() * &centered / (n as f64 - 1.0).max(1.0) * scale;
    let (precision, rank) = pseudo_inverse(&cov);

    let totals = DVector::from_iterator(k, rm.ranks.column_iter().map(|c| c.sum()));
    let quad = |mask: &[bool]| -> f64 {
        let mut sum_t = DVector::zeros(k);
        for (row, &m) in rm.ranks.row_iter().zip(mask) {
            if m {
                sum_t += row.transpose();
            }
        }
        let d = &sum_t / n1 as f64 - (&totals - &sum_t) / n0 as f64;
        (d.transpose() * &precision * &d)[(0, 0)]
    };

    let mut metadata = meta(&rm);
    metadata.insert("df".into(), rank.to_string());
    let mut result = TestResult {
        method: Method::Multirank,
        statistic: 0.0,
        variance: 2.0 * rank as f64,
        z: 0.0,
        p_two_sided: 1.0,
        inference_mode: inference.mode(),
        flags: Vec::new(),
        metadata,
    };
    if rank == 0 {
        result.flags.push(Flag::DegenerateVariance);
        return Ok(result);
    }
    if rank < k {
        result.flags.push(Flag::SingularCovariance { rank });
    }
    result.statistic = quad(&rm.treatment);
    match inference {
        Inference::Asymptotic => {
            result.p_two_sided = chi_square_sf(result.statistic, rank as f64);
        }
        Inference::Permutation(plan) => {
            let perm = permutation_pvalue(quad, &rm.treatment, &plan)?;
            result.p_two_sided = perm.p;
            result.record_permutation(&plan, &perm);
        }
    }
    result.z = z_from_two_sided_p(result.p_two_sided);
    Ok(result)
}
