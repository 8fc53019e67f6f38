//! Hierarchical Win/Loss/Tie comparison of two subjects.
//!
//! Endpoints are walked in priority order and the first determinate level
//! decides. At a time-to-event level, `a` wins when `b`'s event is observed
//! and `a` was followed strictly longer than `b`'s event time (Gehan's
//! rule); equal times and pairs where neither condition holds are
//! indeterminate. Continuous and binary levels are determinate when both
//! values are present and differ.

use rayon::prelude::*;

use crate::data::{EndpointKind, EndpointSpec, OutcomeValue, Subject, TrialDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Win,
    Loss,
    Tie,
}

impl Verdict {
    pub fn score(self) -> i64 {
        match self {
            Verdict::Win => 1,
            Verdict::Loss => -1,
            Verdict::Tie => 0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Verdict::Win => Verdict::Loss,
            Verdict::Loss => Verdict::Win,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

/// Verdict for the first subject of a pair, and the priority of the level
/// that decided it (`None` exactly when the pair ties at every level).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonOutcome {
    pub verdict: Verdict,
    pub decided_at_level: Option<u32>,
}

impl ComparisonOutcome {
    pub const TIE: Self = Self {
        verdict: Verdict::Tie,
        decided_at_level: None,
    };
}

/// Survival-level verdict for `a` against `b`, `None` if indeterminate.
pub fn compare_survival(a_time: f64, a_event: bool, b_time: f64, b_event: bool) -> Option<Verdict> {
    if b_event && a_time > b_time {
        Some(Verdict::Win)
    } else if a_event && b_time > a_time {
        Some(Verdict::Loss)
    } else {
        None
    }
}

pub(crate) fn compare_values(a: Option<f64>, b: Option<f64>, higher_is_better: bool) -> Option<Verdict> {
    let (a, b) = (a?, b?);
    if a == b {
        return None;
    }
    let a_higher = a > b;
    Some(if a_higher == higher_is_better {
        Verdict::Win
    } else {
        Verdict::Loss
    })
}

/// Verdict at a single level, `None` if indeterminate.
pub fn compare_level(a: &OutcomeValue, b: &OutcomeValue, spec: &EndpointSpec) -> Option<Verdict> {
    match (*a, *b) {
        (
            OutcomeValue::TimeToEvent {
                time: ta,
                event_observed: ea,
            },
            OutcomeValue::TimeToEvent {
                time: tb,
                event_observed: eb,
            },
        ) => compare_survival(ta, ea, tb, eb),
        _ => compare_values(a.numeric(), b.numeric(), spec.higher_is_better()),
    }
}

fn lookup<'a>(s: &'a Subject, spec: &EndpointSpec) -> Result<&'a OutcomeValue> {
    match s.outcome(&spec.name) {
        Some(v) if v.kind() == spec.kind => Ok(v),
        _ => Err(Error::HierarchyMismatch {
            subject: s.id.clone(),
            endpoint: spec.name.clone(),
        }),
    }
}

/// Compares `a` against `b` by walking `hierarchy` in priority order.
pub fn compare_pair(a: &Subject, b: &Subject, hierarchy: &[EndpointSpec]) -> Result<ComparisonOutcome> {
    let mut ordered: Vec<&EndpointSpec> = hierarchy.iter().collect();
    ordered.sort_by_key(|s| s.priority);
    for spec in ordered {
        let (va, vb) = (lookup(a, spec)?, lookup(b, spec)?);
        if let Some(verdict) = compare_level(va, vb, spec) {
            return Ok(ComparisonOutcome {
                verdict,
                decided_at_level: Some(spec.priority),
            });
        }
    }
    Ok(ComparisonOutcome::TIE)
}

enum Level {
    Survival { time: Vec<f64>, event: Vec<bool> },
    /// NaN marks a missing value.
    Value { values: Vec<f64>, higher_is_better: bool },
}

/// A hierarchy compiled against one dataset into column arrays, so pairs
/// are compared by subject index without map lookups.
pub struct PairwiseComparator {
    levels: Vec<(u32, Level)>,
    n: usize,
}

impl PairwiseComparator {
    pub fn new(ds: &TrialDataset, hierarchy: &[EndpointSpec]) -> Result<Self> {
        let mut ordered = hierarchy.to_vec();
        ordered.sort_by_key(|s| s.priority);
        let mut levels = Vec::with_capacity(ordered.len());
        for spec in &ordered {
            let level = match spec.kind {
                EndpointKind::TimeToEvent => {
                    let mut time = Vec::with_capacity(ds.len());
                    let mut event = Vec::with_capacity(ds.len());
                    for s in ds.subjects() {
                        match lookup(s, spec)? {
                            OutcomeValue::TimeToEvent {
                                time: t,
                                event_observed: e,
                            } => {
                                time.push(*t);
                                event.push(*e);
                            }
                            _ => unreachable!("kind checked by lookup"),
                        }
                    }
                    Level::Survival { time, event }
                }
                EndpointKind::Continuous | EndpointKind::Binary => {
                    let values = ds
                        .subjects()
                        .iter()
                        .map(|s| lookup(s, spec).map(|v| v.numeric().unwrap_or(f64::NAN)))
                        .collect::<Result<Vec<f64>>>()?;
                    Level::Value {
                        values,
                        higher_is_better: spec.higher_is_better(),
                    }
                }
            };
            levels.push((spec.priority, level));
        }
        Ok(Self { levels, n: ds.len() })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn compare(&self, i: usize, j: usize) -> ComparisonOutcome {
        for (priority, level) in &self.levels {
            let verdict = match level {
                Level::Survival { time, event } => compare_survival(time[i], event[i], time[j], event[j]),
                Level::Value {
                    values,
                    higher_is_better,
                } => {
                    let (a, b) = (values[i], values[j]);
                    if a.is_nan() || b.is_nan() {
                        None
                    } else {
                        compare_values(Some(a), Some(b), *higher_is_better)
                    }
                }
            };
            if let Some(verdict) = verdict {
                return ComparisonOutcome {
                    verdict,
                    decided_at_level: Some(*priority),
                };
            }
        }
        ComparisonOutcome::TIE
    }

    #[inline]
    pub fn score(&self, i: usize, j: usize) -> i64 {
        self.compare(i, j).verdict.score()
    }
}

/// Net pairwise score of every subject against the pooled cohort:
/// `u_i = Σ_{j≠i} s(i, j)` with s = +1 / −1 / 0 for win / loss / tie.
///
/// Each unordered pair is compared once; rows are processed in parallel
/// and the per-worker integer accumulators are summed, so the result does
/// not depend on the number of threads.
pub fn pairwise_score_vector(ds: &TrialDataset, hierarchy: &[EndpointSpec]) -> Result<Vec<i64>> {
    let cmp = PairwiseComparator::new(ds, hierarchy)?;
    Ok(score_vector(&cmp))
}

pub(crate) fn score_vector(cmp: &PairwiseComparator) -> Vec<i64> {
    let n = cmp.len();
    (0..n)
        .into_par_iter()
        .fold(
            || vec![0i64; n],
            |mut acc, i| {
                for j in (i + 1)..n {
                    let s = cmp.score(i, j);
                    acc[i] += s;
                    acc[j] -= s;
                }
                acc
            },
        )
        .reduce(
            || vec![0i64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

/// Square bit matrices of pairwise wins and losses: bit j of row i in
/// `win` is set when subject i beats subject j.
pub struct PairMatrix {
    n: usize,
    words: usize,
    win: Vec<u64>,
    loss: Vec<u64>,
}

impl PairMatrix {
    pub fn build(cmp: &PairwiseComparator) -> Self {
        let n = cmp.len();
        let words = n.div_ceil(64);
        let rows: Vec<(Vec<u64>, Vec<u64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut w = vec![0u64; words];
                let mut l = vec![0u64; words];
                for j in 0..n {
                    match cmp.compare(i, j).verdict {
                        Verdict::Win => w[j / 64] |= 1 << (j % 64),
                        Verdict::Loss => l[j / 64] |= 1 << (j % 64),
                        Verdict::Tie => {}
                    }
                }
                (w, l)
            })
            .collect();
        let mut win = Vec::with_capacity(n * words);
        let mut loss = Vec::with_capacity(n * words);
        for (w, l) in rows {
            win.extend(w);
            loss.extend(l);
        }
        Self { n, words, win, loss }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words(&self) -> usize {
        self.words
    }

    /// Packs a boolean mask into the matrix's word layout.
    pub fn pack(&self, mask: &[bool]) -> Vec<u64> {
        let mut bits = vec![0u64; self.words];
        for (j, &m) in mask.iter().enumerate() {
            if m {
                bits[j / 64] |= 1 << (j % 64);
            }
        }
        bits
    }

    fn count(rows: &[u64], words: usize, i: usize, set: &[u64]) -> u64 {
        rows[i * words..(i + 1) * words]
            .iter()
            .zip(set)
            .map(|(r, s)| u64::from((r & s).count_ones()))
            .sum()
    }

    /// Number of members of `set` that subject i beats.
    pub fn wins_against(&self, i: usize, set: &[u64]) -> u64 {
        Self::count(&self.win, self.words, i, set)
    }

    /// Number of members of `set` that beat subject i.
    pub fn losses_against(&self, i: usize, set: &[u64]) -> u64 {
        Self::count(&self.loss, self.words, i, set)
    }

    /// Wins and losses of the `mask` group against its complement.
    pub fn tally(&self, mask: &[bool]) -> (u64, u64) {
        let other: Vec<bool> = mask.iter().map(|m| !m).collect();
        let other = self.pack(&other);
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold((0, 0), |(w, l), (i, _)| {
                (w + self.wins_against(i, &other), l + self.losses_against(i, &other))
            })
    }
}
