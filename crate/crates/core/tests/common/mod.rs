#![allow(dead_code)]

pub mod oracle;
pub mod props;

use std::collections::BTreeMap;

use multiend_core::{Direction, EndpointSpec, Group, KernelKind, KernelSpec, OutcomeValue, Subject, TrialDataset};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SURV: &str = "surv";
pub const CONT: &str = "cont";
pub const BIN: &str = "bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub treated: bool,
    pub time: f64,
    pub event: bool,
    /// Higher is better.
    pub cont: Option<f64>,
    /// Lower is better (`false` beats `true`).
    pub bin: Option<bool>,
}

/// Small three-endpoint cohort: survival (priority 1), continuous
/// (priority 2, may be missing), binary (priority 3, may be missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub rows: Vec<Row>,
}

impl Cohort {
    /// Random cohort with 5..=max_n subjects and at least two complete
    /// cases per group. Values sit on coarse grids so that ties, censoring
    /// and missingness all occur often.
    pub fn random(seed: u64, max_n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let n = rng.random_range(5..=max_n);
            let n1 = rng.random_range(2..=n - 2);
            let mut groups: Vec<bool> = (0..n).map(|i| i < n1).collect();
            groups.shuffle(&mut rng);
            let gridded = rng.random_bool(0.5);
            let rows: Vec<Row> = groups
                .into_iter()
                .map(|treated| Row {
                    treated,
                    time: f64::from(rng.random_range(1..=8u32)) * 10.0,
                    event: rng.random_bool(0.6),
                    cont: (!rng.random_bool(0.15)).then(|| {
                        if gridded {
                            f64::from(rng.random_range(-3..=3i32)) * 1.5
                        } else {
                            rng.random::<f64>() * 6.0 - 3.0
                        }
                    }),
                    bin: (!rng.random_bool(0.1)).then(|| rng.random_bool(0.4)),
                })
                .collect();
            let c = Cohort { rows };
            let cc = c.complete();
            if cc.n1() >= 2 && cc.n0() >= 2 {
                return c;
            }
        }
    }

    pub fn n1(&self) -> usize {
        self.rows.iter().filter(|r| r.treated).count()
    }

    pub fn n0(&self) -> usize {
        self.rows.len() - self.n1()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.treated).collect()
    }

    pub fn complete(&self) -> Cohort {
        Cohort {
            rows: self
                .rows
                .iter()
                .filter(|r| r.cont.is_some() && r.bin.is_some())
                .cloned()
                .collect(),
        }
    }

    pub fn with_mask(&self, mask: &[bool]) -> Cohort {
        Cohort {
            rows: self
                .rows
                .iter()
                .zip(mask)
                .map(|(r, &m)| Row { treated: m, ..r.clone() })
                .collect(),
        }
    }

    pub fn swapped(&self) -> Cohort {
        let mask: Vec<bool> = self.mask().iter().map(|m| !m).collect();
        self.with_mask(&mask)
    }

    pub fn specs() -> Vec<EndpointSpec> {
        vec![
            EndpointSpec::time_to_event(SURV, 1),
            EndpointSpec::continuous(CONT, Direction::HigherIsBetter, 2),
            EndpointSpec::binary(BIN, Direction::LowerIsBetter, 3),
        ]
    }

    pub fn names() -> Vec<String> {
        vec![SURV.into(), CONT.into(), BIN.into()]
    }

    /// Unequal raw weights, normalized by the library.
    pub fn kernels() -> Vec<KernelSpec> {
        vec![
            KernelSpec::new(SURV, KernelKind::GehanSurvival, 2.0),
            KernelSpec::new(CONT, KernelKind::SignedDifference, 1.0),
            KernelSpec::new(BIN, KernelKind::SignedDifference, 0.5),
        ]
    }

    pub const KERNEL_WEIGHTS: [f64; 3] = [2.0 / 3.5, 1.0 / 3.5, 0.5 / 3.5];

    pub fn dataset(&self) -> TrialDataset {
        let subjects = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let group = if r.treated { Group::Treatment } else { Group::Control };
                let mut outcomes = BTreeMap::new();
                outcomes.insert(
                    SURV.to_string(),
                    OutcomeValue::TimeToEvent {
                        time: r.time,
                        event_observed: r.event,
                    },
                );
                outcomes.insert(CONT.to_string(), OutcomeValue::Continuous(r.cont));
                outcomes.insert(BIN.to_string(), OutcomeValue::Binary(r.bin));
                Subject {
                    id: format!("s{i}"),
                    arm: group.to_string(),
                    group,
                    outcomes,
                    covariates: BTreeMap::new(),
                }
            })
            .collect();
        TrialDataset::new(subjects, Self::specs()).expect("valid cohort")
    }
}

/// Relative-or-absolute closeness at the given tolerance.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
