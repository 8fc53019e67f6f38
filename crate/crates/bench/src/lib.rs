//! Shared fixtures for the benchmarks.

use multiend_core::{simulate_trial, SimConfig, TrialDataset};

/// A null three-endpoint cohort with `n_per_group` subjects per arm.
pub fn cohort(n_per_group: usize) -> TrialDataset {
    simulate_trial(&SimConfig::mixed(n_per_group, 0.0, 42)).expect("valid preset")
}

/// Same as [`cohort`] with a treatment benefit.
pub fn shifted_cohort(n_per_group: usize, effect: f64) -> TrialDataset {
    simulate_trial(&SimConfig::mixed(n_per_group, effect, 42)).expect("valid preset")
}
