//! Runs any of the five procedures by name.

use serde::{Deserialize, Serialize};

use crate::data::{EndpointSpec, TrialDataset};
use crate::error::Result;
use crate::global_u::{global_u_test, KernelSpec};
use crate::pairwise::{fs_test, win_ratio_test};
use crate::rank::{multirank_test, obrien_test, RankVariance};
use crate::result::{Inference, Method, TestResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodOptions {
    pub rank_variance: RankVariance,
    /// Global-U kernels; empty means the natural kernel of every
    /// hierarchy endpoint with equal weights.
    pub kernels: Vec<KernelSpec>,
}

/// Runs `method` on `ds`. `hierarchy` doubles as the endpoint list for
/// the rank-based tests and the default kernel set for the global U.
pub fn run_method(
    ds: &TrialDataset,
    method: Method,
    hierarchy: &[EndpointSpec],
    options: &MethodOptions,
    inference: Inference,
) -> Result<TestResult> {
    let names: Vec<String> = hierarchy.iter().map(|s| s.name.clone()).collect();
    match method {
        Method::RankSum => obrien_test(ds, &names, options.rank_variance, inference),
        Method::Fs => fs_test(ds, hierarchy, inference),
        Method::WinRatio => Ok(win_ratio_test(ds, hierarchy, inference)?.to_test_result()),
        Method::Multirank => multirank_test(ds, &names, inference),
        Method::GlobalU => {
            let kernels = if options.kernels.is_empty() {
                hierarchy.iter().map(KernelSpec::natural).collect()
            } else {
                options.kernels.clone()
            };
            global_u_test(ds, &kernels, inference)
        }
    }
}
