//! Two-group comparisons of multiple, mixed-type clinical endpoints.
//!
//! The crate covers rank-sum and multivariate rank tests, hierarchical
//! pairwise comparisons (the FS statistic and the win ratio), a weighted
//! global U statistic, a shared permutation engine, a simulation
//! generator for operating-characteristic studies, and a config-driven
//! reporting layer.

pub mod analysis;
pub mod data;
pub mod error;
pub mod global_u;
pub mod kernel;
pub mod pairwise;
pub mod rank;
pub mod report;
pub mod resampling;
pub mod result;
pub mod simgen;

pub use analysis::{run_method, MethodOptions};
pub use data::{
    baseline_summary, derive_endpoints, load_trial_csv, read_trial_csv, ColumnMapping, Contrast, DerivationConfig,
    Direction, EndpointKind, EndpointSpec, Group, MissingPolicy, OutcomeValue, Subject, SummaryConfig, SummaryTable,
    TrialDataset,
};
pub use error::{Error, Result};
pub use global_u::{global_u_test, KernelKind, KernelSpec};
pub use kernel::{compare_pair, pairwise_score_vector, ComparisonOutcome, Verdict};
pub use pairwise::{fs_test, win_ratio_test, WinRatio, WinRatioResult};
pub use rank::{multirank_test, obrien_test, RankVariance};
pub use resampling::{permutation_pvalue, PermutationMode, PermutationPlan, PermutationResult};
pub use result::{Flag, Inference, InferenceMode, Method, TestResult};
pub use simgen::{error_rate_study, simulate_trial, Marginal, RejectionReport, SimConfig, SimEndpoint};
