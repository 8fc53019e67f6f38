//! Config-driven analysis and simulation runs, and their text/CSV output.
//!
//! Configuration is TOML. A minimal analysis file:
//!
//! ```toml
//! input = "data/ACTG175.csv"
//! methods = ["rank_sum", "fs", "win_ratio", "multirank"]
//! inference = "permutation"
//!
//! [permutation]
//! replicates = 10000
//! seed = 175
//!
//! [output]
//! dir = "results"
//! ```
//!
//! Every other table (`mapping`, `derivation`, `summary`, `options`) has
//! defaults for the ACTG 175 public data layout.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{run_method, MethodOptions};
use crate::data::{
    baseline_summary, derive_endpoints, load_trial_csv, render_aligned, ColumnMapping, DerivationConfig,
    EndpointSpec, SummaryConfig, SummaryTable, TrialDataset,
};
use crate::error::{Error, Result};
use crate::resampling::{PermutationMode, PermutationPlan, DEFAULT_EXACT_CAP, DEFAULT_REPLICATES, DEFAULT_SEED};
use crate::result::{format_p, Flag, Inference, InferenceMode, Method, TestResult};
use crate::simgen::{error_rate_study, rejection_summary_text, write_rejection_csv, RejectionReport, SimConfig};

pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const RESULTS_TXT: &str = "results.txt";
pub const RESULTS_CSV: &str = "results.csv";
pub const SIMULATION_TXT: &str = "simulation_summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermutationConfig {
    pub replicates: usize,
    pub seed: u64,
    pub exact_cap: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            replicates: DEFAULT_REPLICATES,
            seed: DEFAULT_SEED,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Text,
    Csv,
    #[default]
    Both,
}

impl OutputFormat {
    fn text(self) -> bool {
        self != OutputFormat::Csv
    }

    fn csv(self) -> bool {
        self != OutputFormat::Text
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            format: OutputFormat::Both,
        }
    }
}

fn inference_for(mode: InferenceMode, p: &PermutationConfig) -> Inference {
    match mode {
        InferenceMode::Asymptotic => Inference::Asymptotic,
        InferenceMode::Permutation => Inference::Permutation(PermutationPlan {
            mode: PermutationMode::MonteCarlo {
                replicates: p.replicates,
            },
            master_seed: p.seed,
            exact_cap: p.exact_cap,
        }),
        InferenceMode::Exact => Inference::Permutation(PermutationPlan {
            mode: PermutationMode::Exact,
            master_seed: p.seed,
            exact_cap: p.exact_cap,
        }),
    }
}

fn check_methods(methods: &[Method]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::config("methods", "at least one method is required"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::config(format!("methods[{i}]"), format!("`{m}` listed twice")));
        }
    }
    Ok(())
}

fn check_permutation(mode: InferenceMode, p: &PermutationConfig) -> Result<()> {
    if mode == InferenceMode::Permutation && p.replicates == 0 {
        return Err(Error::config("permutation.replicates", "must be at least 1"));
    }
    Ok(())
}

fn read_config_file(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub inference: InferenceMode,
    pub permutation: PermutationConfig,
    pub mapping: ColumnMapping,
    pub derivation: DerivationConfig,
    pub summary: SummaryConfig,
    /// Derived endpoint names in priority order; empty keeps the default
    /// order.
    pub hierarchy: Vec<String>,
    pub options: MethodOptions,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            methods: vec![Method::RankSum, Method::Fs, Method::WinRatio, Method::Multirank],
            inference: InferenceMode::Permutation,
            permutation: PermutationConfig::default(),
            mapping: ColumnMapping::default(),
            derivation: DerivationConfig::default(),
            summary: SummaryConfig::default(),
            hierarchy: Vec::new(),
            options: MethodOptions::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config file. Relative `input` and `output.dir` paths are
    /// resolved against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&read_config_file(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(input) = &cfg.input {
            if input.is_relative() {
                cfg.input = Some(base.join(input));
            }
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_methods(&self.methods)?;
        check_permutation(self.inference, &self.permutation)?;
        self.derivation.contrast.validate()?;
        for (i, name) in self.hierarchy.iter().enumerate() {
            if self.hierarchy[..i].contains(name) {
                return Err(Error::config(format!("hierarchy[{i}]"), format!("`{name}` listed twice")));
            }
        }
        Ok(())
    }

    pub fn inference(&self) -> Inference {
        inference_for(self.inference, &self.permutation)
    }

    fn input_path(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::config("input", "no input file given"))
    }

    /// Endpoint hierarchy for the derived data, re-prioritized in the
    /// configured order.
    fn resolve_hierarchy(&self, derived: &TrialDataset) -> Result<Vec<EndpointSpec>> {
        if self.hierarchy.is_empty() {
            return Ok(derived.hierarchy());
        }
        let mut specs = Vec::with_capacity(self.hierarchy.len());
        for (i, name) in self.hierarchy.iter().enumerate() {
            let spec = derived.spec(name).ok_or_else(|| {
                Error::config(format!("hierarchy[{i}]"), format!("endpoint `{name}` is not declared"))
            })?;
            specs.push(EndpointSpec {
                priority: i as u32 + 1,
                ..spec.clone()
            });
        }
        Ok(specs)
    }
}

/// Everything an analysis run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub summary: SummaryTable,
    pub results: Vec<TestResult>,
    pub contrast: String,
    pub n_treatment: usize,
    pub n_control: usize,
}

/// Loads, summarizes and derives the input, then runs each configured
/// method in order. Methods are independent: each sees the same data and
/// the same permutation seed.
pub fn run_analysis(cfg: &RunConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let raw = load_trial_csv(cfg.input_path()?, &cfg.mapping)?;
    let summary = baseline_summary(&raw, &cfg.summary);
    let derived = derive_endpoints(&raw, &cfg.derivation)?;
    let hierarchy = cfg.resolve_hierarchy(&derived)?;
    let contrast = cfg.derivation.contrast.label();
    let results = cfg
        .methods
        .iter()
        .map(|&m| {
            let mut r = run_method(&derived, m, &hierarchy, &cfg.options, cfg.inference())?;
            r.metadata.insert("contrast".into(), contrast.clone());
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReportBundle {
        summary,
        results,
        contrast,
        n_treatment: derived.n_treatment(),
        n_control: derived.n_control(),
    })
}

/// Baseline table only.
pub fn run_summary(cfg: &RunConfig) -> Result<SummaryTable> {
    let raw = load_trial_csv(cfg.input_path()?, &cfg.mapping)?;
    Ok(baseline_summary(&raw, &cfg.summary))
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::RankSum => "Rank Sum Test",
        Method::Fs => "FS Test",
        Method::WinRatio => "Win Ratio",
        Method::Multirank => "Multirank Test",
        Method::GlobalU => "Global U",
    }
}

fn sig(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.4}");
        if s.len() > 12 {
            format!("{x:.4e}")
        } else {
            s
        }
    } else {
        x.to_string()
    }
}

pub fn results_text(results: &[TestResult], contrast: &str) -> String {
    let headers: Vec<String> = ["Method", "Statistic", "z", "p-value", "Inference", "Seed", "Flags"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let stat = match (r.method, r.metadata.get("win_ratio")) {
                (Method::WinRatio, Some(wr)) => format!("WR={}", wr.parse::<f64>().map(sig).unwrap_or(wr.clone())),
                _ => sig(r.statistic),
            };
            vec![
                method_label(r.method).to_string(),
                stat,
                sig(r.z),
                format_p(r.p_two_sided),
                r.inference_mode.as_str().to_string(),
                r.metadata.get("seed").cloned().unwrap_or_else(|| "-".into()),
                join_flags(&r.flags),
            ]
        })
        .collect();
    format!("Contrast: {contrast}\n{}", render_aligned(&headers, &body))
}

const RESULT_COLUMNS: [&str; 9] = [
    "method",
    "statistic",
    "variance",
    "z",
    "p_two_sided",
    "inference_mode",
    "seed",
    "flags",
    "metadata",
];

fn join_flags(flags: &[Flag]) -> String {
    flags.iter().map(Flag::to_string).collect::<Vec<_>>().join("|")
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace(';', "\\;")
}

/// `k=v;k=v`, with `\` and `;` backslash-escaped inside values.
fn encode_metadata(meta: &BTreeMap<String, String>) -> String {
    meta.iter()
        .map(|(k, v)| format!("{}={}", escape(k), escape(v)))
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_metadata(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if text.is_empty() {
        return Ok(out);
    }
    let mut entries = vec![String::new()];
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => entries.last_mut().unwrap().push(chars.next().unwrap_or('\\')),
            ';' => entries.push(String::new()),
            c => entries.last_mut().unwrap().push(c),
        }
    }
    for e in entries {
        let (k, v) = e
            .split_once('=')
            .ok_or_else(|| Error::config("metadata", format!("entry `{e}` has no `=`")))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

pub fn write_results_csv<W: Write>(results: &[TestResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in results {
        w.write_record([
            r.method.to_string(),
            r.statistic.to_string(),
            r.variance.to_string(),
            r.z.to_string(),
            r.p_two_sided.to_string(),
            r.inference_mode.as_str().to_string(),
            r.metadata.get("seed").cloned().unwrap_or_default(),
            join_flags(&r.flags),
            encode_metadata(&r.metadata),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_results_csv`].
pub fn parse_results_csv<R: Read>(input: R) -> Result<Vec<TestResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        let missing = RESULT_COLUMNS
            .iter()
            .find(|c| !header.iter().any(|h| h == **c))
            .unwrap_or(&"metadata");
        return Err(Error::SchemaMismatch(missing.to_string()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |col: usize| -> Result<f64> {
            rec[col].parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: RESULT_COLUMNS[col].into(),
                message: format!("`{}` is not a number", &rec[col]),
            })
        };
        let flags = if rec[7].is_empty() {
            Vec::new()
        } else {
            rec[7].split('|').map(str::parse).collect::<Result<Vec<Flag>>>()?
        };
        out.push(TestResult {
            method: rec[0].parse()?,
            statistic: num(1)?,
            variance: num(2)?,
            z: num(3)?,
            p_two_sided: num(4)?,
            inference_mode: rec[5].parse()?,
            flags,
            metadata: decode_metadata(&rec[8])?,
        });
    }
    Ok(out)
}

impl ReportBundle {
    pub fn results_text(&self) -> String {
        results_text(&self.results, &self.contrast)
    }

    /// Writes the summary and results tables into `dir`, returning the
    /// paths written.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if format.text() {
            let p = dir.join(SUMMARY_TXT);
            fs::write(&p, self.summary.to_text())?;
            written.push(p);
            let p = dir.join(RESULTS_TXT);
            fs::write(&p, self.results_text())?;
            written.push(p);
        }
        if format.csv() {
            let p = dir.join(SUMMARY_CSV);
            self.summary.write_csv(fs::File::create(&p)?)?;
            written.push(p);
            let p = dir.join(RESULTS_CSV);
            write_results_csv(&self.results, fs::File::create(&p)?)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// A type-I-error or power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimStudyConfig {
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub n_trials: usize,
    pub inference: InferenceMode,
    pub permutation: PermutationConfig,
    pub options: MethodOptions,
    pub output: OutputConfig,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            methods: Method::ALL.to_vec(),
            alpha: 0.05,
            n_trials: 2000,
            inference: InferenceMode::Permutation,
            permutation: PermutationConfig {
                replicates: 999,
                ..PermutationConfig::default()
            },
            options: MethodOptions::default(),
            output: OutputConfig {
                dir: PathBuf::from("simulation"),
                format: OutputFormat::Both,
            },
        }
    }
}

impl SimStudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&read_config_file(path)?)?;
        if cfg.output.dir.is_relative() {
            cfg.output.dir = path.parent().unwrap_or(Path::new("")).join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_methods(&self.methods)?;
        check_permutation(self.inference, &self.permutation)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie in (0, 1)"));
        }
        if self.n_trials == 0 {
            return Err(Error::config("n_trials", "must be at least 1"));
        }
        self.sim.validate()
    }
}

/// One rejection report per configured method.
pub fn run_simulation(cfg: &SimStudyConfig) -> Result<Vec<RejectionReport>> {
    cfg.validate()?;
    let inference = inference_for(cfg.inference, &cfg.permutation);
    cfg.methods
        .iter()
        .map(|&m| error_rate_study(&cfg.sim, m, &cfg.options, cfg.alpha, cfg.n_trials, inference))
        .collect()
}

/// Writes `rejection_<method>.csv` per report plus a text summary.
pub fn write_simulation(reports: &[RejectionReport], dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        for r in reports {
            let p = dir.join(format!("rejection_{}.csv", r.method));
            write_rejection_csv(std::slice::from_ref(r), fs::File::create(&p)?)?;
            written.push(p);
        }
    }
    if format.text() {
        let p = dir.join(SIMULATION_TXT);
        fs::write(&p, rejection_summary_text(reports))?;
        written.push(p);
    }
    Ok(written)
}
