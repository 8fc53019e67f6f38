//! `multiend`: run multiple-endpoint analyses and simulation studies.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 file or I/O
//! error, 4 data error, 5 analysis error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiend_core::report::{
    run_analysis, run_simulation, run_summary, write_simulation, OutputFormat, RunConfig, SimStudyConfig, SUMMARY_CSV,
    SUMMARY_TXT,
};
use multiend_core::simgen::rejection_summary_text;
use multiend_core::{Contrast, Error, InferenceMode, Method};

const CONFIG_ENV: &str = "MULTIEND_CONFIG";

#[derive(Parser)]
#[command(name = "multiend", version, about = "Two-group tests for multiple clinical endpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline table plus the selected global tests.
    Analyze(AnalyzeArgs),
    /// Rejection-rate study on simulated trials.
    Simulate(SimulateArgs),
    /// Baseline characteristics table only.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: text, csv or both.
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Trial CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// `default` or treatment and control arms as `1,2,3:0`.
    #[arg(long)]
    contrast: Option<String>,
    /// Comma-separated subset of rank_sum, fs, win_ratio, multirank, global_u.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// asymptotic, permutation or exact.
    #[arg(long)]
    inference: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n_per_group: Option<usize>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "text" => Ok(OutputFormat::Text),
        "csv" => Ok(OutputFormat::Csv),
        "both" => Ok(OutputFormat::Both),
        _ => Err(format!("unknown format `{s}`")),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, Error> {
    names.iter().filter(|n| !n.trim().is_empty()).map(|n| n.parse()).collect()
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Toml(_)
        | Error::InvalidEndpoint(_)
        | Error::KernelKindMismatch { .. }
        | Error::InvalidWeights(_)
        | Error::InvalidCorrelation(_)
        | Error::InvalidSimConfig(_) => 2,
        Error::FileNotFound(_) | Error::Io(_) => 3,
        Error::Csv(_)
        | Error::SchemaMismatch(_)
        | Error::Parse { .. }
        | Error::DuplicateSubject(_)
        | Error::EmptyGroup(_)
        | Error::MissingColumn(_)
        | Error::InvalidContrast(_)
        | Error::HierarchyMismatch { .. }
        | Error::EmptyAfterExclusion => 4,
        Error::ExactTooLarge { .. } => 5,
    }
}

fn load_run_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(f) = common.format {
        cfg.output.format = f;
    }
    Ok(cfg)
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

fn analyze(args: AnalyzeArgs) -> Result<(), Error> {
    let mut cfg = load_run_config(&args.common)?;
    if let Some(input) = args.input {
        cfg.input = Some(input);
    }
    if let Some(seed) = args.seed {
        cfg.permutation.seed = seed;
    }
    if let Some(b) = args.replicates {
        cfg.permutation.replicates = b;
    }
    if let Some(c) = &args.contrast {
        cfg.derivation.contrast = Contrast::parse(c)?;
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(mode) = &args.inference {
        cfg.inference = mode.parse::<InferenceMode>()?;
    }
    let bundle = run_analysis(&cfg)?;
    println!("{}", bundle.summary.to_text());
    println!("{}", bundle.results_text());
    report_written(&bundle.write(&cfg.output.dir, cfg.output.format)?);
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut cfg = match &args.common.config {
        Some(p) => SimStudyConfig::from_file(p)?,
        None => SimStudyConfig::default(),
    };
    if let Some(out) = &args.common.out {
        cfg.output.dir = out.clone();
    }
    if let Some(f) = args.common.format {
        cfg.output.format = f;
    }
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
        cfg.permutation.seed = seed;
    }
    if let Some(b) = args.replicates {
        cfg.permutation.replicates = b;
    }
    if let Some(m) = &args.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(t) = args.trials {
        cfg.n_trials = t;
    }
    if let Some(n) = args.n_per_group {
        cfg.sim.n_per_group = n;
    }
    let reports = run_simulation(&cfg)?;
    println!("{}", rejection_summary_text(&reports));
    report_written(&write_simulation(&reports, &cfg.output.dir, cfg.output.format)?);
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<(), Error> {
    let mut cfg = load_run_config(&args.common)?;
    if let Some(input) = args.input {
        cfg.input = Some(input);
    }
    let table = run_summary(&cfg)?;
    println!("{}", table.to_text());
    let dir: &Path = &cfg.output.dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if cfg.output.format != OutputFormat::Csv {
        let p = dir.join(SUMMARY_TXT);
        std::fs::write(&p, table.to_text())?;
        written.push(p);
    }
    if cfg.output.format != OutputFormat::Text {
        let p = dir.join(SUMMARY_CSV);
        table.write_csv(std::fs::File::create(&p)?)?;
        written.push(p);
    }
    report_written(&written);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Summarize(a) => summarize(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
