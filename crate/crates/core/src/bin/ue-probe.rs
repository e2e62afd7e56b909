use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ue_probe::harness::{
    run_experiment, threads_from_env, write_report, Experiment, ExperimentConfig, Method, ModelStore, ReportFormat,
};
use ue_probe::Error;

/// Train uncertainty estimators and write per-probe entropy reports.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// toy2d, mnist-interp, digit-table or theorem-check
    experiment: Experiment,
    /// TOML settings file; omitted keys keep their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
    /// Comma-separated subset of gp,mcdropout,mfvi,hmc
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Training images (IDX); test files default to the t10k siblings
    #[arg(long)]
    mnist_images: Option<PathBuf>,
    #[arg(long)]
    mnist_labels: Option<PathBuf>,
    #[arg(long)]
    save_models: Option<PathBuf>,
    #[arg(long)]
    load_models: Option<PathBuf>,
}

fn is_assertion(e: &Error) -> bool {
    match e {
        Error::AssertionFailure { .. } => true,
        Error::Method { source, .. } => is_assertion(source),
        _ => false,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.experiment;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(methods) = cli.methods {
        cfg.methods = methods;
    }
    if cli.mnist_images.is_some() {
        cfg.mnist.train_images = cli.mnist_images;
    }
    if cli.mnist_labels.is_some() {
        cfg.mnist.train_labels = cli.mnist_labels;
    }
    let store = ModelStore {
        save_dir: cli.save_models,
        load_dir: cli.load_models,
    };
    let report = run_experiment(&cfg, &store, threads_from_env()?)?;
    write_report(&report, &cli.out, cli.format)
}

fn main() -> ExitCode {
    // Usage errors exit 1; 2 is reserved for failed theorem assertions.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ue-probe: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if is_assertion(&e) { 2 } else { 1 })
        }
    }
}
