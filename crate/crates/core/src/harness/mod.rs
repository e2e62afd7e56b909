//! End-to-end experiments over all four methods, deterministic reports and
//! the run entry point used by the command-line tool.

mod config;
mod experiments;
mod models;
mod report;

pub use config::{
    EncoderConfig, Experiment, ExperimentConfig, GpConfig, HmcBlock, HmcNet, McDropoutBlock, Method, MfviBlock,
    MfviNet, MlpConfig, MnistConfig, NetConfig, TheoremConfig, ToyConfig,
};
pub use experiments::{
    digit_key, run_digit_table, run_experiment, run_mnist_interp, run_theorem_check, run_toy2d, t_key,
    threads_from_env, TOY_FAR_POINTS, TOY_ORIGIN,
};
pub use models::{kstar_inf, Domain, ModelStore, Prediction, TrainedModel};
pub use report::{fmt_sig, write_report, ReportFormat, ReportMetadata, ReportRow, Summary, UncertaintyReport};
