//! Mean MC-dropout entropy per test digit for a 0-vs-1 network.

use std::path::PathBuf;

use ue_probe::harness::{digit_key, run_digit_table, Experiment, ExperimentConfig, Method, ModelStore};

fn main() -> ue_probe::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-npm");
    let mut cfg = ExperimentConfig {
        experiment: Experiment::DigitTable,
        methods: vec![Method::McDropout],
        ..Default::default()
    };
    cfg.mnist.train_images = Some(dir.join("train-images-idx3-ubyte"));
    cfg.mnist.train_labels = Some(dir.join("train-labels-idx1-ubyte"));
    let report = run_digit_table(&cfg, &ModelStore::default())?;
    println!("digit  mean entropy");
    for d in 0..10 {
        println!(
            "{d:5}  {:.4}",
            report.summary(Method::McDropout, &digit_key(d)).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
