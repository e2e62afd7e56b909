//! Entropy along straight lines between test 0s and 1s, extended past both
//! ends. Usage: `mnist_interp [images labels] [methods...]`; defaults to the
//! bundled data and mcdropout.

use std::path::PathBuf;

use ue_probe::harness::{run_mnist_interp, t_key, Experiment, ExperimentConfig, Method, ModelStore};

fn main() -> ue_probe::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (files, rest) = match args.as_slice() {
        [images, labels, rest @ ..] if !images.parse::<Method>().is_ok() => {
            ((PathBuf::from(images), PathBuf::from(labels)), rest)
        }
        rest => {
            let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-npm");
            (
                (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")),
                rest,
            )
        }
    };
    let methods = if rest.is_empty() {
        vec![Method::McDropout]
    } else {
        rest.iter().map(|a| a.parse()).collect::<ue_probe::Result<_>>()?
    };
    let mut cfg = ExperimentConfig {
        experiment: Experiment::MnistInterp,
        methods: methods.clone(),
        ..Default::default()
    };
    cfg.mnist.train_images = Some(files.0);
    cfg.mnist.train_labels = Some(files.1);
    cfg.mnist.n_pairs = 20;
    let report = run_mnist_interp(&cfg, &ModelStore::default())?;
    let ts: Vec<f64> = (0..cfg.mnist.t_points)
        .map(|j| cfg.mnist.t_min + (cfg.mnist.t_max - cfg.mnist.t_min) * j as f64 / (cfg.mnist.t_points - 1) as f64)
        .collect();
    for m in methods {
        println!(
            "{m}: test accuracy {:.4}",
            report.summary(m, "test_accuracy").unwrap_or(f64::NAN)
        );
        for &t in &ts {
            let h = report.summary(m, &t_key(t)).unwrap_or(f64::NAN);
            println!(
                "  t={t:+.1}  {h:.4}  {}",
                "#".repeat((h / std::f64::consts::LN_2 * 40.0) as usize)
            );
        }
    }
    Ok(())
}
