//! Train a dropout MLP on the toy data and compare deterministic and
//! MC-averaged predictions.

use ue_probe::datasets::make_toy2d;
use ue_probe::mcdropout::{mc_average, MCDropoutConfig};
use ue_probe::nnet::{mlp_init, predict_proba, train, TrainConfig};

fn main() -> ue_probe::Result<()> {
    let data = make_toy2d(200, 0)?;
    let cfg = TrainConfig {
        epochs: 50,
        dropout_rate: 0.5,
        ..Default::default()
    };
    let fit = train(&mlp_init(&[2, 300, 2], 1)?, &data, &cfg)?;
    println!("train accuracy {:.4}", fit.train_accuracy);
    let mc = MCDropoutConfig {
        n_samples: 100,
        dropout_rate: 0.5,
        seed: 2,
    };
    for x in [[0.0, 0.0], [1.0, 1.0], [6.0, 6.0], [-6.0, 6.0]] {
        let det = predict_proba(&fit.params, &x)?;
        let avg = mc_average(&fit.params, &x, &mc)?;
        println!(
            "x={x:?}  p1 {:.4} -> {:.4}  entropy {:.4} -> {:.4}",
            det.get(1),
            avg.get(1),
            det.entropy(),
            avg.entropy()
        );
    }
    Ok(())
}
