//! Mean-field variational inference for a small Bayesian network.

use ue_probe::bnn::{mfvi_train, posterior_mean_network, posterior_predict, MfviConfig};
use ue_probe::datasets::make_toy2d;
use ue_probe::nnet::{accuracy, MLPParams};
use ue_probe::numerics::RngStream;

fn main() -> ue_probe::Result<()> {
    let sizes = [2, 64, 2];
    let data = make_toy2d(200, 0)?;
    let cfg = MfviConfig {
        epochs: 100,
        ..Default::default()
    };
    let fit = mfvi_train(&sizes, &data, &cfg)?;
    for (epoch, elbo) in fit.epoch_elbos.iter().enumerate().step_by(20) {
        println!("epoch {epoch:3}  elbo {elbo:.2}");
    }
    let q = &fit.posterior;
    println!(
        "mean network accuracy {:.4}",
        accuracy(&posterior_mean_network(q, &sizes)?, &data)?
    );
    let mut rng = RngStream::new(7);
    let draws = (0..50)
        .map(|_| MLPParams::from_flat(&sizes, q.sample(&mut rng)))
        .collect::<ue_probe::Result<Vec<_>>>()?;
    for x in [[0.0, 0.0], [1.0, 1.0], [6.0, 6.0]] {
        let p = posterior_predict(&draws, &x)?;
        println!("x={x:?}  p1 {:.4}  entropy {:.4}", p.get(1), p.entropy());
    }
    Ok(())
}
