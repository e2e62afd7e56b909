//! Hamiltonian Monte Carlo over the weights of a small network.

use ue_probe::bnn::{hmc_sample, posterior_predict, HMCConfig};
use ue_probe::datasets::make_toy2d;
use ue_probe::nnet::MLPParams;

fn main() -> ue_probe::Result<()> {
    let sizes = [2, 32, 2];
    let data = make_toy2d(100, 0)?;
    let cfg = HMCConfig {
        step_size: 0.002,
        trajectory_length: 5,
        n_samples: 100,
        burn_in: 100,
        ..Default::default()
    };
    let chain = hmc_sample(&data, &sizes, &cfg)?;
    println!(
        "{} samples, acceptance {:.3} (burn-in {:.3})",
        chain.samples.len(),
        chain.accept_rate,
        chain.burn_in_accept_rate
    );
    let nets = chain
        .samples
        .iter()
        .map(|w| MLPParams::from_flat(&sizes, w.clone()))
        .collect::<ue_probe::Result<Vec<_>>>()?;
    for x in [[0.0, 0.0], [1.0, 1.0], [6.0, 6.0]] {
        let p = posterior_predict(&nets, &x)?;
        println!("x={x:?}  p1 {:.4}  entropy {:.4}", p.get(1), p.entropy());
    }
    Ok(())
}
