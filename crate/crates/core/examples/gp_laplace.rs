//! Laplace GP classifier on the toy data: length scale by marginal likelihood,
//! then predictive entropy near and far from the training points.

use ue_probe::datasets::make_toy2d;
use ue_probe::gp::{fit_hyperparams, gp_entropy, length_scale_grid, predict_latent, LaplaceOptions};

fn main() -> ue_probe::Result<()> {
    let data = make_toy2d(100, 0)?;
    let (params, state) = fit_hyperparams(&data, &length_scale_grid(-3, 3), LaplaceOptions::default())?;
    println!(
        "length scale {} (log marginal {:.3}, {} Newton iterations)",
        params.length_scale,
        state.log_marginal(),
        state.iterations()
    );
    for x in [[-1.5, -1.5], [0.0, 0.0], [1.5, 1.5], [6.0, -6.0], [20.0, 20.0]] {
        let (mean, var) = predict_latent(&state, &x)?;
        println!(
            "x={x:?}  latent {mean:+.4} ± {:.4}  entropy {:.4}",
            var.sqrt(),
            gp_entropy(&state, &x)?
        );
    }
    Ok(())
}
