//! Backpropagation against central differences for several architectures.

use ue_probe::datasets::make_toy2d;
use ue_probe::nnet::{gradient_check, mlp_init};

fn main() -> ue_probe::Result<()> {
    let data = make_toy2d(10, 0)?;
    for sizes in [vec![2, 2], vec![2, 300, 2], vec![2, 64, 32, 2], vec![2, 512, 128, 2]] {
        let p = mlp_init(&sizes, 1)?;
        let r = gradient_check(&p, data.features().as_slice(), data.labels(), None, 1e-3, 50, 1e-5, 2)?;
        println!(
            "{sizes:?}: max relative error {:.2e} over {} coordinates ({} skipped at ReLU kinks)",
            r.max_relative_error, r.checked, r.skipped
        );
    }
    Ok(())
}
