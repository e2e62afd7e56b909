//! Leapfrog on a standard normal: energy drift and time reversal.

use ue_probe::bnn::leapfrog;

fn main() -> ue_probe::Result<()> {
    let grad = |w: &[f64]| Ok(w.iter().map(|v| -v).collect());
    let energy = |w: &[f64], p: &[f64]| 0.5 * w.iter().chain(p).map(|v| v * v).sum::<f64>();
    let (w0, p0) = (vec![1.0, -0.5], vec![0.3, 0.8]);
    for step in [0.5, 0.1, 0.01] {
        let n = (10.0 / step) as usize;
        let (w1, p1) = leapfrog(&w0, &p0, grad, step, n)?;
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (w2, _) = leapfrog(&w1, &back, grad, step, n)?;
        let drift = energy(&w1, &p1) - energy(&w0, &p0);
        let err = w2.iter().zip(&w0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("step {step:5}  energy drift {drift:+.2e}  reversal error {err:.1e}");
    }
    Ok(())
}
