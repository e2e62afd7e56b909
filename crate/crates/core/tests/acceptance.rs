//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and a
//! summary. A panic always exits non-zero; failing criteria do so only when
//! `UE_ACCEPTANCE_STRICT=1`. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 6`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ue_probe::bnn::{
    elbo_estimate, hmc_run, leapfrog, log_posterior_gradient_check, mfvi_fit, BatchLikelihood, HMCConfig,
    IsotropicGaussian, MfviConfig,
};
use ue_probe::datasets::{filter_classes, load_idx, make_toy2d, Dataset};
use ue_probe::gp::{laplace_fit, link_integral, predict_latent, KernelParams, LaplaceOptions, Link};
use ue_probe::harness::{
    digit_key, run_experiment, t_key, write_report, Experiment, ExperimentConfig, Method, ModelStore, ReportFormat,
    UncertaintyReport,
};
use ue_probe::nnet::{gradient_check, mlp_init};
use ue_probe::numerics::RngStream;
use ue_probe::Result;

const LN2: f64 = std::f64::consts::LN_2;

/// Sub-checks of one criterion.
#[derive(Default)]
struct Checks {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Checks {
    fn expect(&mut self, ok: bool, msg: impl Into<String>) {
        let msg = msg.into();
        if ok {
            self.notes.push(msg);
        } else {
            self.failures.push(msg);
        }
    }
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-npm")
}

fn config(experiment: Experiment, methods: &[Method]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        experiment,
        methods: methods.to_vec(),
        ..Default::default()
    };
    cfg.mnist.train_images = Some(mnist_dir().join("train-images-idx3-ubyte"));
    cfg.mnist.train_labels = Some(mnist_dir().join("train-labels-idx1-ubyte"));
    cfg
}

fn timed(cfg: &ExperimentConfig, threads: Option<usize>) -> (Result<UncertaintyReport>, Duration) {
    let start = Instant::now();
    let r = run_experiment(cfg, &ModelStore::default(), threads);
    (r, start.elapsed())
}

fn shared(
    cell: &'static OnceLock<(UncertaintyReport, Duration)>,
    cfg: impl FnOnce() -> ExperimentConfig,
) -> &'static (UncertaintyReport, Duration) {
    cell.get_or_init(|| {
        let (r, t) = timed(&cfg(), None);
        (r.expect("experiment run"), t)
    })
}

fn toy_report() -> &'static (UncertaintyReport, Duration) {
    static CELL: OnceLock<(UncertaintyReport, Duration)> = OnceLock::new();
    shared(&CELL, || config(Experiment::Toy2d, &Method::ALL))
}

fn interp_report() -> &'static (UncertaintyReport, Duration) {
    static CELL: OnceLock<(UncertaintyReport, Duration)> = OnceLock::new();
    shared(&CELL, || config(Experiment::MnistInterp, &Method::ALL))
}

fn digit_report() -> &'static (UncertaintyReport, Duration) {
    static CELL: OnceLock<(UncertaintyReport, Duration)> = OnceLock::new();
    shared(&CELL, || config(Experiment::DigitTable, &[Method::McDropout]))
}

fn summary(r: &UncertaintyReport, m: Method, key: &str) -> f64 {
    r.summary(m, key)
        .unwrap_or_else(|| panic!("report lacks summary {m}/{key}"))
}

fn theorem_check(c: &mut Checks) {
    let start = Instant::now();
    let r = run_experiment(
        &config(Experiment::TheoremCheck, &[Method::Gp]),
        &ModelStore::default(),
        None,
    );
    let elapsed = start.elapsed();
    let r = match r {
        Ok(r) => r,
        Err(e) => return c.expect(false, format!("theorem check raised: {e}")),
    };
    let far: Vec<_> = r.rows.iter().filter(|row| row.extra["kstar_inf"] < 1e-8).collect();
    c.expect(!far.is_empty(), format!("{} probes with ||k*||inf < 1e-8", far.len()));
    let worst_p = far.iter().map(|row| (row.p_class1 - 0.5).abs()).fold(0.0, f64::max);
    let worst_h = far.iter().map(|row| (row.entropy_nats - LN2).abs()).fold(0.0, f64::max);
    c.expect(worst_p < 1e-6, format!("max |p-0.5| = {worst_p:.2e} (< 1e-6)"));
    c.expect(worst_h < 1e-6, format!("max |H-ln2| = {worst_h:.2e} (< 1e-6)"));
    c.expect(
        elapsed < Duration::from_secs(10),
        format!("runtime {:.1}s (< 10s)", elapsed.as_secs_f64()),
    );
}

fn toy_reproduction(c: &mut Checks) {
    let (r, elapsed) = toy_report();
    let corner = summary(r, Method::Gp, "corner_mean_entropy");
    c.expect(corner >= 0.6, format!("gp corner entropy {corner:.3} (>= 0.6)"));
    for (m, limit) in [(Method::McDropout, 0.15), (Method::Mfvi, 0.2), (Method::Hmc, 0.2)] {
        let far = summary(r, m, "far_mean_entropy");
        c.expect(far <= limit, format!("{m} far entropy {far:.2e} (<= {limit})"));
    }
    for m in Method::ALL {
        let origin = r.row(m, "origin").expect("origin row").entropy_nats;
        c.expect(origin >= 0.4, format!("{m} origin entropy {origin:.3} (>= 0.4)"));
    }
    c.expect(
        *elapsed < Duration::from_secs(600),
        format!("runtime {:.0}s (< 600s)", elapsed.as_secs_f64()),
    );
}

fn interpolation(c: &mut Checks) {
    let (r, elapsed) = interp_report();
    for m in Method::ALL {
        let peak = summary(r, m, "peak_t");
        c.expect(
            (0.4 - 1e-9..=0.6 + 1e-9).contains(&peak),
            format!("{m} entropy peaks at t={peak} (in [0.4, 0.6])"),
        );
    }
    for t in [-1.0, 2.0] {
        let gp = summary(r, Method::Gp, &t_key(t));
        c.expect(gp >= 0.5, format!("gp entropy at t={t} {gp:.3} (>= 0.5)"));
        for m in [Method::McDropout, Method::Mfvi] {
            let e = summary(r, m, &t_key(t));
            c.expect(e <= 0.15, format!("{m} entropy at t={t} {e:.2e} (<= 0.15)"));
        }
    }
    c.expect(
        *elapsed < Duration::from_secs(1800),
        format!("runtime {:.0}s (< 1800s)", elapsed.as_secs_f64()),
    );
}

fn digit_table(c: &mut Checks) {
    let (r, _) = digit_report();
    for d in 0..10 {
        let e = summary(r, Method::McDropout, &digit_key(d));
        if d < 2 {
            c.expect(e <= 0.1, format!("digit {d} {e:.4} (<= 0.1)"));
        } else {
            c.expect(e >= 0.25, format!("digit {d} {e:.4} (>= 0.25)"));
        }
    }
}

fn accuracy_gates(c: &mut Checks) {
    let (toy, _) = toy_report();
    for m in Method::ALL {
        let acc = summary(toy, m, "train_accuracy");
        c.expect(acc >= 0.99, format!("toy {m} train accuracy {acc:.4} (>= 0.99)"));
    }
    let (mnist, _) = interp_report();
    for m in [Method::McDropout, Method::Mfvi] {
        let acc = summary(mnist, m, "test_accuracy");
        c.expect(acc > 0.999, format!("mnist {m} test accuracy {acc:.4} (> 0.999)"));
    }
}

fn rbf(a: &[f64], b: &[f64], ell: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * ell * ell)).exp()
}

// Gauss-Jordan elimination with partial pivoting.
fn dense_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| f64::from(i == j)));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (v, p) in m[r].iter_mut().zip(pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gp_against_dense_inverse(c: &mut Checks) {
    let mut rng = RngStream::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let pts: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)])
            .collect();
        let mut labels: Vec<usize> = (0..5).map(|_| rng.below(2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let ell = rng.uniform_range(0.5, 2.0);
        let d = Dataset::from_samples(&pts, labels, ue_probe::datasets::DataSource::Probe).unwrap();
        let s = laplace_fit(&d, KernelParams::new(ell, 1.0).unwrap(), LaplaceOptions::default()).unwrap();
        let k: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| rbf(a, b, ell)).collect())
            .collect();
        let k_inv = dense_inverse(&k);
        let mut k_w = k.clone();
        for (i, row) in k_w.iter_mut().enumerate() {
            row[i] += 1.0 / s.w()[i];
        }
        let k_w_inv = dense_inverse(&k_w);
        let alpha = mat_vec(&k_inv, s.mode());
        for _ in 0..5 {
            let x = [rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0)];
            let ks: Vec<f64> = pts.iter().map(|p| rbf(p, &x, ell)).collect();
            let mean = dot(&ks, &alpha);
            let var = 1.0 - dot(&ks, &mat_vec(&k_w_inv, &ks));
            let (m, v) = predict_latent(&s, &x).unwrap();
            worst = worst.max((m - mean).abs()).max((v - var).abs());
        }
    }
    c.expect(
        worst < 1e-8,
        format!("GP mean/var vs dense inverse {worst:.1e} (< 1e-8)"),
    );
}

fn logistic_against_quadrature(c: &mut Checks) {
    let mut worst: f64 = 0.0;
    for (mean, var) in [(1.2, 0.7), (0.0, 1.0), (-3.0, 4.0), (0.3, 0.01), (5.0, 25.0)] {
        let sd: f64 = f64::sqrt(var);
        let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
        let n = 1_000_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let z = (x - mean) / sd;
            (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) / (1.0 + (-x).exp())
        };
        let mut sum = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            sum += f(lo + i as f64 * h);
        }
        worst = worst.max((sum * h - link_integral(Link::Logistic, mean, var)).abs());
    }
    c.expect(
        worst < 1e-6,
        format!("logistic predictive vs 1e6-point trapezoid {worst:.1e} (< 1e-6)"),
    );
}

fn gradients(c: &mut Checks) {
    let toy = make_toy2d(10, 7).unwrap();
    let mnist = load_idx(
        mnist_dir().join("train-images-idx3-ubyte"),
        mnist_dir().join("train-labels-idx1-ubyte"),
    )
    .and_then(|d| filter_classes(&d, &[0, 1]))
    .and_then(|d| d.subsample(12, 3))
    .unwrap();
    let archs: [(&[usize], &Dataset); 5] = [
        (&[2, 300, 2], &toy),
        (&[2, 512, 128, 2], &toy),
        (&[784, 500, 2], &mnist),
        (&[784, 600, 20, 2], &mnist),
        (&[784, 1024, 128, 2], &mnist),
    ];
    for (i, (sizes, d)) in archs.into_iter().enumerate() {
        let p = mlp_init(sizes, 40 + i as u64).unwrap();
        let xs = d.features().as_slice();
        let r = gradient_check(&p, xs, d.labels(), None, 1e-3, 50, 1e-5, i as u64).unwrap();
        c.expect(
            r.max_relative_error < 1e-5 && r.checked >= 25,
            format!(
                "backprop {sizes:?}: {:.1e} over {} coords",
                r.max_relative_error, r.checked
            ),
        );
        if sizes.len() > 3 || sizes[0] == 2 {
            let r = log_posterior_gradient_check(&p, d, 5.0, 50, 1e-5, 100 + i as u64).unwrap();
            c.expect(
                r.max_relative_error < 1e-5 && r.checked >= 25,
                format!(
                    "log posterior {sizes:?}: {:.1e} over {} coords",
                    r.max_relative_error, r.checked
                ),
            );
        }
    }
}

fn numerical_oracles(c: &mut Checks) {
    gp_against_dense_inverse(c);
    logistic_against_quadrature(c);
    gradients(c);
}

/// Bernoulli likelihood `σ(w·x)` with two weights and no bias.
struct TwoWeightLogistic {
    xs: Vec<[f64; 2]>,
    ys: Vec<f64>,
}

impl BatchLikelihood for TwoWeightLogistic {
    fn n_params(&self) -> usize {
        2
    }

    fn n_data(&self) -> usize {
        self.xs.len()
    }

    fn log_lik_and_grad(&self, w: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        let mut ll = 0.0;
        let mut g = vec![0.0; 2];
        for &i in batch {
            let x = self.xs[i];
            let z = w[0] * x[0] + w[1] * x[1];
            let s = if self.ys[i] > 0.5 { 1.0 } else { -1.0 };
            ll -= (-s * z).exp().ln_1p();
            let r = s / (1.0 + (s * z).exp());
            g[0] += r * x[0];
            g[1] += r * x[1];
        }
        Ok((ll, g))
    }
}

fn log_evidence_by_quadrature(model: &TwoWeightLogistic, precision: f64) -> f64 {
    let (n, half) = (1200, 12.0 / precision.sqrt());
    let h = 2.0 * half / n as f64;
    let all: Vec<usize> = (0..model.n_data()).collect();
    let mut terms = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            let w = [-half + i as f64 * h, -half + j as f64 * h];
            let (ll, _) = model.log_lik_and_grad(&w, &all).unwrap();
            let log_prior =
                (precision / (2.0 * std::f64::consts::PI)).ln() - 0.5 * precision * (w[0] * w[0] + w[1] * w[1]);
            terms.push(ll + log_prior);
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + (terms.iter().map(|t| (t - max).exp()).sum::<f64>() * h * h).ln()
}

fn sampler_correctness(c: &mut Checks) {
    let target = IsotropicGaussian { dim: 2, precision: 1.0 };
    let cfg = HMCConfig {
        step_size: 0.25,
        trajectory_length: 6,
        n_samples: 10_000,
        burn_in: 500,
        seed: 11,
        ..Default::default()
    };
    let chain = hmc_run(&target, vec![0.0, 0.0], &cfg).unwrap();
    let n = chain.samples.len() as f64;
    for k in 0..2 {
        let mean = chain.samples.iter().map(|s| s[k]).sum::<f64>() / n;
        let var = chain.samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n;
        c.expect((mean).abs() < 0.05, format!("HMC mean[{k}] {mean:.4} (|.| < 0.05)"));
        c.expect(
            (var - 1.0).abs() < 0.1,
            format!("HMC var[{k}] {var:.4} (within 0.1 of 1)"),
        );
    }

    let mut rng = RngStream::new(5);
    let w0: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
    let p0: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
    let banana = |w: &[f64]| -> Result<Vec<f64>> {
        Ok(w.iter()
            .enumerate()
            .map(|(i, v)| -v * (1.0 + 0.1 * i as f64) - 0.05 * v.powi(3))
            .collect())
    };
    let (w1, p1) = leapfrog(&w0, &p0, banana, 0.05, 40).unwrap();
    let back: Vec<f64> = p1.iter().map(|v| -v).collect();
    let (w2, p2) = leapfrog(&w1, &back, banana, 0.05, 40).unwrap();
    let err = w2
        .iter()
        .zip(&w0)
        .map(|(a, b)| (a - b).abs())
        .chain(p2.iter().zip(&p0).map(|(a, b)| (a + b).abs()))
        .fold(0.0, f64::max);
    c.expect(err < 1e-10, format!("leapfrog reversibility {err:.1e} (< 1e-10)"));

    let toy = make_toy2d(4, 9).unwrap();
    let model = TwoWeightLogistic {
        xs: (0..toy.len())
            .map(|i| [toy.feature(i)[0] * 0.3, toy.feature(i)[1] * 0.3])
            .collect(),
        ys: toy.labels().iter().map(|&y| y as f64).collect(),
    };
    let precision = 1.0;
    let log_z = log_evidence_by_quadrature(&model, precision);
    let fit_cfg = MfviConfig {
        epochs: 300,
        batch_size: model.n_data(),
        learning_rate: 0.02,
        kl_weight: 1.0,
        prior_precision: precision,
        rho_init: -1.0,
        seed: 4,
        ..Default::default()
    };
    let q = mfvi_fit(&model, vec![0.0, 0.0], &fit_cfg).unwrap().posterior;
    let elbo = elbo_estimate(&q, &model, precision, 20_000, 1.0, &mut RngStream::new(6)).unwrap();
    c.expect(
        elbo.value <= log_z + 3.0 * elbo.std_error,
        format!(
            "ELBO {:.4} +- {:.1e} vs log evidence {log_z:.4}",
            elbo.value, elbo.std_error
        ),
    );
}

fn determinism(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (config(Experiment::TheoremCheck, &[Method::Gp]), None),
        (
            config(Experiment::Toy2d, &Method::ALL),
            Some(toy_report as fn() -> &'static (UncertaintyReport, Duration)),
        ),
        (config(Experiment::DigitTable, &[Method::McDropout]), Some(digit_report)),
    ];
    for (cfg, first) in cases {
        let a = match first {
            Some(f) => f().0.clone(),
            None => timed(&cfg, Some(1)).0.unwrap(),
        };
        let b = timed(&cfg, Some(3)).0.unwrap();
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
            write_report(&a, &pa, format).unwrap();
            write_report(&b, &pb, format).unwrap();
            let same = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
            c.expect(same, format!("{} {format:?} byte-identical", cfg.experiment));
        }
    }
}

type Criterion = (u32, &'static str, fn(&mut Checks));

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "vanishing kernel vector gives p = 1/2", theorem_check),
        (2, "toy 2D far-field and boundary entropy", toy_reproduction),
        (3, "MNIST interpolation entropy curves", interpolation),
        (4, "per-digit MC dropout entropy", digit_table),
        (5, "point-predictor accuracy", accuracy_gates),
        (6, "numerical oracles", numerical_oracles),
        (7, "sampler and variational bound", sampler_correctness),
        (8, "byte-identical reports", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    let mut panicked = false;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut checks = Checks::default();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut checks)));
        if let Err(panic) = outcome {
            panicked = true;
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            checks.failures.push(format!("panicked: {msg}"));
        }
        let pass = checks.failures.is_empty();
        let detail = if pass {
            checks.notes.join("; ")
        } else {
            format!(
                "{} ({} of {} sub-checks passed)",
                checks.failures.join("; "),
                checks.notes.len(),
                checks.notes.len() + checks.failures.len()
            )
        };
        println!(
            "criterion {id} {} {name} [{:.1}s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} of {ran} criteria pass, failing: {failed:?}",
        ran - failed.len()
    );
    let strict = std::env::var("UE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if panicked || (strict && !failed.is_empty()) {
        std::process::exit(1);
    }
}
