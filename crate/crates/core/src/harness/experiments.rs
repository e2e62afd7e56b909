use std::collections::BTreeMap;

use super::config::{Experiment, ExperimentConfig, Method, SeedUse};
use super::models::{kstar_inf, Domain, ModelStore, Prediction, TrainedModel};
use super::report::{fmt_sig, ReportRow, UncertaintyReport};
use crate::datasets::{
    filter_classes, grid2d, linspace, load_idx, make_toy2d, probe_sweep, Dataset, TOY_MEAN_CLASS0, TOY_MEAN_CLASS1,
};
use crate::error::{Error, Result};
use crate::gp::predict_proba;

/// Off-boundary far-field probes evaluated next to the toy grid.
pub const TOY_FAR_POINTS: [[f64; 2]; 4] = [[6.0, 6.0], [-6.0, -6.0], [5.0, 4.0], [-4.0, -5.0]];
pub const TOY_ORIGIN: [f64; 2] = [0.0, 0.0];

/// Probes shared by every method of one experiment.
struct ProbeSet {
    ids: Vec<String>,
    descriptors: Vec<String>,
    /// Column-major, one probe per column.
    xs: Vec<f64>,
}

impl ProbeSet {
    fn new() -> Self {
        Self {
            ids: Vec::new(),
            descriptors: Vec::new(),
            xs: Vec::new(),
        }
    }

    fn push(&mut self, id: String, descriptor: String, x: &[f64]) {
        self.ids.push(id);
        self.descriptors.push(descriptor);
        self.xs.extend_from_slice(x);
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

fn emit(report: &mut UncertaintyReport, method: Method, probes: &ProbeSet, preds: Vec<Prediction>) {
    for (i, p) in preds.into_iter().enumerate() {
        report.push_row(ReportRow {
            probe_id: probes.ids[i].clone(),
            method,
            descriptor: probes.descriptors[i].clone(),
            p_class1: p.p_class1,
            entropy_nats: p.entropy,
            extra: p.extra.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        });
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn checked(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn new_report(cfg: &ExperimentConfig) -> UncertaintyReport {
    UncertaintyReport::new(cfg.experiment.name(), cfg.seed, cfg.digest())
}

fn toy_descriptor(p: &[f64]) -> String {
    format!("x={};y={}", fmt_sig(p[0]), fmt_sig(p[1]))
}

/// Indices of the 16 grid points closest to the four corners of the window.
fn corner_indices(grid: &[[f64; 2]], lo: f64, hi: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(16);
    for corner in [[lo, lo], [lo, hi], [hi, lo], [hi, hi]] {
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        let d2 = |i: usize| (grid[i][0] - corner[0]).powi(2) + (grid[i][1] - corner[1]).powi(2);
        idx.sort_by(|&a, &b| d2(a).total_cmp(&d2(b)).then(a.cmp(&b)));
        out.extend_from_slice(&idx[..4]);
    }
    out
}

/// Entropy over the toy window for every method, plus far-field and
/// boundary reference points.
pub fn run_toy2d(cfg: &ExperimentConfig, store: &ModelStore) -> Result<UncertaintyReport> {
    let cfg = &checked(cfg)?;
    let t = &cfg.toy;
    let data = make_toy2d(t.n_per_class, cfg.seed)?;
    let grid = grid2d(t.grid_min, t.grid_max, t.grid_min, t.grid_max, t.resolution)?;
    let mut probes = ProbeSet::new();
    for (i, p) in grid.iter().enumerate() {
        probes.push(format!("grid{i:05}"), toy_descriptor(p), p);
    }
    for (i, p) in TOY_FAR_POINTS.iter().enumerate() {
        probes.push(format!("far{i}"), toy_descriptor(p), p);
    }
    probes.push("origin".into(), toy_descriptor(&TOY_ORIGIN), &TOY_ORIGIN);
    let corners = corner_indices(&grid, t.grid_min, t.grid_max);

    let mut report = new_report(cfg);
    for &method in &cfg.methods {
        let model = store.obtain(cfg, method, Domain::Toy, &data, &mut report.metadata.model_hashes)?;
        let ctx = |e: Error| e.in_method(method.name());
        let acc = model.accuracy(&data).map_err(ctx)?;
        let preds = model.predict(&probes.xs).map_err(ctx)?;
        let entropy = |i: usize| preds[i].entropy;
        let n_grid = grid.len();
        report.summarize(method, "train_accuracy", acc);
        report.summarize(method, "corner_mean_entropy", mean(corners.iter().map(|&i| entropy(i))));
        report.summarize(
            method,
            "far_mean_entropy",
            mean((0..TOY_FAR_POINTS.len()).map(|k| entropy(n_grid + k))),
        );
        report.summarize(
            method,
            "far_max_entropy",
            (0..TOY_FAR_POINTS.len())
                .map(|k| entropy(n_grid + k))
                .fold(0.0, f64::max),
        );
        report.summarize(method, "origin_entropy", entropy(probes.len() - 1));
        if let TrainedModel::Gp { state, .. } = &model {
            report.summarize(method, "length_scale", state.params().length_scale);
        }
        emit(&mut report, method, &probes, preds);
    }
    Ok(report)
}

struct MnistSplits {
    train01: Dataset,
    test01: Dataset,
    test_all: Dataset,
}

fn load_mnist(cfg: &ExperimentConfig) -> Result<MnistSplits> {
    let (ti, tl) = cfg.mnist.train_paths()?;
    let (si, sl) = cfg.mnist.test_paths()?;
    let train = load_idx(ti, tl)?;
    let test_all = load_idx(si, sl)?;
    Ok(MnistSplits {
        train01: filter_classes(&train, &[0, 1])?,
        test01: filter_classes(&test_all, &[0, 1])?,
        test_all,
    })
}

/// Summary key of the mean entropy at one interpolation coefficient.
pub fn t_key(t: f64) -> String {
    format!("mean_entropy_t={}", fmt_sig(t))
}

/// Entropy along straight lines between random 0/1 test pairs, extended
/// beyond both endpoints.
pub fn run_mnist_interp(cfg: &ExperimentConfig, store: &ModelStore) -> Result<UncertaintyReport> {
    let cfg = &checked(cfg)?;
    let m = &cfg.mnist;
    let splits = load_mnist(cfg)?;
    let t_grid = linspace(m.t_min, m.t_max, m.t_points);
    let sweep = probe_sweep(&splits.test01, m.n_pairs, &t_grid, cfg.seed_for(SeedUse::Pairs))?;
    let mut probes = ProbeSet::new();
    for (k, s) in sweep.iter().enumerate() {
        let j = k % t_grid.len();
        probes.push(
            format!("pair{:03}-t{j:02}", s.pair_id),
            format!("pair={};t={}", s.pair_id, fmt_sig(s.t)),
            &s.features,
        );
    }

    let mut report = new_report(cfg);
    for &method in &cfg.methods {
        let model = store.obtain(
            cfg,
            method,
            Domain::Mnist,
            &splits.train01,
            &mut report.metadata.model_hashes,
        )?;
        let ctx = |e: Error| e.in_method(method.name());
        report.summarize(method, "test_accuracy", model.accuracy(&splits.test01).map_err(ctx)?);
        let preds = model.predict(&probes.xs).map_err(ctx)?;
        let curve: Vec<f64> = (0..t_grid.len())
            .map(|j| mean(preds.iter().skip(j).step_by(t_grid.len()).map(|p| p.entropy)))
            .collect();
        let peak = (0..curve.len()).fold(0, |best, j| if curve[j] > curve[best] { j } else { best });
        for (&t, &e) in t_grid.iter().zip(&curve) {
            report.summarize(method, t_key(t), e);
        }
        report.summarize(method, "peak_t", t_grid[peak]);
        emit(&mut report, method, &probes, preds);
    }
    Ok(report)
}

pub fn digit_key(d: usize) -> String {
    format!("mean_entropy_digit={d}")
}

/// Mean entropy per test digit for models trained on zeros and ones only.
pub fn run_digit_table(cfg: &ExperimentConfig, store: &ModelStore) -> Result<UncertaintyReport> {
    let cfg = &checked(cfg)?;
    let splits = load_mnist(cfg)?;
    let test = &splits.test_all;
    let mut probes = ProbeSet::new();
    for i in 0..test.len() {
        probes.push(
            format!("test{i:05}"),
            format!("digit={}", test.label(i)),
            test.feature(i),
        );
    }
    let digits = test.classes();

    let mut report = new_report(cfg);
    for &method in &cfg.methods {
        let model = store.obtain(
            cfg,
            method,
            Domain::Mnist,
            &splits.train01,
            &mut report.metadata.model_hashes,
        )?;
        let ctx = |e: Error| e.in_method(method.name());
        report.summarize(method, "test_accuracy", model.accuracy(&splits.test01).map_err(ctx)?);
        let preds = model.predict(&probes.xs).map_err(ctx)?;
        let mut by_digit: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (i, p) in preds.iter().enumerate() {
            by_digit.entry(test.label(i)).or_default().push(p.entropy);
        }
        for &d in &digits {
            let e = by_digit.get(&d).map_or(f64::NAN, |v| mean(v.iter().copied()));
            report.summarize(method, digit_key(d), e);
        }
        emit(&mut report, method, &probes, preds);
    }
    Ok(report)
}

/// Absolute allowance for rounding in the predictive integral.
const ROUNDING_SLACK: f64 = 16.0 * f64::EPSILON;

/// Fits the toy GP and probes it along rays leaving the data. Every probe
/// must satisfy `|π̄⋆ − ½| ≤ c·n·‖k⋆‖∞` up to rounding, with
/// `c = max|∇log p(y|f̂)| + 1`, and probes with `‖k⋆‖∞ < eps` must be within
/// `max_deviation` of ½ in probability and of ln 2 in entropy.
pub fn run_theorem_check(cfg: &ExperimentConfig, store: &ModelStore) -> Result<UncertaintyReport> {
    let cfg = &checked(cfg)?;
    let th = &cfg.theorem;
    let data = make_toy2d(cfg.toy.n_per_class, cfg.seed)?;
    let mut report = new_report(cfg);
    let model = store.obtain(cfg, Method::Gp, Domain::Toy, &data, &mut report.metadata.model_hashes)?;
    let TrainedModel::Gp { state, .. } = &model else {
        unreachable!("gp method yields a gp model")
    };
    let ell = state.params().length_scale;
    let c = state.grad().iter().fold(0.0f64, |m, g| m.max(g.abs())) + 1.0;
    let n = state.n() as f64;

    let mut probes = ProbeSet::new();
    for (class, mean_pt) in [(0usize, TOY_MEAN_CLASS0), (1, TOY_MEAN_CLASS1)] {
        let nearest = data
            .indices_of(class)
            .into_iter()
            .min_by(|&a, &b| {
                let d = |i: usize| {
                    let x = data.feature(i);
                    (x[0] - mean_pt[0]).powi(2) + (x[1] - mean_pt[1]).powi(2)
                };
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
            .ok_or_else(|| Error::EmptyResult(format!("no class-{class} training points")))?;
        probes.push(
            format!("train{nearest:03}"),
            format!("class={class}"),
            data.feature(nearest),
        );
    }
    let mut ray = 0;
    for mean_pt in [TOY_MEAN_CLASS0, TOY_MEAN_CLASS1] {
        let outward = mean_pt[1].atan2(mean_pt[0]);
        let spread = th.ray_spread_degrees.to_radians();
        for k in 0..th.rays_per_class {
            let angle = if th.rays_per_class == 1 {
                outward
            } else {
                outward - spread / 2.0 + spread * k as f64 / (th.rays_per_class - 1) as f64
            };
            for j in 0..=th.steps {
                let r = j as f64 * th.step * ell;
                let x = [mean_pt[0] + r * angle.cos(), mean_pt[1] + r * angle.sin()];
                probes.push(format!("ray{ray:02}-{j:02}"), format!("ray={ray};r={}", fmt_sig(r)), &x);
            }
            ray += 1;
        }
    }

    let ln2 = std::f64::consts::LN_2;
    let mut below = 0usize;
    let mut worst_below = 0.0f64;
    let mut failure = None;
    for (i, x) in probes.xs.chunks(2).enumerate() {
        let eps = kstar_inf(state, x)?;
        let p = predict_proba(state, x)?.get(1);
        let entropy = crate::numerics::binary_entropy(p);
        let deviation = (p - 0.5).abs();
        let bound = c * n * eps + ROUNDING_SLACK;
        if deviation > bound {
            failure.get_or_insert((eps, deviation));
        }
        if eps < th.eps {
            below += 1;
            worst_below = worst_below.max(deviation).max((entropy - ln2).abs());
            if deviation >= th.max_deviation || (entropy - ln2).abs() >= th.max_deviation {
                failure.get_or_insert((eps, deviation));
            }
        }
        let mut extra = BTreeMap::new();
        extra.insert("kstar_inf".to_string(), eps);
        extra.insert("deviation".to_string(), deviation);
        extra.insert("bound".to_string(), bound);
        report.push_row(ReportRow {
            probe_id: probes.ids[i].clone(),
            method: Method::Gp,
            descriptor: probes.descriptors[i].clone(),
            p_class1: p,
            entropy_nats: entropy,
            extra,
        });
    }
    report.summarize(Method::Gp, "length_scale", ell);
    report.summarize(Method::Gp, "bound_constant", c);
    report.summarize(Method::Gp, "probes_below_eps", below as f64);
    report.summarize(Method::Gp, "max_error_below_eps", worst_below);
    if let Some((eps, deviation)) = failure {
        return Err(Error::AssertionFailure { eps, deviation });
    }
    Ok(report)
}

/// Number of evaluation threads requested through `UE_PROBE_THREADS`.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("UE_PROBE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "UE_PROBE_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

/// Validates `cfg` and runs its experiment on a pool capped by `threads`.
pub fn run_experiment(cfg: &ExperimentConfig, store: &ModelStore, threads: Option<usize>) -> Result<UncertaintyReport> {
    let cfg = checked(cfg)?;
    for dir in [&store.save_dir, &store.load_dir].into_iter().flatten() {
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "model directory {} does not exist",
                dir.display()
            )));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cfg.experiment {
        Experiment::Toy2d => run_toy2d(&cfg, store),
        Experiment::MnistInterp => run_mnist_interp(&cfg, store),
        Experiment::DigitTable => run_digit_table(&cfg, store),
        Experiment::TheoremCheck => run_theorem_check(&cfg, store),
    })
}
