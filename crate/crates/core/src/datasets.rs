//! Toy and MNIST data, interpolation probes and evaluation grids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RngStream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const TOY_MEAN_CLASS1: [f64; 2] = [2.0, 2.0];
pub const TOY_MEAN_CLASS0: [f64; 2] = [-2.0, -2.0];
pub const TOY_VARIANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Toy2d,
    Mnist,
    Mnist01,
    Probe,
}

/// Labeled feature vectors stored one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    source: DataSource,
}

impl Dataset {
    /// Builds a dataset from a `dim × n` feature matrix (one sample per column).
    pub fn new(features: DenseMatrix, labels: Vec<usize>, source: DataSource) -> Result<Self> {
        if features.cols() == 0 || features.rows() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if labels.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                expected: features.cols(),
                got: labels.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            source,
        })
    }

    pub fn from_samples(samples: &[Vec<f64>], labels: Vec<usize>, source: DataSource) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.len());
        if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let data: Vec<f64> = samples.iter().flatten().copied().collect();
        let features = DenseMatrix::from_col_major(dim, samples.len(), data)?;
        Self::new(features, labels, source)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.rows()
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.col(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&l| l <= 1)
    }

    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyResult("selection is empty".into()));
        }
        let dim = self.dim();
        let mut data = Vec::with_capacity(dim * indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            DenseMatrix::from_col_major(dim, indices.len(), data)?,
            labels,
            self.source,
        )
    }

    /// Uniform random subset of at most `n` samples, original order preserved.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        RngStream::new(seed).shuffle(&mut idx);
        idx.truncate(n);
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Applies `f` to every feature vector, producing a dataset with new dimension.
    pub fn map_features(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            samples.push(f(self.feature(i))?);
        }
        Dataset::from_samples(&samples, self.labels.clone(), self.source)
    }
}

/// Two isotropic Gaussian blobs: class 1 around (2, 2), class 0 around (−2, −2),
/// variance 0.1 per coordinate. Class-1 samples come first.
pub fn make_toy2d(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    let mut rng = RngStream::new(seed);
    let sd = TOY_VARIANCE.sqrt();
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for (label, mean) in [(1usize, TOY_MEAN_CLASS1), (0, TOY_MEAN_CLASS0)] {
        for _ in 0..n_per_class {
            data.push(mean[0] + sd * rng.standard_normal());
            data.push(mean[1] + sd * rng.standard_normal());
            labels.push(label);
        }
    }
    Dataset::new(
        DenseMatrix::from_col_major(2, 2 * n_per_class, data)?,
        labels,
        DataSource::Toy2d,
    )
}

/// `n` equally spaced values from `lo` to `hi` with both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + i as f64 * step })
                .collect()
        }
    }
}

/// `resolution²` points, x varying fastest, corners included exactly.
pub fn grid2d(xmin: f64, xmax: f64, ymin: f64, ymax: f64, resolution: usize) -> Result<Vec<[f64; 2]>> {
    if !(xmax > xmin && ymax > ymin) || resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "bad grid ({xmin}, {xmax}) x ({ymin}, {ymax}) at resolution {resolution}"
        )));
    }
    let xs = linspace(xmin, xmax, resolution);
    let ys = linspace(ymin, ymax, resolution);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect())
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Reads an IDX image/label pair. Pixels are scaled to [0, 1] by /255 and
/// each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let header = |bytes: &[u8], i: usize, path: &Path| {
        read_u32_be(bytes, 4 * i).ok_or_else(|| Error::format(path, "truncated header"))
    };
    let magic = header(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(images_path, format!("bad image magic {magic:#010x}")));
    }
    let n = header(&images, 1, images_path)? as usize;
    let rows = header(&images, 2, images_path)? as usize;
    let cols = header(&images, 3, images_path)? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::format(images_path, "zero image dimension"));
    }
    let payload = &images[16..];
    if payload.len() != n * dim {
        return Err(Error::format(
            images_path,
            format!("expected {} pixel bytes, found {}", n * dim, payload.len()),
        ));
    }

    let magic = header(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(labels_path, format!("bad label magic {magic:#010x}")));
    }
    let n_labels = header(&labels, 1, labels_path)? as usize;
    if n_labels != n {
        return Err(Error::format(labels_path, format!("{n} images but {n_labels} labels")));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() != n {
        return Err(Error::format(
            labels_path,
            format!("expected {n} label bytes, found {}", label_bytes.len()),
        ));
    }
    if n == 0 {
        return Err(Error::format(images_path, "no images"));
    }

    let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Dataset::new(
        DenseMatrix::from_col_major(dim, n, data)?,
        label_bytes.iter().map(|&l| usize::from(l)).collect(),
        DataSource::Mnist,
    )
}

/// Writes an IDX image/label pair (inverse of [`load_idx`] for byte pixels).
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: u32,
    cols: u32,
    images: &[Vec<u8>],
    labels: &[u8],
) -> Result<()> {
    let mut img = Vec::with_capacity(16 + images.len() * (rows * cols) as usize);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Keeps samples whose label is in `keep` and remaps labels by rank
/// (lowest kept label becomes 0). Sample order is preserved.
pub fn filter_classes(d: &Dataset, keep: &[usize]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("no classes to keep".into()));
    }
    let mut kept = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    let idx: Vec<usize> = (0..d.len()).filter(|&i| kept.contains(&d.label(i))).collect();
    if idx.is_empty() {
        return Err(Error::EmptyResult(format!("no samples with labels {kept:?}")));
    }
    let mut out = d.select(&idx)?;
    for l in &mut out.labels {
        *l = kept.iter().position(|k| k == l).expect("kept label");
    }
    if d.source == DataSource::Mnist {
        out.source = DataSource::Mnist01;
    }
    Ok(out)
}

/// Linear combination `t·x1 + (1 − t)·x0` between a class-0 and a class-1 sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationProbe {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
}

impl InterpolationProbe {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>, t: f64) -> Result<Self> {
        if x0.len() != x1.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                got: x1.len(),
            });
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("interpolation coefficient"));
        }
        Ok(Self { x0, x1, t })
    }

    pub fn interpolate(&self) -> Vec<f64> {
        interpolate(&self.x0, &self.x1, self.t)
    }
}

/// Elementwise `t·x1 + (1 − t)·x0`; not clipped.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Vec<f64> {
    x0.iter().zip(x1).map(|(&a, &b)| t * b + (1.0 - t) * a).collect()
}

/// One point of an interpolation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub pair_id: usize,
    pub t: f64,
    pub features: Vec<f64>,
}

/// The pair of sample indices behind each sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbePair {
    pub index0: usize,
    pub index1: usize,
}

/// Draws `n_pairs` random (class-0, class-1) pairs from `d`.
pub fn draw_pairs(d: &Dataset, n_pairs: usize, seed: u64) -> Result<Vec<ProbePair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be >= 1".into()));
    }
    let zeros = d.indices_of(0);
    let ones = d.indices_of(1);
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::EmptyResult("probe sweep needs both classes".into()));
    }
    let mut rng = RngStream::new(seed);
    Ok((0..n_pairs)
        .map(|_| ProbePair {
            index0: zeros[rng.below(zeros.len())],
            index1: ones[rng.below(ones.len())],
        })
        .collect())
}

/// Sweeps each random pair across `t_grid`; pair-major order.
pub fn probe_sweep(d: &Dataset, n_pairs: usize, t_grid: &[f64], seed: u64) -> Result<Vec<SweepPoint>> {
    let pairs = draw_pairs(d, n_pairs, seed)?;
    Ok(pairs
        .iter()
        .enumerate()
        .flat_map(|(pair_id, p)| {
            let (x0, x1) = (d.feature(p.index0), d.feature(p.index1));
            t_grid.iter().map(move |&t| SweepPoint {
                pair_id,
                t,
                features: interpolate(x0, x1, t),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mean_of(d: &Dataset, class: usize) -> [f64; 2] {
        let idx = d.indices_of(class);
        let mut m = [0.0; 2];
        for &i in &idx {
            m[0] += d.feature(i)[0];
            m[1] += d.feature(i)[1];
        }
        [m[0] / idx.len() as f64, m[1] / idx.len() as f64]
    }

    #[test]
    fn toy_means_and_determinism() {
        let d = make_toy2d(200, 5).unwrap();
        assert_eq!(d.len(), 400);
        let m1 = mean_of(&d, 1);
        assert!((m1[0] - 2.0).abs() < 0.1 && (m1[1] - 2.0).abs() < 0.1);
        assert_eq!(make_toy2d(1, 9).unwrap(), make_toy2d(1, 9).unwrap());
    }

    #[test]
    fn toy_variance_and_mean_convergence() {
        let n = 10_000;
        let d = make_toy2d(n, 17).unwrap();
        let idx = d.indices_of(0);
        let m0 = mean_of(&d, 0);
        for (c, mc) in m0.iter().enumerate() {
            let var = idx.iter().map(|&i| (d.feature(i)[c] - mc).powi(2)).sum::<f64>() / (idx.len() - 1) as f64;
            assert!((var - 0.1).abs() < 0.005, "variance {var}");
        }
        let bound = 3.0 * (0.1 / n as f64).sqrt();
        let m1 = mean_of(&d, 1);
        for c in 0..2 {
            assert!((m0[c] + 2.0).abs() < bound);
            assert!((m1[c] - 2.0).abs() < bound);
        }
    }

    #[test]
    fn grid_layout() {
        let g = grid2d(0.0, 1.0, 0.0, 1.0, 2).unwrap();
        assert_eq!(g, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let g = grid2d(-6.0, 6.0, -6.0, 6.0, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert!(g.contains(&[0.0, 0.0]));
        let g = grid2d(-6.0, 6.0, -6.0, 6.0, 100).unwrap();
        assert_eq!(g.len(), 10_000);
        for c in 0..2 {
            let lo = g.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
            let hi = g.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((lo, hi), (-6.0, 6.0));
        }
        assert!(grid2d(1.0, 0.0, 0.0, 1.0, 3).is_err());
        assert!(grid2d(0.0, 1.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn filter_remaps_and_preserves_order() {
        let d = Dataset::from_samples(
            &[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![7, 3, 5, 7, 3],
            DataSource::Mnist,
        )
        .unwrap();
        let f = filter_classes(&d, &[7, 3]).unwrap();
        assert_eq!(f.labels(), &[1, 0, 1, 0]);
        assert_eq!(f.feature(2), &[3.0]);
        assert_eq!(f.source(), DataSource::Mnist01);
        assert!(matches!(filter_classes(&d, &[9]), Err(Error::EmptyResult(_))));

        let toy = make_toy2d(3, 1).unwrap();
        assert_eq!(filter_classes(&toy, &[0, 1]).unwrap(), toy);
    }

    #[test]
    fn interpolation_endpoints() {
        let x0 = vec![0.0, 1.0, 0.25];
        let x1 = vec![1.0, 0.0, 0.75];
        assert_eq!(interpolate(&x0, &x1, 0.0), x0);
        assert_eq!(interpolate(&x0, &x1, 1.0), x1);
        assert_eq!(interpolate(&[0.0, 1.0], &[1.0, 0.0], 0.5), vec![0.5, 0.5]);
        // not clipped
        assert_eq!(interpolate(&[0.0], &[1.0], 2.0), vec![2.0]);
        assert_eq!(interpolate(&[0.0], &[1.0], -1.0), vec![-1.0]);
        assert!(InterpolationProbe::new(vec![0.0], vec![1.0, 2.0], 0.5).is_err());
    }

    #[test]
    fn sweep_counts_and_determinism() {
        let d = make_toy2d(50, 3).unwrap();
        let t = linspace(-1.0, 2.0, 31);
        assert!((t[15] - 0.5).abs() < 1e-15);
        let sweep = probe_sweep(&d, 100, &t, 8).unwrap();
        assert_eq!(sweep.len(), 3100);
        assert_eq!(sweep, probe_sweep(&d, 100, &t, 8).unwrap());

        let one = probe_sweep(&d, 1, &[0.0], 4).unwrap();
        let pair = draw_pairs(&d, 1, 4).unwrap()[0];
        assert_eq!(one[0].features, d.feature(pair.index0));
        assert_eq!(d.label(pair.index0), 0);
        assert_eq!(d.label(pair.index1), 1);

        let only_ones = filter_classes(&d, &[1]).unwrap();
        // remapped to 0, so class 1 is now missing
        assert!(matches!(probe_sweep(&only_ones, 1, &t, 0), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        let images: Vec<Vec<u8>> = (0..3u8)
            .map(|k| (0..784).map(|p| ((p * 7 + k as usize * 31) % 256) as u8).collect())
            .collect();
        write_idx(&ip, &lp, 28, 28, &images, &[0, 1, 9]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!((d.len(), d.dim()), (3, 784));
        assert_eq!(d.labels(), &[0, 1, 9]);
        for (k, im) in images.iter().enumerate() {
            for (p, &b) in im.iter().enumerate() {
                assert_eq!(d.feature(k)[p].to_bits(), (f64::from(b) / 255.0).to_bits());
            }
        }

        // Header fields of the standard MNIST training file.
        let mut header = Vec::new();
        for v in [IDX_IMAGES_MAGIC, 60_000, 28, 28] {
            header.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(read_u32_be(&header, 4).unwrap() as usize * 28 * 28, 47_040_000);

        let mut bad = fs::read(&ip).unwrap();
        bad[..4].copy_from_slice(&0u32.to_be_bytes());
        fs::write(&ip, &bad).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));

        let ten: Vec<Vec<u8>> = vec![vec![0u8; 4]; 10];
        write_idx(&ip, &lp, 2, 2, &ten, &[0; 9]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));

        write_idx(&ip, &lp, 2, 2, &ten, &[0; 10]).unwrap();
        let mut truncated = fs::read(&ip).unwrap();
        truncated.pop();
        fs::write(&ip, &truncated).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));

        assert!(matches!(
            load_idx(dir.path().join("missing"), &lp),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn interpolation_is_affine(
            x0 in prop::collection::vec(-1.0f64..1.0, 5),
            x1 in prop::collection::vec(-1.0f64..1.0, 5),
            a in -1.0f64..2.0,
            b in -1.0f64..2.0,
        ) {
            let pa = interpolate(&x0, &x1, a);
            let pb = interpolate(&x0, &x1, b);
            let mid = interpolate(&x0, &x1, (a + b) / 2.0);
            for i in 0..5 {
                prop_assert!((pa[i] + pb[i] - 2.0 * mid[i]).abs() < 1e-12);
            }
        }
    }
}
