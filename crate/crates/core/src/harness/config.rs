use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bnn::{HMCConfig, MfviConfig};
use crate::error::{Error, Result};
use crate::gp::{length_scale_grid, KernelParams, LaplaceOptions, Link};
use crate::nnet::TrainConfig;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gp,
    McDropout,
    Mfvi,
    Hmc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gp, Method::McDropout, Method::Mfvi, Method::Hmc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gp => "gp",
            Method::McDropout => "mcdropout",
            Method::Mfvi => "mfvi",
            Method::Hmc => "hmc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected gp, mcdropout, mfvi or hmc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Toy2d,
    MnistInterp,
    DigitTable,
    TheoremCheck,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::Toy2d,
        Experiment::MnistInterp,
        Experiment::DigitTable,
        Experiment::TheoremCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy2d => "toy2d",
            Experiment::MnistInterp => "mnist-interp",
            Experiment::DigitTable => "digit-table",
            Experiment::TheoremCheck => "theorem-check",
        }
    }

    pub fn uses_mnist(self) -> bool {
        matches!(self, Experiment::MnistInterp | Experiment::DigitTable)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_per_class: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub resolution: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_per_class: 200,
            grid_min: -6.0,
            grid_max: 6.0,
            resolution: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistConfig {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    /// Defaults to the training path with "train" replaced by "t10k" in the file name.
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub n_pairs: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    /// Training points kept for the GP; 0 keeps all.
    pub gp_subsample: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            n_pairs: 100,
            t_min: -1.0,
            t_max: 2.0,
            t_points: 31,
            gp_subsample: 2000,
        }
    }
}

fn test_sibling(train: &Path) -> Result<PathBuf> {
    let name = train
        .file_name()
        .and_then(|n| n.to_str())
        .filter(|n| n.contains("train"))
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot derive test file from {}; set mnist.test_images and mnist.test_labels",
                train.display()
            ))
        })?;
    Ok(train.with_file_name(name.replacen("train", "t10k", 1)))
}

impl MnistConfig {
    pub fn train_paths(&self) -> Result<(PathBuf, PathBuf)> {
        match (&self.train_images, &self.train_labels) {
            (Some(i), Some(l)) => Ok((i.clone(), l.clone())),
            _ => Err(Error::Config(
                "MNIST experiments need --mnist-images and --mnist-labels".into(),
            )),
        }
    }

    pub fn test_paths(&self) -> Result<(PathBuf, PathBuf)> {
        let (ti, tl) = self.train_paths()?;
        let images = match &self.test_images {
            Some(p) => p.clone(),
            None => test_sibling(&ti)?,
        };
        let labels = match &self.test_labels {
            Some(p) => p.clone(),
            None => test_sibling(&tl)?,
        };
        Ok((images, labels))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub link: Link,
    /// Length scales `2^lo ..= 2^hi` are searched by marginal likelihood.
    pub length_scale_exponents: [i32; 2],
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        let o = LaplaceOptions::default();
        Self {
            link: o.link,
            length_scale_exponents: [-3, 3],
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

impl GpConfig {
    pub fn grid(&self) -> Vec<KernelParams> {
        let [lo, hi] = self.length_scale_exponents;
        length_scale_grid(lo, hi)
    }

    pub fn options(&self) -> LaplaceOptions {
        LaplaceOptions {
            link: self.link,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Hidden layer widths plus training settings of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl NetConfig {
    fn new(hidden: &[usize], epochs: usize, dropout_rate: f64) -> Self {
        Self {
            hidden: hidden.to_vec(),
            train: TrainConfig {
                epochs,
                dropout_rate,
                ..TrainConfig::default()
            },
        }
    }

    pub fn sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(classes);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub toy: NetConfig,
    pub mnist: NetConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            toy: NetConfig::new(&[300], 50, 0.5),
            mnist: NetConfig::new(&[500], 20, 0.6),
        }
    }
}

/// Network whose penultimate activations feed the MNIST GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub net: NetConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::new(&[600, 20], 20, 0.6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McDropoutBlock {
    /// Stochastic passes per probe. The dropout rate is the one the network was trained with.
    pub n_samples: usize,
}

impl Default for McDropoutBlock {
    fn default() -> Self {
        Self { n_samples: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfviNet {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub fit: MfviConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfviBlock {
    pub toy: MfviNet,
    pub mnist: MfviNet,
}

impl Default for MfviBlock {
    fn default() -> Self {
        Self {
            toy: MfviNet {
                hidden: vec![512, 128],
                fit: MfviConfig::default(),
            },
            mnist: MfviNet {
                hidden: vec![1024, 128],
                fit: MfviConfig {
                    epochs: 20,
                    ..MfviConfig::default()
                },
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcNet {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub sampler: HMCConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmcBlock {
    pub toy: HmcNet,
    pub mnist: HmcNet,
}

impl Default for HmcBlock {
    fn default() -> Self {
        Self {
            toy: HmcNet {
                hidden: vec![512, 128],
                sampler: HMCConfig {
                    step_size: 0.002,
                    trajectory_length: 5,
                    n_samples: 100,
                    burn_in: 100,
                    ..HMCConfig::default()
                },
            },
            mnist: HmcNet {
                hidden: vec![1024, 128],
                sampler: HMCConfig::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    /// Rays leaving each class mean, spread symmetrically around the outward direction.
    pub rays_per_class: usize,
    pub ray_spread_degrees: f64,
    /// Probe distances are `k · step · ℓ` for `k = 0..=steps`.
    pub steps: usize,
    pub step: f64,
    /// Below this ‖k⋆‖∞ the prediction must be within `max_deviation` of ½.
    pub eps: f64,
    pub max_deviation: f64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            rays_per_class: 5,
            ray_spread_degrees: 120.0,
            steps: 24,
            step: 0.5,
            eps: 1e-8,
            max_deviation: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub toy: ToyConfig,
    pub mnist: MnistConfig,
    pub gp: GpConfig,
    pub mlp: MlpConfig,
    pub encoder: EncoderConfig,
    pub mcdropout: McDropoutBlock,
    pub mfvi: MfviBlock,
    pub hmc: HmcBlock,
    pub theorem: TheoremConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::default(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            toy: ToyConfig::default(),
            mnist: MnistConfig::default(),
            gp: GpConfig::default(),
            mlp: MlpConfig::default(),
            encoder: EncoderConfig::default(),
            mcdropout: McDropoutBlock::default(),
            mfvi: MfviBlock::default(),
            hmc: HmcBlock::default(),
            theorem: TheoremConfig::default(),
        }
    }
}

/// Purposes that get their own seed derived from the top-level one.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SeedUse {
    Mlp = 1,
    Encoder,
    McDropout,
    MfviFit,
    MfviPredict,
    Hmc,
    Pairs,
    GpSubsample,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sorts and deduplicates methods, then checks the settings this experiment uses.
    pub fn validate(&mut self) -> Result<()> {
        self.methods.sort();
        self.methods.dedup();
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.experiment == Experiment::TheoremCheck && !self.methods.contains(&Method::Gp) {
            return Err(Error::Config("theorem-check needs method gp".into()));
        }
        let t = &self.toy;
        if t.n_per_class == 0 || t.resolution < 2 || !(t.grid_max > t.grid_min) {
            return Err(Error::Config(
                "toy grid needs resolution >= 2 and grid_max > grid_min".into(),
            ));
        }
        let m = &self.mnist;
        if m.n_pairs == 0 || m.t_points < 2 || !(m.t_max > m.t_min) {
            return Err(Error::Config(
                "mnist sweep needs n_pairs >= 1, t_points >= 2, t_max > t_min".into(),
            ));
        }
        if self.mcdropout.n_samples == 0 {
            return Err(Error::Config("mcdropout.n_samples must be >= 1".into()));
        }
        let [lo, hi] = self.gp.length_scale_exponents;
        if lo > hi {
            return Err(Error::Config(
                "gp.length_scale_exponents must be [lo, hi] with lo <= hi".into(),
            ));
        }
        let th = &self.theorem;
        if th.rays_per_class == 0 || th.steps == 0 || !(th.step > 0.0) || !(th.eps > 0.0) || !(th.max_deviation > 0.0) {
            return Err(Error::Config(
                "theorem probes need rays, steps, step, eps and max_deviation > 0".into(),
            ));
        }
        if self.experiment.uses_mnist() {
            let (ti, tl) = self.mnist.train_paths()?;
            let (si, sl) = self.mnist.test_paths()?;
            for p in [ti, tl, si, sl] {
                if !p.is_file() {
                    return Err(Error::Config(format!("MNIST file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub(crate) fn seed_for(&self, purpose: SeedUse) -> u64 {
        RngStream::new(self.seed).substream(purpose as u64).next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "experiment = \"theorem-check\"\nmethods = [\"gp\"]\nseed = 7\n[mlp.toy]\nhidden = [16]\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::TheoremCheck);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mlp.toy.hidden, vec![16]);
        assert_eq!(cfg.mlp.toy.train, TrainConfig::default());
        assert_eq!(cfg.mlp.mnist, MlpConfig::default().mnist);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[gp]\nlenght = 2").is_err());
        assert!(ExperimentConfig::from_toml("methods = [\"svm\"]").is_err());
    }

    #[test]
    fn digest_tracks_settings() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.hmc.toy.sampler.step_size *= 2.0;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig {
            methods: vec![Method::Hmc, Method::Gp, Method::Hmc],
            ..Default::default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.methods, vec![Method::Gp, Method::Hmc]);

        cfg.methods.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig {
            experiment: Experiment::TheoremCheck,
            methods: vec![Method::Mfvi],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig {
            experiment: Experiment::MnistInterp,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.mnist.train_images = Some("/nonexistent/train-images".into());
        cfg.mnist.train_labels = Some("/nonexistent/train-labels".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn test_files_default_to_siblings() {
        let m = MnistConfig {
            train_images: Some("data/train-images-idx3-ubyte".into()),
            train_labels: Some("data/train-labels-idx1-ubyte".into()),
            ..Default::default()
        };
        let (i, l) = m.test_paths().unwrap();
        assert_eq!(i, PathBuf::from("data/t10k-images-idx3-ubyte"));
        assert_eq!(l, PathBuf::from("data/t10k-labels-idx1-ubyte"));

        let m = MnistConfig {
            train_images: Some("images.bin".into()),
            train_labels: Some("labels.bin".into()),
            ..Default::default()
        };
        assert!(m.test_paths().is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("mcdropout".parse::<Method>().unwrap(), Method::McDropout);
        assert!("dropout".parse::<Method>().is_err());
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.seed_for(SeedUse::Mlp), cfg.seed_for(SeedUse::Encoder));
        let other = ExperimentConfig {
            seed: 1,
            ..Default::default()
        };
        assert_ne!(cfg.seed_for(SeedUse::Mlp), other.seed_for(SeedUse::Mlp));
    }
}
