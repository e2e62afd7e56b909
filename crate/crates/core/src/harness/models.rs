use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, SeedUse};
use crate::bnn::{hmc_sample, mfvi_train, posterior_mean_network, MeanFieldPosterior, PosteriorChain};
use crate::container::{self, ModelFile};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, kernel_vector, link_integral, predict_latent, LaplaceGPState};
use crate::mcdropout::{mc_predict_batch, MCDropoutConfig};
use crate::nnet::{accuracy, encode, mlp_init, train, MLPParams};
use crate::numerics::binary_entropy;

const PROBE_CHUNK: usize = 64;

/// Which training set a model was fitted on. Names the saved files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Toy,
    Mnist,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Toy => "toy2d",
            Domain::Mnist => "mnist01",
        }
    }
}

/// One probe's predictive summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub p_class1: f64,
    pub entropy: f64,
    pub extra: Vec<(&'static str, f64)>,
}

impl Prediction {
    fn new(p_class1: f64) -> Self {
        let p_class1 = p_class1.clamp(0.0, 1.0);
        Self {
            p_class1,
            entropy: binary_entropy(p_class1),
            extra: Vec::new(),
        }
    }
}

/// A fitted model of one method, ready to score probes.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Gp {
        state: LaplaceGPState,
        /// Maps raw inputs to the GP's feature space when present.
        encoder: Option<MLPParams>,
    },
    McDropout {
        net: MLPParams,
        cfg: MCDropoutConfig,
    },
    Mfvi {
        posterior: MeanFieldPosterior,
        sizes: Vec<usize>,
        n_draws: usize,
        seed: u64,
    },
    Hmc {
        chain: PosteriorChain,
        sizes: Vec<usize>,
    },
}

fn encoder_depth(encoder: &MLPParams) -> usize {
    encoder.n_layers() - 1
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::Gp { .. } => Method::Gp,
            TrainedModel::McDropout { .. } => Method::McDropout,
            TrainedModel::Mfvi { .. } => Method::Mfvi,
            TrainedModel::Hmc { .. } => Method::Hmc,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TrainedModel::Gp { state, encoder } => encoder.as_ref().map_or(state.inputs().rows(), |e| e.input_dim()),
            TrainedModel::McDropout { net, .. } => net.input_dim(),
            TrainedModel::Mfvi { sizes, .. } | TrainedModel::Hmc { sizes, .. } => sizes[0],
        }
    }

    /// Inputs in the space the GP kernel sees.
    pub fn gp_features(state: &LaplaceGPState, encoder: Option<&MLPParams>, xs: &[f64]) -> Result<Vec<f64>> {
        match encoder {
            None => Ok(xs.to_vec()),
            Some(e) => {
                let depth = encoder_depth(e);
                let parts: Vec<Vec<f64>> = xs
                    .par_chunks(e.input_dim() * PROBE_CHUNK)
                    .map(|chunk| {
                        let mut out = Vec::with_capacity(PROBE_CHUNK * state.inputs().rows());
                        for x in chunk.chunks(e.input_dim()) {
                            out.extend(encode(e, x, depth)?);
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                Ok(parts.concat())
            }
        }
    }

    /// Predictive distribution for probes stored column-major in `xs`.
    pub fn predict(&self, xs: &[f64]) -> Result<Vec<Prediction>> {
        let dim = self.input_dim();
        if !xs.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: xs.len() % dim,
            });
        }
        match self {
            TrainedModel::Gp { state, encoder } => {
                let feats = Self::gp_features(state, encoder.as_ref(), xs)?;
                let fdim = state.inputs().rows();
                let parts: Vec<Vec<Prediction>> = feats
                    .par_chunks(fdim * PROBE_CHUNK)
                    .map(|chunk| {
                        chunk
                            .chunks(fdim)
                            .map(|x| {
                                let (mean, var) = predict_latent(state, x)?;
                                let mut p = Prediction::new(link_integral(state.link(), mean, var));
                                p.extra = vec![("latent_mean", mean), ("latent_var", var)];
                                Ok(p)
                            })
                            .collect()
                    })
                    .collect::<Result<_>>()?;
                Ok(parts.concat())
            }
            TrainedModel::McDropout { net, cfg } => Ok(mc_predict_batch(net, xs, 0, cfg)?
                .into_iter()
                .map(|m| {
                    let mut p = Prediction::new(m.mean.get(1));
                    p.extra = vec![("mean_pass_entropy", m.mean_pass_entropy)];
                    p
                })
                .collect()),
            TrainedModel::Mfvi {
                posterior,
                sizes,
                n_draws,
                seed,
            } => Ok(posterior
                .predict_batch(sizes, xs, *n_draws, *seed)?
                .iter()
                .map(|p| Prediction::new(p.get(1)))
                .collect()),
            TrainedModel::Hmc { chain, sizes } => Ok(chain
                .predict_batch(sizes, xs)?
                .iter()
                .map(|p| Prediction::new(p.get(1)))
                .collect()),
        }
    }

    /// Accuracy of the method's point predictor: the deterministic network
    /// for MC dropout, the mean network for MFVI, the predictive argmax otherwise.
    pub fn accuracy(&self, d: &Dataset) -> Result<f64> {
        match self {
            TrainedModel::McDropout { net, .. } => accuracy(net, d),
            TrainedModel::Mfvi { posterior, sizes, .. } => accuracy(&posterior_mean_network(posterior, sizes)?, d),
            TrainedModel::Gp { .. } | TrainedModel::Hmc { .. } => {
                if d.is_empty() {
                    return Err(Error::EmptyResult("accuracy of an empty dataset".into()));
                }
                let preds = self.predict(d.features().as_slice())?;
                let hits = preds
                    .iter()
                    .zip(d.labels())
                    .filter(|(p, &y)| usize::from(p.p_class1 > 0.5) == y)
                    .count();
                Ok(hits as f64 / d.len() as f64)
            }
        }
    }

    /// Serializable parts, keyed by file stem suffix.
    fn files(&self) -> Vec<(&'static str, ModelFile<'_>)> {
        match self {
            TrainedModel::Gp { state, encoder } => {
                let mut v = vec![("", container::gp_file(state))];
                if let Some(e) = encoder {
                    v.push(("-encoder", container::mlp_file(e)));
                }
                v
            }
            TrainedModel::McDropout { net, .. } => vec![("", container::mlp_file(net))],
            TrainedModel::Mfvi { posterior, sizes, .. } => vec![("", container::mean_field_file(posterior, sizes))],
            TrainedModel::Hmc { chain, sizes } => vec![("", container::chain_file(chain, sizes))],
        }
    }
}

/// Where trained models are written to or read from.
#[derive(Debug, Clone, Default)]
pub struct ModelStore {
    pub save_dir: Option<PathBuf>,
    pub load_dir: Option<PathBuf>,
}

fn stem(domain: Domain, method: Method, suffix: &str) -> String {
    format!("{}-{}{}", domain.name(), method.name(), suffix)
}

fn file_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.uep"))
}

fn check_sizes(what: &str, found: &[usize], expected: &[usize]) -> Result<()> {
    if found != expected {
        return Err(Error::Config(format!(
            "saved {what} has layer sizes {found:?} but the config asks for {expected:?}"
        )));
    }
    Ok(())
}

impl ModelStore {
    /// Loads or trains the model, saves it when asked, and records the
    /// content hash of every file under its stem.
    pub fn obtain(
        &self,
        cfg: &ExperimentConfig,
        method: Method,
        domain: Domain,
        data: &Dataset,
        hashes: &mut BTreeMap<String, String>,
    ) -> Result<TrainedModel> {
        let model = match &self.load_dir {
            Some(dir) => load(cfg, method, domain, data, dir, hashes),
            None => fit(cfg, method, domain, data),
        }
        .map_err(|e| e.in_method(method.name()))?;
        for (suffix, file) in model.files() {
            let name = stem(domain, method, suffix);
            let hash = match &self.save_dir {
                Some(dir) => file.write(file_path(dir, &name))?,
                None => match hashes.get(&name) {
                    Some(h) => h.clone(),
                    None => file.hash(),
                },
            };
            hashes.insert(name, hash);
        }
        Ok(model)
    }
}

/// Layer sizes of the network behind `method`; the GP's encoder for MNIST.
fn architecture(cfg: &ExperimentConfig, method: Method, domain: Domain, data: &Dataset) -> Vec<usize> {
    let (input, classes) = (data.dim(), 2);
    match (method, domain) {
        (Method::Gp, Domain::Mnist) => cfg.encoder.net.sizes(input, classes),
        (Method::Gp, Domain::Toy) => vec![input],
        (Method::McDropout, Domain::Toy) => cfg.mlp.toy.sizes(input, classes),
        (Method::McDropout, Domain::Mnist) => cfg.mlp.mnist.sizes(input, classes),
        (Method::Mfvi, d) => {
            let m = if d == Domain::Toy {
                &cfg.mfvi.toy
            } else {
                &cfg.mfvi.mnist
            };
            [&[input][..], &m.hidden, &[classes]].concat()
        }
        (Method::Hmc, d) => {
            let h = if d == Domain::Toy { &cfg.hmc.toy } else { &cfg.hmc.mnist };
            [&[input][..], &h.hidden, &[classes]].concat()
        }
    }
}

fn mc_config(cfg: &ExperimentConfig, domain: Domain) -> MCDropoutConfig {
    let net = match domain {
        Domain::Toy => &cfg.mlp.toy,
        Domain::Mnist => &cfg.mlp.mnist,
    };
    MCDropoutConfig {
        n_samples: cfg.mcdropout.n_samples,
        dropout_rate: net.train.dropout_rate,
        seed: cfg.seed_for(SeedUse::McDropout),
    }
}

fn mfvi_draws(cfg: &ExperimentConfig, domain: Domain) -> usize {
    match domain {
        Domain::Toy => cfg.mfvi.toy.fit.n_predict,
        Domain::Mnist => cfg.mfvi.mnist.fit.n_predict,
    }
}

fn gp_training_set(cfg: &ExperimentConfig, data: &Dataset, encoder: Option<&MLPParams>) -> Result<Dataset> {
    let Some(e) = encoder else {
        return Ok(data.clone());
    };
    let sub = match cfg.mnist.gp_subsample {
        0 => data.clone(),
        n => data.subsample(n, cfg.seed_for(SeedUse::GpSubsample))?,
    };
    let depth = encoder_depth(e);
    sub.map_features(|x| encode(e, x, depth))
}

fn fit(cfg: &ExperimentConfig, method: Method, domain: Domain, data: &Dataset) -> Result<TrainedModel> {
    let sizes = architecture(cfg, method, domain, data);
    match method {
        Method::Gp => {
            let encoder = match domain {
                Domain::Toy => None,
                Domain::Mnist => {
                    let mut tc = cfg.encoder.net.train.clone();
                    tc.seed = cfg.seed_for(SeedUse::Encoder);
                    Some(train(&mlp_init(&sizes, tc.seed)?, data, &tc)?.params)
                }
            };
            let gp_data = gp_training_set(cfg, data, encoder.as_ref())?;
            let (_, state) = fit_hyperparams(&gp_data, &cfg.gp.grid(), cfg.gp.options())?;
            Ok(TrainedModel::Gp { state, encoder })
        }
        Method::McDropout => {
            let mut tc = match domain {
                Domain::Toy => cfg.mlp.toy.train.clone(),
                Domain::Mnist => cfg.mlp.mnist.train.clone(),
            };
            tc.seed = cfg.seed_for(SeedUse::Mlp);
            let net = train(&mlp_init(&sizes, tc.seed)?, data, &tc)?.params;
            Ok(TrainedModel::McDropout {
                net,
                cfg: mc_config(cfg, domain),
            })
        }
        Method::Mfvi => {
            let mut fc = match domain {
                Domain::Toy => cfg.mfvi.toy.fit.clone(),
                Domain::Mnist => cfg.mfvi.mnist.fit.clone(),
            };
            fc.seed = cfg.seed_for(SeedUse::MfviFit);
            let posterior = mfvi_train(&sizes, data, &fc)?.posterior;
            Ok(TrainedModel::Mfvi {
                posterior,
                sizes,
                n_draws: fc.n_predict,
                seed: cfg.seed_for(SeedUse::MfviPredict),
            })
        }
        Method::Hmc => {
            let mut hc = match domain {
                Domain::Toy => cfg.hmc.toy.sampler.clone(),
                Domain::Mnist => cfg.hmc.mnist.sampler.clone(),
            };
            hc.seed = cfg.seed_for(SeedUse::Hmc);
            let chain = hmc_sample(data, &sizes, &hc)?;
            Ok(TrainedModel::Hmc { chain, sizes })
        }
    }
}

fn load(
    cfg: &ExperimentConfig,
    method: Method,
    domain: Domain,
    data: &Dataset,
    dir: &Path,
    hashes: &mut BTreeMap<String, String>,
) -> Result<TrainedModel> {
    let sizes = architecture(cfg, method, domain, data);
    let path_of = |suffix: &str, hashes: &mut BTreeMap<String, String>| -> Result<PathBuf> {
        let name = stem(domain, method, suffix);
        let path = file_path(dir, &name);
        hashes.insert(name, container::file_hash(&path)?);
        Ok(path)
    };
    match method {
        Method::Gp => {
            let state = container::load_gp(path_of("", hashes)?)?;
            let encoder = match domain {
                Domain::Toy => None,
                Domain::Mnist => {
                    let e = container::load_mlp(path_of("-encoder", hashes)?)?;
                    check_sizes("encoder", e.sizes(), &sizes)?;
                    Some(e)
                }
            };
            let fdim = encoder.as_ref().map_or(data.dim(), |e| e.sizes()[encoder_depth(e)]);
            if state.inputs().rows() != fdim {
                return Err(Error::Config(format!(
                    "saved GP works on {}-dimensional inputs, expected {fdim}",
                    state.inputs().rows()
                )));
            }
            Ok(TrainedModel::Gp { state, encoder })
        }
        Method::McDropout => {
            let net = container::load_mlp(path_of("", hashes)?)?;
            check_sizes("network", net.sizes(), &sizes)?;
            Ok(TrainedModel::McDropout {
                net,
                cfg: mc_config(cfg, domain),
            })
        }
        Method::Mfvi => {
            let (posterior, found) = container::load_mean_field(path_of("", hashes)?)?;
            check_sizes("posterior", &found, &sizes)?;
            Ok(TrainedModel::Mfvi {
                posterior,
                sizes,
                n_draws: mfvi_draws(cfg, domain),
                seed: cfg.seed_for(SeedUse::MfviPredict),
            })
        }
        Method::Hmc => {
            let (chain, found) = container::load_chain(path_of("", hashes)?)?;
            check_sizes("chain", &found, &sizes)?;
            Ok(TrainedModel::Hmc { chain, sizes })
        }
    }
}

/// `max_i k(x, xᵢ)` over the GP's training inputs.
pub fn kstar_inf(state: &LaplaceGPState, x: &[f64]) -> Result<f64> {
    Ok(kernel_vector(state.inputs(), x, &state.params())?
        .into_iter()
        .fold(0.0, f64::max))
}
