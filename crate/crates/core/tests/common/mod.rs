#![allow(dead_code)]

use ue_probe::harness::ExperimentConfig;

/// A toy2d configuration small enough to train every method in seconds.
pub const SMALL_TOY: &str = r#"
experiment = "toy2d"
methods = ["gp", "mcdropout", "mfvi", "hmc"]
seed = 3

[toy]
n_per_class = 40
resolution = 12

[mlp.toy]
hidden = [32]

[mlp.toy.train]
epochs = 30
dropout_rate = 0.5

[mcdropout]
n_samples = 20

[mfvi.toy]
hidden = [16]

[mfvi.toy.fit]
epochs = 40

[hmc.toy]
hidden = [16]

[hmc.toy.sampler]
step_size = 0.002
trajectory_length = 5
n_samples = 20
burn_in = 10
"#;

pub fn small_toy() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL_TOY).expect("small toy config parses")
}
