//! Round-trip a network through the model container and print its hash.

use ue_probe::container::{file_hash, load_mlp, save_mlp};
use ue_probe::nnet::mlp_init;

fn main() -> ue_probe::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("net.uep");
    let net = mlp_init(&[784, 500, 2], 0)?;
    let hash = save_mlp(&net, &path)?;
    let back = load_mlp(&path)?;
    println!("{} parameters written to {}", back.len(), path.display());
    println!("hash {hash}");
    assert_eq!(back, net);
    assert_eq!(file_hash(&path)?, hash);
    Ok(())
}
