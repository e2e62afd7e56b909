//! Load an IDX image/label pair and print class counts.
//! Usage: `mnist_idx [images labels]`.

use std::path::PathBuf;

use ue_probe::datasets::load_idx;

fn main() -> ue_probe::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = match args.as_slice() {
        [i, l] => (PathBuf::from(i), PathBuf::from(l)),
        _ => {
            let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-npm");
            (dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
        }
    };
    let d = load_idx(&images, &labels)?;
    println!("{} images of dimension {}", d.len(), d.dim());
    let mut counts = [0usize; 10];
    for &y in d.labels() {
        counts[y] += 1;
    }
    for (digit, n) in counts.iter().enumerate() {
        println!("{digit}: {n}");
    }
    Ok(())
}
