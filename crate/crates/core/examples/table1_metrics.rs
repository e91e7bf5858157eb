//! Entropy, average active bits and off-diagonal correlation norm of
//! binarized MNIST, optionally followed by each code level of a saved model.
//!
//! cargo run --release --example table1_metrics -- [train-images] [rows] [model.dga]

use std::path::PathBuf;

use dga::stack::level_datasets;
use dga::{load_idx_and_binarize, load_model, table1_metrics, Binarization};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist/train-images-idx3-ubyte".into()));
    let rows: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(50_000);
    let model = args.next();

    let data = load_idx_and_binarize(&path, Binarization::Threshold)?.slice(0, rows);
    let levels = match model {
        Some(m) => level_datasets(&load_model(m.as_ref())?.0, &data)?,
        None => vec![data.clone()],
    };
    println!(
        "{} rows, binarization {:?}, sha256 {}",
        data.rows(),
        data.provenance().binarization,
        &data.provenance().content_hash[..16]
    );
    println!("{:<6} {:>10} {:>12} {:>12}", "level", "entropy", "active bits", "corr norm");
    for (k, level) in levels.iter().enumerate() {
        let m = table1_metrics(level)?;
        println!("{:<6} {:>10.2} {:>12.2} {:>12.2}", k, m.entropy_bits, m.avg_active_bits, m.offdiag_corr_fro);
    }
    Ok(())
}
