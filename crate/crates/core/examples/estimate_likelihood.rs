//! Normalized log-likelihood of a saved model on a slice of test rows:
//! unnormalized `ln P*`, the importance-sampled `ln Z` with its standard
//! error, and their difference.
//!
//! cargo run --release --example estimate_likelihood -- <model.dga> [test-images] [rows] [N] [S] [seed]

use std::path::PathBuf;

use dga::{evaluate, load_idx_and_binarize, load_model, Binarization};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let model_path = PathBuf::from(args.next().expect("usage: estimate_likelihood <model.dga> ..."));
    let data_path = PathBuf::from(args.next().unwrap_or_else(|| "data/mnist/t10k-images-idx3-ubyte".into()));
    let mut num = |d: usize| args.next().and_then(|a| a.parse().ok()).unwrap_or(d);
    let (rows, n, s, seed) = (num(1000), num(1000), num(100_000), num(0) as u64);

    let (model, info) = load_model(&model_path)?;
    let test = load_idx_and_binarize(&data_path, Binarization::Threshold)?.slice(0, rows);
    let started = std::time::Instant::now();
    let r = evaluate(&model, &test, n, s, seed)?;
    println!("model       {} (trained with seed {:?})", model_path.display(), info.seed);
    println!("test rows   {} ({})", r.examples, test.provenance().binarization);
    println!(
        "ln P*       {:.3} nats  (reconstruction {:.3}, prior {:.3})",
        r.mean_log_p_star_nats, r.mean_reconstruction_nats, r.mean_prior_nats
    );
    println!(
        "ln Z        {:.4} ± {:.4}  (N {}, S {}, seeds {}/{})",
        r.log_z, r.log_z_std_err, r.n_centroids, r.n_is_samples, r.seeds.proposal, r.seeds.importance
    );
    println!("ln P(x)     {:.3} nats = {:.3} bits per example", r.mean_log_likelihood_nats, r.mean_log_likelihood_bits);
    println!("took {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
