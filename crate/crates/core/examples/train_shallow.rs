//! Trains one model on a synthetic 3-bit manifold embedded in 16 bits,
//! saves it, reloads it and checks that the reloaded model scores every
//! training row identically.
//!
//! cargo run --release --example train_shallow -- [epochs] [out-dir]

use std::path::PathBuf;

use dga::{load_model, log_p_star_batch, save_model, synth_manifold, train_shallow};
use dga::{BetaSchedule, GenerativeStack, ModelInfo, ModelShape, RngState, TrainConfig};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(100);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/train_shallow".into()));

    let data = synth_manifold(2000, 16, 3, &mut RngState::new(5))?;
    let cfg =
        TrainConfig { epochs, seed: 5, beta: BetaSchedule::linear(0.0, 1.0, epochs / 2), ..TrainConfig::default() };
    let model = train_shallow(&data, &ModelShape::new(16, 10), &cfg, |s| {
        if s.epoch % 10 == 0 || s.epoch + 1 == epochs {
            println!(
                "epoch {:4}  recon {:.4}  prior {:.4}  beta {:.2}  total {:.4}",
                s.epoch, s.recon_nll, s.prior_nll, s.beta, s.total_loss
            );
        }
    })?;
    let probs = model.prior_snapshot()?;
    println!("prior entropy {:.3} bits over {} code bits", probs.entropy_bits(), model.code_dim());

    std::fs::create_dir_all(&out).map_err(|e| dga::DgaError::io(&out, e))?;
    let path = out.join("model.dga");
    save_model(&path, std::slice::from_ref(&model), &ModelInfo { seed: Some(5), ..ModelInfo::default() })?;
    let (reloaded, info) = load_model(&path)?;
    let x = data.to_matrix();
    let same = log_p_star_batch(&model, &x)? == log_p_star_batch(&reloaded, &x)?;
    println!(
        "saved {} (seed {:?}, {} stage); reload scores identical: {same}",
        path.display(),
        info.seed,
        reloaded.stages().len()
    );
    Ok(())
}
