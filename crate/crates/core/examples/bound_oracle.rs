//! Trains a small model on a 3-bit manifold embedded in 12 bits, then checks
//! by enumeration that `P*(x)` never exceeds the true marginal and that the
//! importance-sampled `ln Z` agrees with the exact sum.
//!
//! cargo run --release --example bound_oracle -- [epochs] [seed]

use dga::eval::{all_binary_vectors, exact_log_marginals};
use dga::{build_proposal, estimate_log_z, exact_log_z, log_p_star_batch, synth_manifold, train_shallow};
use dga::{BetaSchedule, ModelShape, RngState, TrainConfig};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let data = synth_manifold(2000, 12, 3, &mut RngState::new(seed))?;
    println!("distinct training rows: {}", data.distinct_rows());
    let cfg = TrainConfig { epochs, seed, beta: BetaSchedule::linear(0.0, 1.0, epochs / 2), ..TrainConfig::default() };
    let model = train_shallow(&data, &ModelShape::new(12, 8), &cfg, |s| {
        if s.epoch % 25 == 0 || s.epoch + 1 == epochs {
            println!(
                "epoch {:4}  recon {:.4}  prior {:.4}  beta {:.2}  lr {}",
                s.epoch, s.recon_nll, s.prior_nll, s.beta, s.lr
            );
        }
    })?;

    let xs = all_binary_vectors(12)?;
    let star = log_p_star_batch(&model, &xs)?;
    let marg = exact_log_marginals(&model, &xs)?;
    let violations = star.iter().zip(&marg).filter(|(s, m)| s.exp() > m.exp() + 1e-12).count();
    println!("bound violations: {violations} of {}", xs.rows());

    let exact = exact_log_z(&model)?;
    let proposal = build_proposal(&model, 100, &mut RngState::new(seed ^ 0x5eed))?;
    let est = estimate_log_z(&model, &proposal, 100_000, &mut RngState::new(seed ^ 0xface))?;
    println!("ln Z exact {exact:.5}  estimate {:.5} ± {:.5}", est.log_z, est.std_err);
    Ok(())
}
