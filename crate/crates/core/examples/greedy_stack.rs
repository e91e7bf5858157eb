//! Greedy pretraining of a deep model from a run config, followed by the
//! entropy, active-bit and correlation diagnostics of the data and of every
//! code level. The stack is saved to `<out>/model.dga`.
//!
//! cargo run --release --example greedy_stack -- [config] [epochs-per-stage]

use std::path::{Path, PathBuf};

use dga::stack::level_datasets;
use dga::{greedy_pretrain, save_model, table1_metrics, GenerativeStack, ModelInfo, RunConfig};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "configs/mnist-deep2.json".into()));
    let mut cfg = RunConfig::from_path(&path)?;
    if let Some(epochs) = args.next().and_then(|a| a.parse().ok()) {
        for s in &mut cfg.stages {
            s.epochs = epochs;
            s.ramp_epochs = s.ramp_epochs.map(|r| r.min(epochs));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let data = cfg.train_data.load(base)?;
    println!("{} rows of width {} from {}", data.rows(), data.width(), data.provenance().split);

    let start = std::time::Instant::now();
    let trained = greedy_pretrain(&data, &cfg.shapes(data.width())?, &cfg.schedule(), &cfg.train_config(), |s| {
        if s.epoch % 10 == 9 {
            println!(
                "stage {} epoch {:3}  recon {:8.3}  prior {:8.3}  beta {:.3}  lr {}  ({:.0}s)",
                s.stage.unwrap_or(0),
                s.epoch + 1,
                s.recon_nll,
                s.prior_nll,
                s.beta,
                s.lr,
                start.elapsed().as_secs_f64()
            );
        }
    })?;

    println!("\n{:<12} {:>10} {:>12} {:>12}", "level", "entropy", "active bits", "corr norm");
    let mut name = "X".to_string();
    for (k, level) in level_datasets(&trained.model, &data)?.iter().enumerate() {
        if k > 0 {
            name = format!("f{k}({name})");
        }
        let m = table1_metrics(level)?;
        println!("{:<12} {:>10.2} {:>12.2} {:>12.2}", name, m.entropy_bits, m.avg_active_bits, m.offdiag_corr_fro);
    }

    std::fs::create_dir_all(&cfg.out).map_err(|e| dga::DgaError::io(&cfg.out, e))?;
    let model_path = cfg.out.join("model.dga");
    let info = ModelInfo { seed: Some(cfg.seed), config_hash: Some(cfg.hash()), ..ModelInfo::default() };
    save_model(&model_path, trained.model.stages(), &info)?;
    println!("\nsaved {}", model_path.display());
    Ok(())
}
