//! Ancestral samples from a saved model, written as a grid of decoder
//! means. Without a model argument a small model is trained on 4x4 synthetic
//! patterns first.
//!
//! cargo run --release --example sample_grid -- [model.dga] [out.pgm] [seed]

use std::path::PathBuf;

use dga::{ancestral_sample, load_model, synth_manifold, train_shallow, write_pgm};
use dga::{DeepDga, GenerativeStack, GridLayout, IntermediateMode, ModelShape, RngState, TrainConfig};

fn main() -> dga::Result<()> {
    let mut args = std::env::args().skip(1);
    let model_path = args.next().filter(|a| a != "-");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "samples.pgm".into()));
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let model = match model_path {
        Some(p) => load_model(p.as_ref())?.0,
        None => {
            let data = synth_manifold(1000, 16, 3, &mut RngState::new(seed))?;
            let cfg = TrainConfig { epochs: 100, seed, ..TrainConfig::default() };
            DeepDga::from(train_shallow(&data, &ModelShape::new(16, 8), &cfg, |_| {})?)
        }
    };
    let side = (model.input_dim() as f64).sqrt() as usize;
    assert_eq!(side * side, model.input_dim(), "square inputs only");
    let layout = GridLayout::square(side, 10, 10);

    let samples = ancestral_sample(&model, 100, &mut RngState::new(seed), IntermediateMode::Threshold)?;
    write_pgm(&out, &samples.means, layout)?;
    let on: f64 = samples.bits.iter().flatten().map(|&b| f64::from(b)).sum::<f64>() / 100.0;
    println!(
        "{} stage(s), {}x{} grid -> {} ({on:.1} bits on per sample)",
        model.stages().len(),
        layout.width(),
        layout.height(),
        out.display()
    );
    Ok(())
}
