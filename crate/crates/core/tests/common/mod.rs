//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use dga::network::{Mlp, MlpGrads};
use dga::prior::PriorCounter;
use dga::training::{dga_loss, example_gradients, grad_wrt_code};
use dga::{DgaModel, ModelShape, RngState};

/// Where the MNIST IDX files live; `DGA_MNIST_DIR` overrides.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("DGA_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn random_bits(n: usize, rng: &mut RngState) -> Vec<u8> {
    (0..n).map(|_| rng.bernoulli(0.5) as u8).collect()
}

/// A model whose prior has seen a few random codes.
pub fn probe_model(shape: &ModelShape, seed: u64) -> DgaModel {
    let mut rng = RngState::new(seed);
    let mut m = DgaModel::new(shape, 1.0, 1.0, &mut rng).unwrap();
    let mut prior = PriorCounter::new(shape.code_dim, 1.0).unwrap();
    for _ in 0..5 {
        prior.update(&random_bits(shape.code_dim, &mut rng)).unwrap();
    }
    m.prior = prior;
    m
}

/// Parameter slot `(layer, index)` where indices past the weights address
/// the bias.
fn param_mut(mlp: &mut Mlp, layer: usize, idx: usize) -> &mut f64 {
    let l = &mut mlp.layers_mut()[layer];
    let nw = l.weights.as_slice().len();
    if idx < nw {
        &mut l.weights.as_mut_slice()[idx]
    } else {
        &mut l.bias[idx - nw]
    }
}

fn grad_at(g: &MlpGrads, layer: usize, idx: usize) -> f64 {
    let nw = g.weights[layer].as_slice().len();
    if idx < nw {
        g.weights[layer].as_slice()[idx]
    } else {
        g.biases[layer][idx - nw]
    }
}

fn param_count(mlp: &Mlp, layer: usize) -> usize {
    let l = &mlp.layers()[layer];
    l.weights.as_slice().len() + l.bias.len()
}

/// Largest relative error between analytic and central-difference
/// gradients over one random decoder parameter and one random encoder
/// parameter. Encoder parameters are checked against the straight-through
/// surrogate `Σ_i g_i a_i(θ)` with `g` held fixed.
pub fn gradient_probe(shape: &ModelShape, seed: u64, beta: f64, noise: f64) -> (f64, f64) {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;
    let model = probe_model(shape, seed);
    let mut rng = RngState::new(seed ^ 0xabcd);
    let x = random_bits(shape.input_dim, &mut rng);
    let noise_rng = rng.split(1);

    let (dec_g, enc_g, _) = example_gradients(&model, &x, beta, noise, &mut noise_rng.clone()).unwrap();
    let loss = |m: &DgaModel| {
        let (r, _) = dga_loss(m, &x, beta, noise, &mut noise_rng.clone()).unwrap();
        r.total_loss
    };

    let dl = rng.below(model.decoder.layers().len());
    let di = rng.below(param_count(&model.decoder, dl));
    let mut plus = model.clone();
    *param_mut(&mut plus.decoder, dl, di) += EPS;
    let mut minus = model.clone();
    *param_mut(&mut minus.decoder, dl, di) -= EPS;
    let fd = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
    let dec_err = rel_err(grad_at(&dec_g, dl, di), fd, FLOOR);

    let (_, inter) = dga_loss(&model, &x, beta, noise, &mut noise_rng.clone()).unwrap();
    let (_, d_h) = model.decoder_backward(&inter.decoder, &x).unwrap();
    let g = grad_wrt_code(&d_h, &inter.replaced, &inter.prior, beta);
    let surrogate = |m: &DgaModel| -> f64 {
        let a = m.encode(&x).unwrap().pre_activation;
        a.iter().zip(&g).map(|(a, g)| a * g).sum()
    };
    let el = rng.below(model.encoder.layers().len());
    let ei = rng.below(param_count(&model.encoder, el));
    let mut plus = model.clone();
    *param_mut(&mut plus.encoder, el, ei) += EPS;
    let mut minus = model.clone();
    *param_mut(&mut minus.encoder, el, ei) -= EPS;
    let fd = (surrogate(&plus) - surrogate(&minus)) / (2.0 * EPS);
    let enc_err = rel_err(grad_at(&enc_g, el, ei), fd, FLOOR);
    (dec_err, enc_err)
}

/// Largest relative error of `∂L/∂h` against differences of the loss in a
/// real-valued decoder input, plus the relaxed prior term.
pub fn code_gradient_probe(shape: &ModelShape, seed: u64, beta: f64) -> f64 {
    const EPS: f64 = 1e-6;
    let model = probe_model(shape, seed);
    let mut rng = RngState::new(seed ^ 0x77);
    let x = random_bits(shape.input_dim, &mut rng);
    let (_, inter) = dga_loss(&model, &x, beta, 0.0, &mut rng).unwrap();
    let (_, d_h) = model.decoder_backward(&inter.decoder, &x).unwrap();
    let g = grad_wrt_code(&d_h, &inter.replaced, &inter.prior, beta);
    let h: Vec<f64> = inter.encoder.code.iter().map(|&b| f64::from(b)).collect();
    let xf: Vec<f64> = x.iter().map(|&b| f64::from(b)).collect();
    let relaxed = |h: &[f64]| {
        let pass = model.decoder_forward(h).unwrap();
        -dga::network::reconstruction_log_prob(&xf, pass.logits())
            + beta * inter.prior.relaxed_cross_entropy(h).unwrap()
    };
    let mut worst: f64 = 0.0;
    for i in 0..h.len() {
        let mut hp = h.clone();
        hp[i] += EPS;
        let mut hm = h.clone();
        hm[i] -= EPS;
        let fd = (relaxed(&hp) - relaxed(&hm)) / (2.0 * EPS);
        worst = worst.max(rel_err(g[i], fd, 1e-3));
    }
    worst
}
