//! Loss, straight-through pseudo-gradient, decoder-input noise, the β
//! annealing schedule and the minibatch SGD loop.
//!
//! Every epoch draws its randomness from `RngState::new(seed).split(epoch + 1)`
//! (parameter initialization uses `split(0)`), so an epoch can be replayed
//! from the config alone.

use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_len, DgaError, Result};
use crate::network::{
    reconstruction_log_prob, threshold_codes, DecoderPass, DgaModel, EncoderActivations, MlpGrads, ModelShape,
};
use crate::numerics::{Matrix, RngState};
use crate::prior::{FactorizedBernoulli, PriorCounter};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampShape {
    Linear,
    /// Log-linear interpolation; needs a strictly positive start.
    Geometric,
}

/// β as a function of the epoch: ramps from `start` to `end` over
/// `ramp_epochs`, then holds. Without an explicit ramp length the ramp covers
/// the first half of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub ramp_epochs: Option<usize>,
    pub shape: RampShape,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self { start: 0.0, end: 1.0, ramp_epochs: None, shape: RampShape::Linear }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self { start: beta, end: beta, ramp_epochs: Some(0), shape: RampShape::Linear }
    }

    pub fn linear(start: f64, end: f64, ramp_epochs: usize) -> Self {
        Self { start, end, ramp_epochs: Some(ramp_epochs), shape: RampShape::Linear }
    }

    pub fn ramp_length(&self, total_epochs: usize) -> usize {
        self.ramp_epochs.unwrap_or(total_epochs / 2)
    }

    pub fn beta_at(&self, epoch: usize, total_epochs: usize) -> f64 {
        let ramp = self.ramp_length(total_epochs);
        if ramp == 0 || epoch >= ramp {
            return self.end;
        }
        let t = epoch as f64 / ramp as f64;
        match self.shape {
            RampShape::Linear => self.start + (self.end - self.start) * t,
            RampShape::Geometric => self.start * (self.end / self.start).powf(t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..=1.0).contains(&b);
        if !in_unit(self.start) || !in_unit(self.end) {
            return Err(DgaError::Config(format!("β endpoints {} and {} must lie in [0, 1]", self.start, self.end)));
        }
        if self.end < self.start {
            return Err(DgaError::Config("β schedule must be non-decreasing".into()));
        }
        if self.shape == RampShape::Geometric && self.start <= 0.0 {
            return Err(DgaError::Config("a geometric β ramp needs a positive start".into()));
        }
        Ok(())
    }
}

fn default_minibatch() -> usize {
    100
}
fn default_lr() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_noise() -> f64 {
    0.01
}
fn default_epochs() -> usize {
    20
}
fn default_alpha() -> f64 {
    1.0
}
fn default_decay() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_minibatch")]
    pub minibatch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_true")]
    pub lr_halving: bool,
    #[serde(default)]
    pub beta: BetaSchedule,
    #[serde(default = "default_noise")]
    pub noise_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub prior_alpha: f64,
    #[serde(default = "default_decay")]
    pub prior_decay: f64,
    /// Recount the prior over the whole dataset with the final encoder once
    /// training ends, instead of keeping the last epoch's running counts.
    #[serde(default)]
    pub refit_prior: bool,
    /// Restart the prior counts at every epoch, so they always describe the
    /// current encoder. Otherwise counts accumulate (subject to decay).
    #[serde(default = "default_true")]
    pub prior_reset_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch_size: default_minibatch(),
            learning_rate: default_lr(),
            lr_halving: true,
            beta: BetaSchedule::default(),
            noise_rate: default_noise(),
            epochs: default_epochs(),
            seed: 0,
            prior_alpha: default_alpha(),
            prior_decay: default_decay(),
            refit_prior: false,
            prior_reset_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(DgaError::Config("minibatch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DgaError::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=0.5).contains(&self.noise_rate) {
            return Err(DgaError::Config(format!("noise rate {} must lie in [0, 0.5]", self.noise_rate)));
        }
        self.beta.validate()?;
        PriorCounter::with_decay(1, self.prior_alpha, self.prior_decay)?;
        Ok(())
    }
}

/// Loss terms of one example or the average over one minibatch (nats).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub epoch: usize,
    pub minibatch: usize,
    pub reconstruction_nll: f64,
    pub prior_nll: f64,
    pub beta: f64,
    pub total_loss: f64,
}

impl StepReport {
    fn new(epoch: usize, minibatch: usize, reconstruction_nll: f64, prior_nll: f64, beta: f64) -> Self {
        Self {
            epoch,
            minibatch,
            reconstruction_nll,
            prior_nll,
            beta,
            total_loss: reconstruction_nll + beta * prior_nll,
        }
    }
}

/// Per-epoch averages; serialized as one JSON line of progress output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<usize>,
    pub epoch: usize,
    pub recon_nll: f64,
    pub prior_nll: f64,
    pub beta: f64,
    pub lr: f64,
    pub total_loss: f64,
}

/// Everything [`dga_loss`] computed on the way to its report.
#[derive(Clone, Debug)]
pub struct LossIntermediates {
    pub encoder: EncoderActivations,
    pub prior: FactorizedBernoulli,
    /// Decoder input after corruption.
    pub corrupted: Vec<u8>,
    /// `true` where salt-and-pepper noise replaced the bit.
    pub replaced: Vec<bool>,
    pub decoder: DecoderPass,
}

/// Replaces each bit, with probability `rate`, by a fair coin flip.
pub fn salt_and_pepper(h: &[u8], rate: f64, rng: &mut RngState) -> Vec<u8> {
    salt_and_pepper_masked(h, rate, rng).0
}

/// Like [`salt_and_pepper`], also reporting which bits were selected.
pub fn salt_and_pepper_masked(h: &[u8], rate: f64, rng: &mut RngState) -> (Vec<u8>, Vec<bool>) {
    let mut out = h.to_vec();
    let mut replaced = vec![false; h.len()];
    if rate > 0.0 {
        for (bit, sel) in out.iter_mut().zip(replaced.iter_mut()) {
            if rng.uniform() < rate {
                *sel = true;
                *bit = u8::from(rng.uniform() < 0.5);
            }
        }
    }
    (out, replaced)
}

/// The straight-through rule: the pseudo-gradient on the encoder's
/// pre-threshold activation is the gradient with respect to its binary
/// output.
pub fn straight_through_delta(grad_wrt_f: &[f64]) -> Vec<f64> {
    grad_wrt_f.to_vec()
}

/// Loss of one example under the annealed objective
/// `recon + β · prior`, with the prior term scored on the clean code and the
/// decoder fed the corrupted code.
pub fn dga_loss(
    model: &DgaModel,
    x: &[u8],
    beta: f64,
    noise_rate: f64,
    rng: &mut RngState,
) -> Result<(StepReport, LossIntermediates)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(DgaError::Config(format!("β = {beta} outside [0, 1]")));
    }
    let prior = model.prior_snapshot()?;
    let encoder = model.encode(x)?;
    let (corrupted, replaced) = salt_and_pepper_masked(&encoder.code, noise_rate, rng);
    let hf: Vec<f64> = corrupted.iter().map(|&b| f64::from(b)).collect();
    let decoder = model.decoder_forward(&hf)?;
    let xf: Vec<f64> = x.iter().map(|&b| f64::from(b)).collect();
    let recon = -reconstruction_log_prob(&xf, decoder.logits());
    let prior_nll = -prior.log_prob_unchecked(&encoder.code);
    let report = StepReport::new(0, 0, recon, prior_nll, beta);
    Ok((report, LossIntermediates { encoder, prior, corrupted, replaced, decoder }))
}

/// Gradient of the annealed loss with respect to the encoder output `f(x)`:
/// the decoder's input gradient (zero on bits the noise replaced) plus
/// `β · ln((1 - p_i) / p_i)`.
pub fn grad_wrt_code(
    decoder_input_grad: &[f64],
    replaced: &[bool],
    prior: &FactorizedBernoulli,
    beta: f64,
) -> Vec<f64> {
    let pull = prior.logit_pull();
    decoder_input_grad.iter().zip(replaced).zip(pull).map(|((g, &r), p)| if r { 0.0 } else { *g } + beta * p).collect()
}

/// Decoder gradients, straight-through encoder gradients and loss report
/// for a single example.
pub fn example_gradients(
    model: &DgaModel,
    x: &[u8],
    beta: f64,
    noise_rate: f64,
    rng: &mut RngState,
) -> Result<(MlpGrads, MlpGrads, StepReport)> {
    let (report, inter) = dga_loss(model, x, beta, noise_rate, rng)?;
    let (dec_grads, d_h) = model.decoder_backward(&inter.decoder, x)?;
    let delta_a = straight_through_delta(&grad_wrt_code(&d_h, &inter.replaced, &inter.prior, beta));
    let enc_grads = model.encoder_backward(&inter.encoder, &delta_a)?;
    Ok((dec_grads, enc_grads, report))
}

/// Halves `lr` when the latest epoch's average loss is strictly above the
/// previous one's.
pub fn lr_policy(history: &[f64], lr: f64) -> f64 {
    match history {
        [.., prev, last] if last > prev => lr / 2.0,
        _ => lr,
    }
}

/// Which loss a minibatch step optimizes.
#[derive(Clone, Copy, Debug)]
enum Objective<'a> {
    Dga {
        beta: f64,
        prior: &'a FactorizedBernoulli,
    },
    /// Reconstruction only; the prior is never read or updated.
    Autoencoder,
}

struct BatchTotals {
    recon: f64,
    prior: f64,
}

fn corrupt_batch(codes: &Matrix, rate: f64, rng: &mut RngState) -> (Matrix, Vec<bool>) {
    let mut noisy = codes.clone();
    let mut replaced = vec![false; codes.as_slice().len()];
    if rate > 0.0 {
        for (v, sel) in noisy.as_mut_slice().iter_mut().zip(replaced.iter_mut()) {
            if rng.uniform() < rate {
                *sel = true;
                *v = if rng.uniform() < 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    (noisy, replaced)
}

/// One SGD step on a minibatch (rows of `x`), gradients averaged over rows.
fn minibatch_step(
    model: &mut DgaModel,
    x: &Matrix,
    objective: Objective<'_>,
    noise_rate: f64,
    lr: f64,
    rng: &mut RngState,
) -> Result<BatchTotals> {
    let n = x.rows() as f64;
    let enc_cache = model.encoder.forward(x)?;
    let codes = threshold_codes(&enc_cache.top_pre);
    let code_bits: Vec<Vec<u8>> = (0..codes.rows()).map(|r| codes.row(r).iter().map(|&v| v as u8).collect()).collect();

    let mut prior_total = 0.0;
    if let Objective::Dga { prior, .. } = objective {
        for bits in &code_bits {
            model.prior.update(bits)?;
            prior_total -= prior.log_prob_unchecked(bits);
        }
    }

    let (noisy, replaced) = corrupt_batch(&codes, noise_rate, rng);
    let dec_cache = model.decoder.forward(&noisy)?;
    let mut recon_total = 0.0;
    for r in 0..x.rows() {
        recon_total -= reconstruction_log_prob(x.row(r), dec_cache.top_pre.row(r));
    }

    let mut d_top = dec_cache.output.clone();
    for (d, t) in d_top.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d = (*d - t) / n;
    }
    let mut dec_grads = MlpGrads::zeros_like(&model.decoder);
    let mut delta_a = model.decoder.backward(&dec_cache, d_top, &mut dec_grads, true)?.expect("input grad requested");
    for (d, &r) in delta_a.as_mut_slice().iter_mut().zip(&replaced) {
        if r {
            *d = 0.0;
        }
    }
    if let Objective::Dga { beta, prior } = objective {
        let pull: Vec<f64> = prior.logit_pull().iter().map(|p| beta * p / n).collect();
        delta_a.add_row_broadcast(&pull);
    }
    let mut enc_grads = MlpGrads::zeros_like(&model.encoder);
    model.encoder.backward(&enc_cache, delta_a, &mut enc_grads, false)?;

    model.decoder.apply_gradients(&dec_grads, lr);
    model.encoder.apply_gradients(&enc_grads, lr);
    Ok(BatchTotals { recon: recon_total, prior: prior_total })
}

fn epoch_rng(seed: u64, epoch: usize) -> RngState {
    RngState::new(seed).split(epoch as u64 + 1)
}

fn run_epoch(
    model: &mut DgaModel,
    data: &BinaryDataset,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    with_prior: bool,
) -> Result<EpochSummary> {
    if data.rows() == 0 {
        return Err(DgaError::Config("cannot train on an empty dataset".into()));
    }
    check_len("dataset width", data.width(), model.input_dim())?;
    cfg.validate()?;
    let beta = if with_prior { cfg.beta.beta_at(epoch, cfg.epochs) } else { 0.0 };
    let mut rng = epoch_rng(cfg.seed, epoch);
    let order = rng.permutation(data.rows());
    if with_prior && cfg.prior_reset_each_epoch {
        model.prior = PriorCounter::with_decay(model.code_dim(), model.prior.alpha(), model.prior.decay())?;
    }
    let (mut recon, mut prior) = (0.0, 0.0);
    for idx in order.chunks(cfg.minibatch_size) {
        let x = data.batch(idx);
        let totals = if with_prior {
            let snapshot = model.prior_snapshot()?;
            minibatch_step(model, &x, Objective::Dga { beta, prior: &snapshot }, cfg.noise_rate, lr, &mut rng)?
        } else {
            minibatch_step(model, &x, Objective::Autoencoder, cfg.noise_rate, lr, &mut rng)?
        };
        recon += totals.recon;
        prior += totals.prior;
    }
    let n = data.rows() as f64;
    let (recon_nll, prior_nll) = (recon / n, prior / n);
    Ok(EpochSummary { stage: None, epoch, recon_nll, prior_nll, beta, lr, total_loss: recon_nll + beta * prior_nll })
}

/// One pass of shuffled minibatch SGD on the annealed DGA loss. The prior
/// counter restarts at the epoch's first minibatch and ends up holding the
/// frequency counts of every clean code emitted during the epoch.
pub fn train_epoch(
    model: &mut DgaModel,
    data: &BinaryDataset,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<EpochSummary> {
    run_epoch(model, data, cfg, epoch, lr, true)
}

/// Same loop as [`train_epoch`] for a plain autoencoder: no prior term,
/// no prior counting.
pub fn train_autoencoder_epoch(
    model: &mut DgaModel,
    data: &BinaryDataset,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<EpochSummary> {
    run_epoch(model, data, cfg, epoch, lr, false)
}

/// Recounts the prior over `data` with the current encoder.
pub fn refit_prior(model: &mut DgaModel, data: &BinaryDataset) -> Result<()> {
    let mut counter = PriorCounter::with_decay(model.code_dim(), model.prior.alpha(), 1.0)?;
    for chunk in (0..data.rows()).collect::<Vec<_>>().chunks(1000) {
        let codes = model.encode_batch(&data.batch(chunk))?;
        for r in 0..codes.rows() {
            let bits: Vec<u8> = codes.row(r).iter().map(|&v| v as u8).collect();
            counter.update(&bits)?;
        }
    }
    model.prior =
        PriorCounter::from_counts(counter.ones().to_vec(), counter.total(), model.prior.alpha(), model.prior.decay())?;
    Ok(())
}

/// Owns a model through a full training run, applying the learning-rate
/// policy between epochs.
pub struct Trainer {
    model: DgaModel,
    cfg: TrainConfig,
    lr: f64,
    last: Option<EpochSummary>,
    epoch: usize,
}

impl Trainer {
    /// Fresh model initialized from `split(0)` of the config seed.
    pub fn new(shape: &ModelShape, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = RngState::new(cfg.seed).split(0);
        let model = DgaModel::new(shape, cfg.prior_alpha, cfg.prior_decay, &mut init_rng)?;
        Ok(Self::from_model(model, cfg))
    }

    pub fn from_model(model: DgaModel, cfg: TrainConfig) -> Self {
        let lr = cfg.learning_rate;
        Self { model, cfg, lr, last: None, epoch: 0 }
    }

    pub fn model(&self) -> &DgaModel {
        &self.model
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step_epoch(&mut self, data: &BinaryDataset) -> Result<EpochSummary> {
        let summary = train_epoch(&mut self.model, data, &self.cfg, self.epoch, self.lr)?;
        self.finish_epoch(&summary);
        Ok(summary)
    }

    pub fn step_autoencoder_epoch(&mut self, data: &BinaryDataset) -> Result<EpochSummary> {
        let summary = train_autoencoder_epoch(&mut self.model, data, &self.cfg, self.epoch, self.lr)?;
        self.finish_epoch(&summary);
        Ok(summary)
    }

    /// The previous epoch is rescored at the current β, so a rising β during
    /// the ramp does not by itself count as a loss increase.
    fn finish_epoch(&mut self, summary: &EpochSummary) {
        if self.cfg.lr_halving {
            if let Some(prev) = &self.last {
                let rescored = prev.recon_nll + summary.beta * prev.prior_nll;
                self.lr = lr_policy(&[rescored, summary.total_loss], self.lr);
            }
        }
        self.last = Some(summary.clone());
        self.epoch += 1;
    }

    /// Runs `cfg.epochs` epochs, reporting each through `on_epoch`.
    pub fn run(mut self, data: &BinaryDataset, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<DgaModel> {
        while self.epoch < self.cfg.epochs {
            let summary = self.step_epoch(data)?;
            on_epoch(&summary);
        }
        if self.cfg.refit_prior {
            refit_prior(&mut self.model, data)?;
        }
        Ok(self.model)
    }
}

/// Trains a fresh single DGA on `data`.
pub fn train_shallow(
    data: &BinaryDataset,
    shape: &ModelShape,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochSummary),
) -> Result<DgaModel> {
    check_len("dataset width", data.width(), shape.input_dim)?;
    Trainer::new(shape, cfg.clone())?.run(data, on_epoch)
}

/// Average clean reconstruction NLL (no noise) over a dataset.
pub fn mean_reconstruction_nll(model: &DgaModel, data: &BinaryDataset) -> Result<f64> {
    let mut total = 0.0;
    for chunk in (0..data.rows()).collect::<Vec<_>>().chunks(1000) {
        let x = data.batch(chunk);
        let codes = model.encode_batch(&x)?;
        let logits = model.decode_logits_batch(&codes)?;
        for r in 0..x.rows() {
            total -= reconstruction_log_prob(x.row(r), logits.row(r));
        }
    }
    Ok(total / data.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer, Mlp};

    fn tiny_model(seed: u64) -> DgaModel {
        DgaModel::new(&ModelShape::new(4, 3), 1.0, 1.0, &mut RngState::new(seed)).unwrap()
    }

    #[test]
    fn noise_rate_zero_is_identity() {
        let h = vec![1, 0, 0, 1, 1];
        assert_eq!(salt_and_pepper(&h, 0.0, &mut RngState::new(1)), h);
    }

    #[test]
    fn full_rate_noise_is_a_fair_coin() {
        let mut rng = RngState::new(2);
        let n = 100_000;
        let mut ones = [0usize; 2];
        for _ in 0..n {
            let out = salt_and_pepper(&[0, 1], 1.0, &mut rng);
            ones[0] += out[0] as usize;
            ones[1] += out[1] as usize;
        }
        for o in ones {
            assert!((o as f64 / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn one_percent_noise_hamming_distance() {
        let mut rng = RngState::new(3);
        let h: Vec<u8> = (0..500).map(|i| (i % 3 == 0) as u8).collect();
        let n = 100_000;
        let mut total = 0usize;
        for _ in 0..n {
            let out = salt_and_pepper(&h, 0.01, &mut rng);
            total += out.iter().zip(&h).filter(|(a, b)| a != b).count();
        }
        assert!((total as f64 / n as f64 - 2.5).abs() < 0.1);
    }

    #[test]
    fn straight_through_passes_input() {
        assert_eq!(straight_through_delta(&[0.5, -1.2]), vec![0.5, -1.2]);
        assert_eq!(straight_through_delta(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn code_gradient_is_decoder_plus_weighted_pull() {
        let prior = FactorizedBernoulli::new(vec![0.5, 0.9, 0.2]).unwrap();
        let d_h = [0.3, -0.4, 1.1];
        let g = grad_wrt_code(&d_h, &[false; 3], &prior, 0.5);
        // Hand computed: d_h + 0.5 * ln((1 - p) / p)
        let expect = [0.3 + 0.0, -0.4 + 0.5 * (0.1f64 / 0.9).ln(), 1.1 + 0.5 * 4f64.ln()];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let masked = grad_wrt_code(&d_h, &[false, true, false], &prior, 0.0);
        assert_eq!(masked, vec![0.3, 0.0, 1.1]);
    }

    #[test]
    fn beta_zero_loss_is_reconstruction() {
        let m = tiny_model(1);
        let (r, _) = dga_loss(&m, &[1, 0, 1, 1], 0.0, 0.0, &mut RngState::new(0)).unwrap();
        assert_eq!(r.total_loss, r.reconstruction_nll);
    }

    #[test]
    fn uniform_prior_costs_ln2_per_bit() {
        let m = tiny_model(2);
        let (r, _) = dga_loss(&m, &[0, 1, 1, 0], 1.0, 0.0, &mut RngState::new(0)).unwrap();
        assert!((r.prior_nll - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.total_loss - (r.reconstruction_nll + r.prior_nll)).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_scalar_evaluation() {
        let mut m = tiny_model(4);
        m.prior.update(&[1, 0, 1]).unwrap();
        m.prior.update(&[1, 1, 0]).unwrap();
        let x = [1u8, 0, 0, 1];
        let beta = 0.3;
        let (r, _) = dga_loss(&m, &x, beta, 0.0, &mut RngState::new(0)).unwrap();

        // Independent scalar evaluation.
        let enc = &m.encoder.layers()[0];
        let h: Vec<f64> = (0..3)
            .map(|j| {
                let a: f64 = enc.bias[j] + (0..4).map(|i| f64::from(x[i]) * enc.weights.get(i, j)).sum::<f64>();
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let dec = &m.decoder.layers()[0];
        let mut recon = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            let z: f64 = dec.bias[j] + (0..3).map(|i| h[i] * dec.weights.get(i, j)).sum::<f64>();
            let mean = (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7);
            recon -= if xj == 1 { mean.ln() } else { (1.0 - mean).ln() };
        }
        let probs: [f64; 3] = [(2.0 + 1.0) / 4.0, (1.0 + 1.0) / 4.0, (1.0 + 1.0) / 4.0];
        let prior_nll: f64 =
            -(0..3).map(|i| if h[i] == 1.0 { probs[i].ln() } else { (1.0 - probs[i]).ln() }).sum::<f64>();
        assert!((r.reconstruction_nll - recon).abs() < 1e-12);
        assert!((r.prior_nll - prior_nll).abs() < 1e-12);
        assert!((r.total_loss - (recon + beta * prior_nll)).abs() < 1e-12);
    }

    #[test]
    fn beta_out_of_range_rejected() {
        let m = tiny_model(1);
        assert!(dga_loss(&m, &[0; 4], 1.5, 0.0, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn lr_policy_examples() {
        assert_eq!(lr_policy(&[10.0, 9.0, 8.0], 1.0), 1.0);
        assert_eq!(lr_policy(&[10.0, 9.0, 9.5], 1.0), 0.5);
        let losses = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut lr = 1.0;
        for k in 1..=losses.len() {
            lr = lr_policy(&losses[..k], lr);
        }
        assert_eq!(lr, 1.0 / 2f64.powi(losses.len() as i32 - 1));
    }

    #[test]
    fn linear_ramp_values() {
        let s = BetaSchedule::linear(0.0, 1.0, 8);
        for k in 0..12 {
            assert_eq!(s.beta_at(k, 20), (k as f64 / 8.0).min(1.0));
        }
        let default = BetaSchedule::default();
        assert_eq!(default.beta_at(5, 10), 1.0);
        assert_eq!(default.beta_at(2, 10), 0.4);
    }

    #[test]
    fn geometric_ramp_is_monotone() {
        let s = BetaSchedule { start: 0.01, end: 1.0, ramp_epochs: Some(4), shape: RampShape::Geometric };
        s.validate().unwrap();
        let vals: Vec<f64> = (0..6).map(|k| s.beta_at(k, 6)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!((vals[2] - 0.1).abs() < 1e-12);
        assert!(BetaSchedule { start: 0.0, ..s }.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig { noise_rate: 0.7, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.noise_rate = 0.01;
        cfg.beta = BetaSchedule::linear(0.5, 0.2, 3);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = tiny_model(1);
        let data = BinaryDataset::from_rows(Vec::new(), 4).unwrap();
        let err = train_epoch(&mut m, &data, &TrainConfig::default(), 0, 1.0).unwrap_err();
        assert!(matches!(err, DgaError::Config(_)));
    }

    #[test]
    fn batched_step_matches_per_example_average() {
        let shape = ModelShape::new(5, 4).with_hidden(vec![3], vec![3]);
        let model = DgaModel::new(&shape, 1.0, 1.0, &mut RngState::new(8)).unwrap();
        let mut rng = RngState::new(99);
        let rows: Vec<Vec<u8>> = (0..7).map(|_| (0..5).map(|_| rng.bernoulli(0.5) as u8).collect()).collect();
        let data = BinaryDataset::from_rows(rows.clone(), 5).unwrap();
        let snapshot = model.prior_snapshot().unwrap();
        let beta = 0.7;

        let mut batched = model.clone();
        let idx: Vec<usize> = (0..7).collect();
        minibatch_step(
            &mut batched,
            &data.batch(&idx),
            Objective::Dga { beta, prior: &snapshot },
            0.0,
            1.0,
            &mut RngState::new(0),
        )
        .unwrap();

        let mut dec_sum = MlpGrads::zeros_like(&model.decoder);
        let mut enc_sum = MlpGrads::zeros_like(&model.encoder);
        for r in &rows {
            let (d, e, _) = example_gradients(&model, r, beta, 0.0, &mut RngState::new(0)).unwrap();
            dec_sum.merge(&d);
            enc_sum.merge(&e);
        }
        let mut manual = model.clone();
        manual.decoder.apply_gradients(&dec_sum, 1.0 / 7.0);
        manual.encoder.apply_gradients(&enc_sum, 1.0 / 7.0);
        for (a, b) in batched
            .encoder
            .layers()
            .iter()
            .zip(manual.encoder.layers())
            .chain(batched.decoder.layers().iter().zip(manual.decoder.layers()))
        {
            for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prior_counts_equal_epoch_code_frequencies() {
        let mut rng = RngState::new(12);
        let rows: Vec<Vec<u8>> = (0..37).map(|_| (0..6).map(|_| rng.bernoulli(0.4) as u8).collect()).collect();
        let data = BinaryDataset::from_rows(rows.clone(), 6).unwrap();
        let mut model = DgaModel::new(&ModelShape::new(6, 4), 1.0, 1.0, &mut RngState::new(1)).unwrap();
        let cfg = TrainConfig { minibatch_size: 10, epochs: 3, learning_rate: 0.1, ..TrainConfig::default() };
        train_epoch(&mut model, &data, &cfg, 0, 0.1).unwrap();
        let before = model.clone();
        train_epoch(&mut model, &data, &cfg, 1, 0.1).unwrap();
        // Replay epoch 1 minibatch by minibatch, collecting the codes each
        // pre-update encoder emitted.
        let mut replay = before;
        let mut rng = epoch_rng(cfg.seed, 1);
        let order = rng.permutation(data.rows());
        let mut expected = PriorCounter::new(4, 1.0).unwrap();
        replay.prior = PriorCounter::new(4, 1.0).unwrap();
        for idx in order.chunks(10) {
            let x = data.batch(idx);
            let codes = replay.encode_batch(&x).unwrap();
            for r in 0..codes.rows() {
                let bits: Vec<u8> = codes.row(r).iter().map(|&v| v as u8).collect();
                expected.update(&bits).unwrap();
            }
            let snap = replay.prior_snapshot().unwrap();
            minibatch_step(
                &mut replay,
                &x,
                Objective::Dga { beta: cfg.beta.beta_at(1, 3), prior: &snap },
                cfg.noise_rate,
                0.1,
                &mut rng,
            )
            .unwrap();
        }
        assert_eq!(model.prior, expected);
        assert_eq!(model, replay);
    }

    #[test]
    fn cumulative_counts_span_epochs() {
        let data = BinaryDataset::from_rows(vec![vec![1, 0, 1]; 23], 3).unwrap();
        let mut model = DgaModel::new(&ModelShape::new(3, 2), 1.0, 1.0, &mut RngState::new(3)).unwrap();
        let cfg = TrainConfig { minibatch_size: 5, prior_reset_each_epoch: false, ..TrainConfig::default() };
        for epoch in 0..3 {
            train_epoch(&mut model, &data, &cfg, epoch, 0.1).unwrap();
            assert_eq!(model.prior.total(), 23.0 * (epoch + 1) as f64);
        }
        let reset = TrainConfig { prior_reset_each_epoch: true, ..cfg };
        train_epoch(&mut model, &data, &reset, 3, 0.1).unwrap();
        assert_eq!(model.prior.total(), 23.0);
    }

    #[test]
    fn fixed_seed_training_is_bit_identical() {
        let mut rng = RngState::new(5);
        let rows: Vec<Vec<u8>> = (0..50).map(|_| (0..8).map(|_| rng.bernoulli(0.3) as u8).collect()).collect();
        let data = BinaryDataset::from_rows(rows, 8).unwrap();
        let cfg = TrainConfig { epochs: 4, minibatch_size: 10, seed: 17, ..TrainConfig::default() };
        let a = train_shallow(&data, &ModelShape::new(8, 5), &cfg, |_| {}).unwrap();
        let b = train_shallow(&data, &ModelShape::new(8, 5), &cfg, |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refit_counts_every_row_once() {
        let data = BinaryDataset::from_rows(vec![vec![1, 0], vec![0, 1], vec![1, 1]], 2).unwrap();
        let enc = Mlp::from_layers(vec![Layer {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        let dec = Mlp::from_layers(vec![Layer {
            weights: Matrix::zeros(2, 2),
            bias: vec![0.0; 2],
            activation: Activation::Sigmoid,
        }])
        .unwrap();
        let mut m = DgaModel::from_parts(enc, dec, PriorCounter::new(2, 0.0).unwrap()).unwrap();
        refit_prior(&mut m, &data).unwrap();
        assert_eq!(m.prior.ones(), &[2.0, 2.0]);
        assert_eq!(m.prior.total(), 3.0);
    }
}
