//! Factorized Bernoulli distributions: the code prior `P(h)` and the
//! per-pixel output family of the decoder.

use serde::{Deserialize, Serialize};

use crate::error::{check_binary, check_len, DgaError, Result};
use crate::numerics::RngState;

/// Probabilities are clamped into `[DIAGNOSTIC_CLAMP, 1 - DIAGNOSTIC_CLAMP]`
/// when a counter is read without smoothing.
pub const DIAGNOSTIC_CLAMP: f64 = 1e-6;

/// Product of independent Bernoulli variables, `P(h_i = 1) = probs[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedBernoulli {
    probs: Vec<f64>,
    log_p: Vec<f64>,
    log_q: Vec<f64>,
}

impl FactorizedBernoulli {
    /// Every probability must lie strictly inside `(0, 1)`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
            return Err(DgaError::Domain(format!("probability {p} at index {i} is outside (0, 1)")));
        }
        let log_p = probs.iter().map(|p| p.ln()).collect();
        let log_q = probs.iter().map(|p| (-p).ln_1p()).collect();
        Ok(Self { probs, log_p, log_q })
    }

    /// Clamps each probability into `[eps, 1 - eps]` first.
    pub fn clamped(probs: &[f64], eps: f64) -> Result<Self> {
        Self::new(probs.iter().map(|p| p.clamp(eps, 1.0 - eps)).collect())
    }

    pub fn uniform(dim: usize) -> Self {
        Self::new(vec![0.5; dim]).expect("0.5 is a valid probability")
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `Σ_i h_i ln p_i + (1 - h_i) ln(1 - p_i)`.
    pub fn log_prob(&self, h: &[u8]) -> Result<f64> {
        check_len("log_prob", h.len(), self.dim())?;
        check_binary("log_prob", h)?;
        Ok(self.log_prob_unchecked(h))
    }

    pub(crate) fn log_prob_unchecked(&self, h: &[u8]) -> f64 {
        h.iter().zip(self.log_p.iter().zip(&self.log_q)).map(|(&b, (lp, lq))| if b == 1 { *lp } else { *lq }).sum()
    }

    /// Cross-entropy `-Σ_i f_i ln p_i + (1 - f_i) ln(1 - p_i)` for a
    /// real-valued `f`; equals `-log_prob` when `f` is binary.
    pub fn relaxed_cross_entropy(&self, f: &[f64]) -> Result<f64> {
        check_len("relaxed_cross_entropy", f.len(), self.dim())?;
        Ok(-f
            .iter()
            .zip(self.log_p.iter().zip(&self.log_q))
            .map(|(fi, (lp, lq))| fi * lp + (1.0 - fi) * lq)
            .sum::<f64>())
    }

    /// Gradient of [`Self::relaxed_cross_entropy`] with respect to `f`:
    /// `ln((1 - p_i) / p_i)` per component. The loss is linear in `f`, so the
    /// result does not depend on `f` beyond its length.
    pub fn relaxed_cross_entropy_grad(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len("relaxed_cross_entropy_grad", f.len(), self.dim())?;
        Ok(self.logit_pull())
    }

    /// `ln(1 - p_i) - ln p_i` for every dimension.
    pub fn logit_pull(&self) -> Vec<f64> {
        self.log_q.iter().zip(&self.log_p).map(|(lq, lp)| lq - lp).collect()
    }

    pub fn sample(&self, rng: &mut RngState) -> Vec<u8> {
        self.probs.iter().map(|&p| u8::from(rng.bernoulli(p))).collect()
    }

    /// Most probable vector (`p_i > 0.5`).
    pub fn mode(&self) -> Vec<u8> {
        self.probs.iter().map(|&p| u8::from(p > 0.5)).collect()
    }

    /// Entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.probs
            .iter()
            .zip(self.log_p.iter().zip(&self.log_q))
            .map(|(p, (lp, lq))| -(p * lp + (1.0 - p) * lq))
            .sum::<f64>()
            / std::f64::consts::LN_2
    }
}

/// Running counts of observed ones, read out as a smoothed
/// [`FactorizedBernoulli`].
///
/// With `decay < 1` every update first scales the existing counts, so old
/// codes are gradually forgotten while the encoder moves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorCounter {
    dim: usize,
    ones: Vec<f64>,
    total: f64,
    alpha: f64,
    decay: f64,
}

impl PriorCounter {
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        Self::with_decay(dim, alpha, 1.0)
    }

    pub fn with_decay(dim: usize, alpha: f64, decay: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(DgaError::Config(format!("smoothing alpha {alpha} must be finite and >= 0")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(DgaError::Config(format!("count decay {decay} must lie in (0, 1]")));
        }
        Ok(Self { dim, ones: vec![0.0; dim], total: 0.0, alpha, decay })
    }

    /// Rebuilds a counter from stored counts.
    pub fn from_counts(ones: Vec<f64>, total: f64, alpha: f64, decay: f64) -> Result<Self> {
        let mut c = Self::with_decay(ones.len(), alpha, decay)?;
        if !(total >= 0.0 && total.is_finite()) || ones.iter().any(|&o| !(o >= 0.0 && o <= total)) {
            return Err(DgaError::Domain("prior counts must satisfy 0 <= ones[i] <= total".into()));
        }
        c.ones = ones;
        c.total = total;
        Ok(c)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ones(&self) -> &[f64] {
        &self.ones
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, h: &[u8]) -> Result<()> {
        check_len("prior update", h.len(), self.dim)?;
        check_binary("prior update", h)?;
        if self.decay != 1.0 {
            self.ones.iter_mut().for_each(|o| *o *= self.decay);
            self.total *= self.decay;
        }
        for (o, &b) in self.ones.iter_mut().zip(h) {
            *o += f64::from(b);
        }
        self.total += 1.0;
        Ok(())
    }

    /// Adds another counter's counts. Both must share dimension and settings.
    pub fn merge(&mut self, other: &PriorCounter) -> Result<()> {
        check_len("prior merge", other.dim, self.dim)?;
        if other.alpha != self.alpha || other.decay != self.decay {
            return Err(DgaError::Config("cannot merge counters with different smoothing or decay".into()));
        }
        for (a, b) in self.ones.iter_mut().zip(&other.ones) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Current estimate `(ones_i + α) / (total + 2α)`. Without smoothing the
    /// frequencies are clamped to `[1e-6, 1 - 1e-6]`, and reading an empty
    /// counter is a state error.
    pub fn snapshot(&self) -> Result<FactorizedBernoulli> {
        if self.alpha > 0.0 {
            let denom = self.total + 2.0 * self.alpha;
            FactorizedBernoulli::new(self.ones.iter().map(|o| (o + self.alpha) / denom).collect())
        } else if self.total > 0.0 {
            let freqs: Vec<f64> = self.ones.iter().map(|o| o / self.total).collect();
            FactorizedBernoulli::clamped(&freqs, DIAGNOSTIC_CLAMP)
        } else {
            Err(DgaError::State("prior has no observations and no smoothing".into()))
        }
    }
}
