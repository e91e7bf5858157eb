//! Likelihood evaluation.
//!
//! `P*(x) = P(x | h = f(x)) P(h = f(x))` is computed along the deterministic
//! path: compose the encoders up to the top code, then decode back down with
//! thresholded intermediate codes. It is normalized by an importance-sampled
//! partition function whose proposal is a uniform mixture of factorized
//! Bernoullis centred on decoded prior samples. Small models can instead be
//! checked exhaustively with [`exact_log_z`] and [`exact_log_marginals`].
//!
//! All likelihoods are natural-log; `*_bits` fields are converted for
//! reporting only.

use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_binary, check_len, DgaError, Result};
use crate::network::{bits_to_matrix, reconstruction_log_prob};
use crate::numerics::{gemm, log_sum_exp, sigmoid, Matrix, RngState, Trans};
use crate::prior::{FactorizedBernoulli, DIAGNOSTIC_CLAMP};
use crate::stack::{decode_to_bottom_logits, encode_top_batch, GenerativeStack, IntermediateMode};

/// Proposal centroids are clamped into `[1e-6, 1 - 1e-6]`.
pub const CENTROID_CLAMP: f64 = 1e-6;

/// Largest dimension the exhaustive oracles will enumerate.
pub const MAX_ENUMERATION_DIM: usize = 20;

const CHUNK: usize = 1000;

fn chunks(n: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n).step_by(CHUNK).map(move |s| s..(s + CHUNK).min(n))
}

/// Deterministic dummy stream for threshold-mode decoding, which draws nothing.
fn no_rng() -> RngState {
    RngState::new(0)
}

/// The two terms of `ln P*(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PStarTerms {
    /// `ln P(x | h)` along the decode path.
    pub reconstruction: f64,
    /// `ln P(h)` under the top prior.
    pub prior: f64,
}

impl PStarTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.prior
    }
}

/// `ln P*` terms for every row of a 0/1 matrix.
pub fn log_p_star_terms_batch<M: GenerativeStack + ?Sized>(model: &M, x: &Matrix) -> Result<Vec<PStarTerms>> {
    check_len("input width", x.cols(), model.input_dim())?;
    let prior = model.top_prior()?;
    let mut out = Vec::with_capacity(x.rows());
    for range in chunks(x.rows()) {
        let idx: Vec<usize> = range.collect();
        let mut xb = Matrix::zeros(idx.len(), x.cols());
        for (o, &r) in idx.iter().enumerate() {
            xb.row_mut(o).copy_from_slice(x.row(r));
        }
        let top = encode_top_batch(model, &xb)?;
        let logits = decode_to_bottom_logits(model, &top, IntermediateMode::Threshold, &mut no_rng())?;
        for r in 0..xb.rows() {
            let code: Vec<u8> = top.row(r).iter().map(|&v| v as u8).collect();
            out.push(PStarTerms {
                reconstruction: reconstruction_log_prob(xb.row(r), logits.row(r)),
                prior: prior.log_prob_unchecked(&code),
            });
        }
    }
    Ok(out)
}

pub fn log_p_star_batch<M: GenerativeStack + ?Sized>(model: &M, x: &Matrix) -> Result<Vec<f64>> {
    Ok(log_p_star_terms_batch(model, x)?.iter().map(PStarTerms::total).collect())
}

pub fn log_p_star_terms<M: GenerativeStack + ?Sized>(model: &M, x: &[u8]) -> Result<PStarTerms> {
    check_binary("log_p_star input", x)?;
    let m = bits_to_matrix(&[x], model.input_dim())?;
    Ok(log_p_star_terms_batch(model, &m)?[0])
}

/// `ln P*(x)`.
pub fn log_p_star<M: GenerativeStack + ?Sized>(model: &M, x: &[u8]) -> Result<f64> {
    Ok(log_p_star_terms(model, x)?.total())
}

/// Uniform mixture of factorized Bernoullis.
#[derive(Clone, Debug)]
pub struct ProposalMixture {
    centroids: Matrix,
    /// `ln μ - ln(1 - μ)` per centroid.
    log_odds: Matrix,
    /// `Σ_i ln(1 - μ_i)` per centroid.
    log_base: Vec<f64>,
}

impl ProposalMixture {
    /// Centroids are clamped into `[1e-6, 1 - 1e-6]`.
    pub fn from_centroids(centroids: Matrix) -> Result<Self> {
        if centroids.rows() == 0 {
            return Err(DgaError::Config("a proposal needs at least one centroid".into()));
        }
        let centroids = centroids.map(|m| m.clamp(CENTROID_CLAMP, 1.0 - CENTROID_CLAMP));
        let log_odds = centroids.map(|m| m.ln() - (-m).ln_1p());
        let log_base = (0..centroids.rows()).map(|j| centroids.row(j).iter().map(|m| (-m).ln_1p()).sum()).collect();
        Ok(Self { centroids, log_odds, log_base })
    }

    pub fn len(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn component(&self, j: usize) -> Result<FactorizedBernoulli> {
        FactorizedBernoulli::new(self.centroids.row(j).to_vec())
    }

    /// `ln π(x)` for every row of a 0/1 matrix.
    pub fn log_density_batch(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_len("proposal input width", x.cols(), self.dim())?;
        let ln_n = (self.len() as f64).ln();
        let mut out = Vec::with_capacity(x.rows());
        let mut scores = Matrix::zeros(x.rows(), self.len());
        gemm(1.0, x, Trans::No, &self.log_odds, Trans::Yes, 0.0, &mut scores)?;
        scores.add_row_broadcast(&self.log_base);
        for r in 0..x.rows() {
            out.push(log_sum_exp(scores.row(r))? - ln_n);
        }
        Ok(out)
    }

    pub fn log_density(&self, x: &[u8]) -> Result<f64> {
        check_binary("proposal input", x)?;
        Ok(self.log_density_batch(&bits_to_matrix(&[x], self.dim())?)?[0])
    }

    /// Picks a centroid uniformly and draws its bits.
    pub fn sample(&self, rng: &mut RngState) -> Vec<u8> {
        let j = rng.below(self.len());
        self.centroids.row(j).iter().map(|&m| u8::from(rng.uniform() < m)).collect()
    }
}

/// Decodes `n` top-prior draws to bottom means and uses them as centroids.
pub fn build_proposal<M: GenerativeStack + ?Sized>(model: &M, n: usize, rng: &mut RngState) -> Result<ProposalMixture> {
    if n == 0 {
        return Err(DgaError::Config("need at least one centroid".into()));
    }
    let prior = model.top_prior()?;
    let codes: Vec<Vec<u8>> = (0..n).map(|_| prior.sample(rng)).collect();
    let refs: Vec<&[u8]> = codes.iter().map(Vec::as_slice).collect();
    let top = bits_to_matrix(&refs, model.top_code_dim())?;
    let logits = decode_to_bottom_logits(model, &top, IntermediateMode::Threshold, &mut no_rng())?;
    ProposalMixture::from_centroids(logits.map(sigmoid))
}

/// Importance-sampling estimate of `ln Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogZEstimate {
    pub log_z: f64,
    /// Delta-method standard error of `log_z` (nats).
    pub std_err: f64,
    pub samples: usize,
}

/// Draws `samples` points from the proposal and averages `P*(x) / π(x)` in
/// log space.
pub fn estimate_log_z<M: GenerativeStack + ?Sized>(
    model: &M,
    proposal: &ProposalMixture,
    samples: usize,
    rng: &mut RngState,
) -> Result<LogZEstimate> {
    if samples < 2 {
        return Err(DgaError::Config(format!("need at least 2 importance samples, got {samples}")));
    }
    check_len("proposal dimension", proposal.dim(), model.input_dim())?;
    let mut log_w = Vec::with_capacity(samples);
    for range in chunks(samples) {
        let draws: Vec<Vec<u8>> = range.map(|_| proposal.sample(rng)).collect();
        let refs: Vec<&[u8]> = draws.iter().map(Vec::as_slice).collect();
        let x = bits_to_matrix(&refs, proposal.dim())?;
        let lp = log_p_star_batch(model, &x)?;
        let lq = proposal.log_density_batch(&x)?;
        log_w.extend(lp.iter().zip(&lq).map(|(p, q)| p - q));
    }
    let log_z = log_sum_exp(&log_w)? - (samples as f64).ln();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let n = samples as f64;
    let mean = scaled.iter().sum::<f64>() / n;
    let var = scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std_err = (var / n).sqrt() / mean;
    Ok(LogZEstimate { log_z, std_err, samples })
}

/// Seeds that produced an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSeeds {
    pub proposal: u64,
    pub importance: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub mean_log_p_star_nats: f64,
    pub mean_log_p_star_bits: f64,
    pub mean_reconstruction_nats: f64,
    pub mean_prior_nats: f64,
    pub log_z: f64,
    pub log_z_std_err: f64,
    pub mean_log_likelihood_nats: f64,
    pub mean_log_likelihood_bits: f64,
    pub n_centroids: usize,
    pub n_is_samples: usize,
    pub seeds: EvalSeeds,
    #[serde(default)]
    pub dataset_hash: String,
}

/// Mean `ln P*`, `ln Z` and their difference over a dataset. The proposal
/// and the importance draws use independent children of `seed`.
pub fn evaluate<M: GenerativeStack + ?Sized>(
    model: &M,
    data: &BinaryDataset,
    n_centroids: usize,
    n_is_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(DgaError::Config("cannot evaluate on an empty dataset".into()));
    }
    let root = RngState::new(seed);
    let (mut prop_rng, mut is_rng) = (root.split(0), root.split(1));
    let seeds = EvalSeeds { proposal: prop_rng.seed(), importance: is_rng.seed() };
    let mut recon = 0.0;
    let mut prior = 0.0;
    for range in chunks(data.rows()) {
        let idx: Vec<usize> = range.collect();
        for t in log_p_star_terms_batch(model, &data.batch(&idx))? {
            recon += t.reconstruction;
            prior += t.prior;
        }
    }
    let n = data.rows() as f64;
    let (recon, prior) = (recon / n, prior / n);
    let mean_star = recon + prior;
    let proposal = build_proposal(model, n_centroids, &mut prop_rng)?;
    let z = estimate_log_z(model, &proposal, n_is_samples, &mut is_rng)?;
    let normalized = mean_star - z.log_z;
    Ok(EvalReport {
        examples: data.rows(),
        mean_log_p_star_nats: mean_star,
        mean_log_p_star_bits: mean_star / std::f64::consts::LN_2,
        mean_reconstruction_nats: recon,
        mean_prior_nats: prior,
        log_z: z.log_z,
        log_z_std_err: z.std_err,
        mean_log_likelihood_nats: normalized,
        mean_log_likelihood_bits: normalized / std::f64::consts::LN_2,
        n_centroids,
        n_is_samples,
        seeds,
        dataset_hash: data.provenance().content_hash.clone(),
    })
}

fn enumerate_bits(dim: usize, range: std::ops::Range<usize>) -> Matrix {
    let mut m = Matrix::zeros(range.len(), dim);
    for (r, code) in range.enumerate() {
        for (i, v) in m.row_mut(r).iter_mut().enumerate() {
            *v = ((code >> i) & 1) as f64;
        }
    }
    m
}

fn guard_dim(what: &str, dim: usize) -> Result<()> {
    if dim > MAX_ENUMERATION_DIM {
        return Err(DgaError::Config(format!(
            "{what} dimension {dim} exceeds the enumeration limit {MAX_ENUMERATION_DIM}"
        )));
    }
    Ok(())
}

/// `ln Σ_h P(x | h) P(h)` for each input, summing over every top code.
pub fn exact_log_marginals<M: GenerativeStack + ?Sized>(model: &M, xs: &Matrix) -> Result<Vec<f64>> {
    let dh = model.top_code_dim();
    guard_dim("code", dh)?;
    check_len("input width", xs.cols(), model.input_dim())?;
    let prior = model.top_prior()?;
    let n_codes = 1usize << dh;
    let mut per_code: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n_codes);
    for range in chunks(n_codes) {
        let codes = enumerate_bits(dh, range);
        let logits = decode_to_bottom_logits(model, &codes, IntermediateMode::Threshold, &mut no_rng())?;
        for r in 0..codes.rows() {
            let h: Vec<u8> = codes.row(r).iter().map(|&v| v as u8).collect();
            per_code.push((prior.log_prob_unchecked(&h), logits.row(r).to_vec()));
        }
    }
    let mut terms = vec![0.0; n_codes];
    (0..xs.rows())
        .map(|r| {
            for (t, (lp, logits)) in terms.iter_mut().zip(&per_code) {
                *t = lp + reconstruction_log_prob(xs.row(r), logits);
            }
            log_sum_exp(&terms)
        })
        .collect()
}

/// `ln Σ_x P*(x)` over every input vector.
pub fn exact_log_z<M: GenerativeStack + ?Sized>(model: &M) -> Result<f64> {
    let dx = model.input_dim();
    guard_dim("input", dx)?;
    let mut all = Vec::with_capacity(1 << dx);
    for range in chunks(1 << dx) {
        all.extend(log_p_star_batch(model, &enumerate_bits(dx, range))?);
    }
    log_sum_exp(&all)
}

/// Every vector of `{0,1}^dim` as rows, in counting order.
pub fn all_binary_vectors(dim: usize) -> Result<Matrix> {
    guard_dim("vector", dim)?;
    Ok(enumerate_bits(dim, 0..1 << dim))
}

/// Factorized-model entropy, sparsity and decorrelation of a binary table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMetrics {
    /// Entropy in bits of the unsmoothed (clamped) factorized fit.
    pub entropy_bits: f64,
    /// Mean number of ones per row after flipping majority-one dimensions.
    pub avg_active_bits: f64,
    /// Frobenius norm of the correlation matrix with its diagonal removed.
    pub offdiag_corr_fro: f64,
}

/// Metrics for one dataset. Zero-variance dimensions contribute zero
/// correlation.
pub fn table1_metrics(codes: &BinaryDataset) -> Result<RepresentationMetrics> {
    if codes.is_empty() {
        return Err(DgaError::Config("metrics need a non-empty dataset".into()));
    }
    let d = codes.width();
    let n = codes.rows() as f64;
    // Co-occurrence counts; sums of 0/1 products are exact in f64.
    let mut co = Matrix::zeros(d, d);
    for range in chunks(codes.rows()) {
        let idx: Vec<usize> = range.collect();
        let x = codes.batch(&idx);
        gemm(1.0, &x, Trans::Yes, &x, Trans::No, 1.0, &mut co)?;
    }
    let p: Vec<f64> = (0..d).map(|i| co.get(i, i) / n).collect();
    let entropy_bits = FactorizedBernoulli::clamped(&p, DIAGNOSTIC_CLAMP)?.entropy_bits();
    let avg_active_bits = p.iter().map(|&pi| pi.min(1.0 - pi)).sum();
    let sd: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).sqrt()).collect();
    let mut sq = 0.0;
    for i in 0..d {
        if sd[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            if i == j || sd[j] == 0.0 {
                continue;
            }
            let cov = co.get(i, j) / n - p[i] * p[j];
            let c = cov / (sd[i] * sd[j]);
            sq += c * c;
        }
    }
    Ok(RepresentationMetrics { entropy_bits, avg_active_bits, offdiag_corr_fro: sq.sqrt() })
}
