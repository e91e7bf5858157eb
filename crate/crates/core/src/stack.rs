//! Deep DGAs: stages trained greedily on the previous stage's codes,
//! composed encoding and ancestral sampling through the decoder chain.

use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_binary, check_len, DgaError, Result};
use crate::network::{bits_to_matrix, threshold_codes, DgaModel, ModelShape, MEAN_CLAMP};
use crate::numerics::{derive_seed, sigmoid, Matrix, RngState};
use crate::prior::FactorizedBernoulli;
use crate::training::{train_shallow, BetaSchedule, EpochSummary, TrainConfig};

/// How a code is produced from decoder means between two stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntermediateMode {
    /// `1` where the mean exceeds 0.5.
    #[default]
    Threshold,
    /// Independent Bernoulli draws.
    Sample,
}

impl std::str::FromStr for IntermediateMode {
    type Err = DgaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "sample" => Ok(Self::Sample),
            other => Err(DgaError::Config(format!("unknown intermediate mode {other:?}"))),
        }
    }
}

/// Anything that behaves as a bottom-first chain of DGA stages. A single
/// [`DgaModel`] is a chain of length one.
pub trait GenerativeStack {
    fn stages(&self) -> &[DgaModel];

    fn input_dim(&self) -> usize {
        self.stages()[0].input_dim()
    }

    fn top_code_dim(&self) -> usize {
        self.stages().last().expect("non-empty").code_dim()
    }

    /// The only prior used generatively.
    fn top_prior(&self) -> Result<FactorizedBernoulli> {
        self.stages().last().expect("non-empty").prior_snapshot()
    }
}

impl GenerativeStack for DgaModel {
    fn stages(&self) -> &[DgaModel] {
        std::slice::from_ref(self)
    }
}

impl GenerativeStack for DeepDga {
    fn stages(&self) -> &[DgaModel] {
        &self.stages
    }
}

/// Top codes `f_L(... f_1(x))` for a batch of inputs.
pub fn encode_top_batch<M: GenerativeStack + ?Sized>(model: &M, x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for stage in model.stages() {
        h = stage.encode_batch(&h)?;
    }
    Ok(h)
}

/// Decodes top codes down to the bottom decoder's logits, producing each
/// intermediate code from the stage above by `mode`.
pub fn decode_to_bottom_logits<M: GenerativeStack + ?Sized>(
    model: &M,
    top: &Matrix,
    mode: IntermediateMode,
    rng: &mut RngState,
) -> Result<Matrix> {
    let stages = model.stages();
    check_len("top code width", top.cols(), model.top_code_dim())?;
    let mut h = top.clone();
    for stage in stages[1..].iter().rev() {
        let logits = stage.decode_logits_batch(&h)?;
        h = match mode {
            IntermediateMode::Threshold => threshold_codes(&logits),
            IntermediateMode::Sample => {
                let mut drawn = logits;
                for v in drawn.as_mut_slice() {
                    *v = if rng.uniform() < sigmoid(*v) { 1.0 } else { 0.0 };
                }
                drawn
            }
        };
    }
    stages[0].decode_logits_batch(&h)
}

/// Bottom-first chain of DGA stages.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepDga {
    stages: Vec<DgaModel>,
}

impl From<DgaModel> for DeepDga {
    fn from(model: DgaModel) -> Self {
        Self { stages: vec![model] }
    }
}

impl DeepDga {
    pub fn new(stages: Vec<DgaModel>) -> Result<Self> {
        if stages.is_empty() {
            return Err(DgaError::Config("a deep DGA needs at least one stage".into()));
        }
        for (k, pair) in stages.windows(2).enumerate() {
            if pair[1].input_dim() != pair[0].code_dim() {
                return Err(DgaError::Config(format!(
                    "stage {} takes {} inputs but stage {k} emits {}-bit codes",
                    k + 1,
                    pair[1].input_dim(),
                    pair[0].code_dim()
                )));
            }
        }
        Ok(Self { stages })
    }

    pub fn into_stages(self) -> Vec<DgaModel> {
        self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}

/// Composed encoder for one input vector.
pub fn compose_encode<M: GenerativeStack + ?Sized>(model: &M, x: &[u8]) -> Result<Vec<u8>> {
    check_binary("compose_encode input", x)?;
    let input = bits_to_matrix(&[x], model.input_dim())?;
    Ok(encode_top_batch(model, &input)?.row(0).iter().map(|&v| v as u8).collect())
}

/// The composed codes of every row at every level: element `k` is the
/// dataset seen by stage `k` (element 0 is `data` itself).
pub fn level_datasets<M: GenerativeStack + ?Sized>(model: &M, data: &BinaryDataset) -> Result<Vec<BinaryDataset>> {
    let mut levels = vec![data.clone()];
    for stage in model.stages() {
        let prev = levels.last().expect("non-empty");
        levels.push(prev.map_batches(stage.code_dim(), |x| stage.encode_batch(x))?);
    }
    Ok(levels)
}

/// Per-stage training targets for greedy pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTarget {
    pub beta_target: f64,
    #[serde(default)]
    pub ramp_epochs: Option<usize>,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<StageTarget>,
}

impl StageSchedule {
    /// Lower stages at `lower_beta`, top stage at 1.
    pub fn uniform(count: usize, lower_beta: f64, epochs: usize) -> Self {
        let stages = (0..count)
            .map(|k| StageTarget {
                beta_target: if k + 1 == count { 1.0 } else { lower_beta },
                ramp_epochs: None,
                epochs,
            })
            .collect();
        Self { stages }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.stages.last().ok_or_else(|| DgaError::Config("empty stage schedule".into()))?;
        if last.beta_target != 1.0 {
            return Err(DgaError::Config(format!("final stage β target is {}, must be 1", last.beta_target)));
        }
        if let Some(bad) = self.stages.iter().find(|s| !(0.0..=1.0).contains(&s.beta_target)) {
            return Err(DgaError::Config(format!("β target {} outside [0, 1]", bad.beta_target)));
        }
        if let Some(k) = self.stages.windows(2).position(|w| w[1].beta_target < w[0].beta_target) {
            return Err(DgaError::Config(format!(
                "β targets must not decrease upward (stage {} > stage {})",
                k,
                k + 1
            )));
        }
        Ok(())
    }

    /// Training config for stage `k`: β ramps from `base.beta.start` to the
    /// stage target, stage 0 keeps the base seed and later stages derive
    /// theirs from it.
    pub fn stage_config(&self, base: &TrainConfig, k: usize) -> TrainConfig {
        let target = &self.stages[k];
        let mut cfg = base.clone();
        cfg.epochs = target.epochs;
        cfg.beta = BetaSchedule {
            start: base.beta.start.min(target.beta_target),
            end: target.beta_target,
            ramp_epochs: target.ramp_epochs.or(base.beta.ramp_epochs),
            shape: base.beta.shape,
        };
        cfg.seed = stage_seed(base.seed, k);
        cfg
    }
}

pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    if stage == 0 {
        seed
    } else {
        derive_seed(seed, 1000 + stage as u64)
    }
}

pub fn check_chain(input_width: usize, shapes: &[ModelShape]) -> Result<()> {
    let first = shapes.first().ok_or_else(|| DgaError::Config("no stage shapes".into()))?;
    if first.input_dim != input_width {
        return Err(DgaError::Config(format!(
            "stage 0 expects {} inputs, data is {input_width} wide",
            first.input_dim
        )));
    }
    for (k, pair) in shapes.windows(2).enumerate() {
        if pair[1].input_dim != pair[0].code_dim {
            return Err(DgaError::Config(format!(
                "stage {} expects {} inputs but stage {k} has code dim {}",
                k + 1,
                pair[1].input_dim,
                pair[0].code_dim
            )));
        }
    }
    Ok(())
}

/// Result of greedy pretraining: the stack plus the dataset each stage was
/// trained on.
pub struct Pretrained {
    pub model: DeepDga,
    pub stage_data: Vec<BinaryDataset>,
}

/// Trains stage 0 on `data`, then each further stage on the codes of the
/// frozen stages below it.
pub fn greedy_pretrain(
    data: &BinaryDataset,
    shapes: &[ModelShape],
    sched: &StageSchedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<Pretrained> {
    check_chain(data.width(), shapes)?;
    sched.validate()?;
    if sched.stages.len() != shapes.len() {
        return Err(DgaError::Config(format!(
            "{} stage shapes but {} schedule entries",
            shapes.len(),
            sched.stages.len()
        )));
    }
    let mut stages: Vec<DgaModel> = Vec::with_capacity(shapes.len());
    let mut stage_data = vec![data.clone()];
    for (k, shape) in shapes.iter().enumerate() {
        if k > 0 {
            let below = &stages[k - 1];
            let codes = stage_data[k - 1].map_batches(below.code_dim(), |x| below.encode_batch(x))?;
            stage_data.push(codes.with_provenance(&format!("codes of stage {}", k - 1), "encoder", ""));
        }
        let stage_cfg = sched.stage_config(cfg, k);
        let model = train_shallow(&stage_data[k], shape, &stage_cfg, |s| {
            let mut s = s.clone();
            s.stage = Some(k);
            on_epoch(&s);
        })?;
        stages.push(model);
    }
    Ok(Pretrained { model: DeepDga::new(stages)?, stage_data })
}

/// Samples drawn by ancestral sampling.
pub struct AncestralSamples {
    /// Bernoulli draws from the bottom decoder.
    pub bits: Vec<Vec<u8>>,
    /// Bottom decoder means, clamped into `(0, 1)`.
    pub means: Vec<Vec<f64>>,
}

/// `h_L ~ P(h_L)`, then down through the decoders.
pub fn ancestral_sample<M: GenerativeStack + ?Sized>(
    model: &M,
    n: usize,
    rng: &mut RngState,
    mode: IntermediateMode,
) -> Result<AncestralSamples> {
    let prior = model.top_prior()?;
    let tops: Vec<Vec<u8>> = (0..n).map(|_| prior.sample(rng)).collect();
    let top_refs: Vec<&[u8]> = tops.iter().map(Vec::as_slice).collect();
    let top = bits_to_matrix(&top_refs, model.top_code_dim())?;
    let logits = decode_to_bottom_logits(model, &top, mode, rng)?;
    let mut bits = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for r in 0..n {
        let m: Vec<f64> = logits.row(r).iter().map(|&z| sigmoid(z).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP)).collect();
        bits.push(m.iter().map(|&p| u8::from(rng.uniform() < p)).collect());
        means.push(m);
    }
    Ok(AncestralSamples { bits, means })
}
