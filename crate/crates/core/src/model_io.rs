//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"DGAMODEL"  u32 version  u64 meta_len  meta (JSON)
//! per block:   u64 count    count x f64    32-byte SHA-256 of the f64 bytes
//! ```
//!
//! The metadata lists the stages, their layer shapes and activations, the
//! prior hyperparameters and the block order. Parameters are stored as raw
//! `f64` so a load/save round trip is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DgaError, Result};
use crate::network::{Activation, DgaModel, Layer, Mlp};
use crate::numerics::Matrix;
use crate::prior::PriorCounter;
use crate::stack::DeepDga;

pub const MAGIC: &[u8; 8] = b"DGAMODEL";
pub const FORMAT_VERSION: u32 = 1;

/// Provenance stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub dataset_hash: Option<String>,
    /// Free-form training description, usually the run configuration.
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerMeta {
    input: usize,
    output: usize,
    activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StageMeta {
    encoder: Vec<LayerMeta>,
    decoder: Vec<LayerMeta>,
    prior_alpha: f64,
    prior_decay: f64,
    prior_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    stages: Vec<StageMeta>,
    blocks: Vec<String>,
    info: ModelInfo,
}

fn layer_meta(mlp: &Mlp) -> Vec<LayerMeta> {
    mlp.layers()
        .iter()
        .map(|l| LayerMeta { input: l.in_dim(), output: l.out_dim(), activation: l.activation })
        .collect()
}

/// Serializes a stack of stages to bytes.
pub fn encode_model(stages: &[DgaModel], info: &ModelInfo) -> Result<Vec<u8>> {
    let mut blocks: Vec<(String, &[f64])> = Vec::new();
    let mut metas = Vec::with_capacity(stages.len());
    for (k, s) in stages.iter().enumerate() {
        for (part, mlp) in [("encoder", &s.encoder), ("decoder", &s.decoder)] {
            for (i, l) in mlp.layers().iter().enumerate() {
                blocks.push((format!("stage{k}.{part}.{i}.weights"), l.weights.as_slice()));
                blocks.push((format!("stage{k}.{part}.{i}.bias"), &l.bias));
            }
        }
        blocks.push((format!("stage{k}.prior.ones"), s.prior.ones()));
        metas.push(StageMeta {
            encoder: layer_meta(&s.encoder),
            decoder: layer_meta(&s.decoder),
            prior_alpha: s.prior.alpha(),
            prior_decay: s.prior.decay(),
            prior_total: s.prior.total(),
        });
    }
    let meta = Meta { stages: metas, blocks: blocks.iter().map(|(n, _)| n.clone()).collect(), info: info.clone() };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in blocks {
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        let start = out.len();
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out[start..]);
        out.extend_from_slice(&digest);
    }
    Ok(out)
}

/// Writes to a sibling temporary file first so a failed save never leaves a
/// truncated model behind.
pub fn save_model(path: &Path, stages: &[DgaModel], info: &ModelInfo) -> Result<()> {
    let bytes = encode_model(stages, info)?;
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, &bytes).map_err(|e| DgaError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DgaError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(DeepDga, ModelInfo)> {
    let bytes = fs::read(path).map_err(|e| DgaError::io(path, e))?;
    decode_model(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(DgaError::format(
                self.origin,
                format!(
                    "truncated at byte {} while reading {what}: need {n}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_model(bytes: &[u8], origin: &Path) -> Result<(DeepDga, ModelInfo)> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(8, "magic")? != MAGIC {
        return Err(DgaError::format(origin, "not a DGA model file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(DgaError::format(
            origin,
            format!("unsupported model format version {version} (expected {FORMAT_VERSION})"),
        ));
    }
    let meta_len = r.u64("metadata length")?;
    let meta_len = usize::try_from(meta_len).map_err(|_| DgaError::format(origin, "metadata length overflows"))?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| DgaError::format(origin, format!("bad metadata: {e}")))?;

    let mut blocks = Vec::with_capacity(meta.blocks.len());
    for name in &meta.blocks {
        let count = r.u64(name)?;
        let len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| DgaError::format(origin, format!("block {name} is implausibly large")))?;
        let raw = r.take(len, name)?;
        let stored = r.take(32, name)?;
        if Sha256::digest(raw).as_slice() != stored {
            return Err(DgaError::format(origin, format!("checksum mismatch in block {name}")));
        }
        let values: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blocks.push(values);
    }
    if r.pos != bytes.len() {
        return Err(DgaError::format(origin, format!("{} trailing bytes after the last block", bytes.len() - r.pos)));
    }

    let mut blocks = blocks.into_iter();
    let mut next = |what: &str, expected: usize| -> Result<Vec<f64>> {
        let v = blocks.next().ok_or_else(|| DgaError::format(origin, format!("missing block for {what}")))?;
        if v.len() != expected {
            return Err(DgaError::format(origin, format!("{what}: expected {expected} values, found {}", v.len())));
        }
        Ok(v)
    };
    let mut stages = Vec::with_capacity(meta.stages.len());
    for (k, sm) in meta.stages.iter().enumerate() {
        let mut mlps = Vec::with_capacity(2);
        for (part, layers) in [("encoder", &sm.encoder), ("decoder", &sm.decoder)] {
            let mut built = Vec::with_capacity(layers.len());
            for (i, lm) in layers.iter().enumerate() {
                let w = next(&format!("stage{k}.{part}.{i}.weights"), lm.input * lm.output)?;
                let b = next(&format!("stage{k}.{part}.{i}.bias"), lm.output)?;
                let weights =
                    Matrix::from_vec(lm.input, lm.output, w).map_err(|e| DgaError::format(origin, e.to_string()))?;
                built.push(Layer { weights, bias: b, activation: lm.activation });
            }
            mlps.push(Mlp::from_layers(built).map_err(|e| DgaError::format(origin, e.to_string()))?);
        }
        let code_dim = mlps[0].out_dim();
        let ones = next(&format!("stage{k}.prior.ones"), code_dim)?;
        let prior = PriorCounter::from_counts(ones, sm.prior_total, sm.prior_alpha, sm.prior_decay)
            .map_err(|e| DgaError::format(origin, e.to_string()))?;
        let dec = mlps.pop().expect("decoder");
        let enc = mlps.pop().expect("encoder");
        stages.push(DgaModel::from_parts(enc, dec, prior).map_err(|e| DgaError::format(origin, e.to_string()))?);
    }
    let model = DeepDga::new(stages).map_err(|e| DgaError::format(origin, e.to_string()))?;
    Ok((model, meta.info))
}
