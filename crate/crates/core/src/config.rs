//! JSON run configuration shared by the CLI and the examples.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{hex, load_any, synth_manifold, Binarization, BinaryDataset};
use crate::error::{DgaError, Result};
use crate::network::ModelShape;
use crate::numerics::RngState;
use crate::stack::{check_chain, IntermediateMode, StageSchedule, StageTarget};
use crate::training::TrainConfig;

/// Where rows come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// An IDX image file or an `.amat` table.
    File {
        path: PathBuf,
        #[serde(default)]
        binarization: Binarization,
    },
    /// Rows drawn from a seeded low-dimensional generator.
    Synth { rows: usize, width: usize, latent_bits: usize, seed: u64 },
}

/// A data source restricted to the rows `skip..skip + take`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default)]
    pub skip: usize,
    #[serde(default)]
    pub take: Option<usize>,
    #[serde(default)]
    pub split: String,
}

impl DataSpec {
    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            source: DataSource::File { path: path.into(), binarization: Binarization::Threshold },
            skip: 0,
            take: None,
            split: String::new(),
        }
    }

    /// Loads, slices and labels the rows. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<BinaryDataset> {
        let (full, source, rule) = match &self.source {
            DataSource::File { path, binarization } => {
                let p = if path.is_absolute() { path.clone() } else { base.join(path) };
                let ds = load_any(&p, *binarization)?;
                let rule = ds.provenance().binarization.clone();
                (ds, p.display().to_string(), if rule.is_empty() { "native".to_string() } else { rule })
            }
            DataSource::Synth { rows, width, latent_bits, seed } => {
                let ds = synth_manifold(*rows, *width, *latent_bits, &mut RngState::new(*seed))?;
                let src = format!("{} seed={seed}", ds.provenance().source);
                (ds, src, "native".to_string())
            }
        };
        if self.skip >= full.rows() {
            return Err(DgaError::Config(format!("skip {} leaves no rows of {}", self.skip, full.rows())));
        }
        let take = self.take.unwrap_or(full.rows() - self.skip);
        let ds = full.slice(self.skip, take);
        let label = format!("{}[{}..{}]", self.split, self.skip, self.skip + ds.rows());
        Ok(ds.with_provenance(&source, &rule, &label))
    }
}

/// One stage of the stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub code_dim: usize,
    #[serde(default)]
    pub encoder_hidden: Vec<usize>,
    #[serde(default)]
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "one")]
    pub beta_target: f64,
    #[serde(default)]
    pub ramp_epochs: Option<usize>,
    pub epochs: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    #[serde(default = "default_centroids")]
    pub n_centroids: usize,
    #[serde(default = "default_is_samples")]
    pub n_is_samples: usize,
}

fn default_centroids() -> usize {
    1000
}
fn default_is_samples() -> usize {
    100_000
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { n_centroids: default_centroids(), n_is_samples: default_is_samples() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSettings {
    #[serde(default = "ten")]
    pub grid_rows: usize,
    #[serde(default = "ten")]
    pub grid_cols: usize,
    /// Tile size; `None` means square tiles of side `sqrt(width)`.
    #[serde(default)]
    pub tile: Option<(usize, usize)>,
    #[serde(default)]
    pub intermediate_mode: IntermediateMode,
}

fn ten() -> usize {
    10
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self { grid_rows: 10, grid_cols: 10, tile: None, intermediate_mode: IntermediateMode::Threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train_data: DataSpec,
    #[serde(default)]
    pub test_data: Option<DataSpec>,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub sample: SampleSettings,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| DgaError::format(origin, format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DgaError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(DgaError::Config("at least one stage is required".into()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.code_dim == 0 || s.encoder_hidden.contains(&0) || s.decoder_hidden.contains(&0) {
                return Err(DgaError::Config(format!("stage {k} has a zero-width layer")));
            }
            if s.epochs == 0 {
                return Err(DgaError::Config(format!("stage {k} trains for zero epochs")));
            }
        }
        self.schedule().validate()?;
        self.train_config().validate()?;
        if self.eval.n_centroids == 0 || self.eval.n_is_samples < 2 {
            return Err(DgaError::Config("eval needs N >= 1 centroids and S >= 2 samples".into()));
        }
        if self.sample.grid_rows == 0 || self.sample.grid_cols == 0 {
            return Err(DgaError::Config("sample grid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StageSchedule {
        StageSchedule {
            stages: self
                .stages
                .iter()
                .map(|s| StageTarget { beta_target: s.beta_target, ramp_epochs: s.ramp_epochs, epochs: s.epochs })
                .collect(),
        }
    }

    /// The shared training config with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// Stage shapes for data of the given width, checked for chaining.
    pub fn shapes(&self, input_width: usize) -> Result<Vec<ModelShape>> {
        let mut shapes = Vec::with_capacity(self.stages.len());
        let mut below = input_width;
        for s in &self.stages {
            shapes.push(
                ModelShape::new(below, s.code_dim).with_hidden(s.encoder_hidden.clone(), s.decoder_hidden.clone()),
            );
            below = s.code_dim;
        }
        check_chain(input_width, &shapes)?;
        Ok(shapes)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
