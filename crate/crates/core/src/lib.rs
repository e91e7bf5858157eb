//! Directed generative autoencoders over binary data.
//!
//! A model pairs a deterministic binary encoder `h = f(x)` with a
//! probabilistic decoder `P(x | h)` and a factorized prior `P(h)`, and is
//! trained on `-ln P(x | f(x)) - β ln P(f(x))`. Stages can be stacked
//! greedily, sampled ancestrally, and scored with an importance-sampled
//! partition function.
//!
//! ```no_run
//! use dga::{synth_manifold, train_shallow, ModelShape, RngState, TrainConfig};
//!
//! let data = synth_manifold(2000, 12, 3, &mut RngState::new(1)).unwrap();
//! let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
//! let model = train_shallow(&data, &ModelShape::new(12, 8), &cfg, |_| {}).unwrap();
//! println!("{}", dga::log_p_star(&model, &data.row(0)).unwrap());
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod image;
pub mod model_io;
pub mod network;
pub mod numerics;
pub mod prior;
pub mod stack;
pub mod training;

pub use config::{DataSource, DataSpec, RunConfig, StageSpec};
pub use data::{load_amat, load_any, load_idx_and_binarize, synth_manifold, write_amat, Binarization, BinaryDataset};
pub use error::{DgaError, Result};
pub use eval::{
    build_proposal, estimate_log_z, evaluate, exact_log_marginals, exact_log_z, log_p_star, log_p_star_batch,
    table1_metrics, EvalReport, LogZEstimate, ProposalMixture, RepresentationMetrics,
};
pub use image::{emit_sample_grid, write_pgm, GridLayout};
pub use model_io::{load_model, save_model, ModelInfo};
pub use network::{Activation, DgaModel, Mlp, ModelShape};
pub use numerics::{Matrix, RngState};
pub use prior::{FactorizedBernoulli, PriorCounter};
pub use stack::{ancestral_sample, greedy_pretrain, DeepDga, GenerativeStack, IntermediateMode, StageSchedule};
pub use training::{train_shallow, BetaSchedule, EpochSummary, TrainConfig, Trainer};
