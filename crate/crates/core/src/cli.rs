//! The `dga` command line.
//!
//! Every subcommand accepts `--config <file>` plus flag overrides. Progress
//! goes to stderr as JSON lines, results go to stdout as JSON, and a failure
//! ends with a single JSON line `{"error": kind, "message": ...}` on stderr.
//! Usage errors exit with 2, runtime errors with 1.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{DataSource, DataSpec, RunConfig, SampleSettings};
use crate::data::{hex, write_amat, BinaryDataset};
use crate::error::{DgaError, Result};
use crate::eval::{all_binary_vectors, evaluate, exact_log_marginals, exact_log_z, log_p_star_batch, table1_metrics};
use crate::image::{write_pgm, GridLayout};
use crate::model_io::{load_model, save_model, ModelInfo};
use crate::numerics::RngState;
use crate::stack::{ancestral_sample, greedy_pretrain, level_datasets, DeepDga, GenerativeStack, IntermediateMode};
use crate::training::{train_shallow, EpochSummary};

#[derive(Parser, Debug)]
#[command(name = "dga", version, about = "Directed generative autoencoders over binary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a single-stage model on the configured training data.
    Train(Common),
    /// Greedily pretrain every configured stage.
    Stack(StackArgs),
    /// Ancestral sampling to a PGM grid of decoder means.
    Sample(Common),
    /// Unnormalized and normalized log-likelihood report.
    Eval(Common),
    /// Entropy, active bits and correlation of the data and each code level.
    Metrics(Common),
    /// Exhaustive checks on a model small enough to enumerate.
    Oracle(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    n_centroids: Option<usize>,
    #[arg(long)]
    n_is_samples: Option<usize>,
    #[arg(long)]
    beta_ramp_epochs: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    intermediate_mode: Option<IntermediateMode>,
}

#[derive(Args, Debug, Clone)]
struct StackArgs {
    #[command(flatten)]
    common: Common,
    /// Also write each level's code dataset as `.amat`.
    #[arg(long)]
    write_codes: bool,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return 2;
        }
    };
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Stack(s) => cmd_stack(&s.common, s.write_codes),
        Command::Sample(c) => cmd_sample(&c),
        Command::Eval(c) => cmd_eval(&c),
        Command::Metrics(c) => cmd_metrics(&c),
        Command::Oracle(c) => cmd_oracle(&c),
    };
    match result {
        Ok(out) => {
            println!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            1
        }
    }
}

/// A loaded config with overrides applied and the directory its relative
/// paths resolve against.
struct Loaded {
    cfg: RunConfig,
    base: PathBuf,
}

impl Loaded {
    /// Hash of the config minus the output directory, so the same run
    /// written to two places produces identical artifacts.
    fn hash(&self) -> String {
        let mut c = self.cfg.clone();
        c.out = PathBuf::new();
        c.hash()
    }

    fn info(&self, dataset_hash: &str) -> ModelInfo {
        let mut c = self.cfg.clone();
        c.out = PathBuf::new();
        ModelInfo {
            seed: Some(self.cfg.seed),
            config_hash: Some(self.hash()),
            dataset_hash: Some(dataset_hash.to_string()),
            config: Some(c.to_json()),
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| DgaError::io(".", e))?;
    Ok(cwd.join(p))
}

fn override_data(spec: &mut DataSpec, path: &Path) -> Result<()> {
    let binarization = match &spec.source {
        DataSource::File { binarization, .. } => *binarization,
        DataSource::Synth { .. } => Default::default(),
    };
    spec.source = DataSource::File { path: absolute(path)?, binarization };
    spec.skip = 0;
    spec.take = None;
    Ok(())
}

/// `data_is_test` routes `--data` to the evaluation split.
fn load_config(c: &Common, data_is_test: bool) -> Result<Option<Loaded>> {
    let Some(path) = &c.config else { return Ok(None) };
    let mut cfg = RunConfig::from_path(path)?;
    let base = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &c.data {
        if data_is_test {
            let mut spec = cfg.test_data.clone().unwrap_or_else(|| DataSpec::file(d));
            override_data(&mut spec, d)?;
            cfg.test_data = Some(spec);
        } else {
            override_data(&mut cfg.train_data, d)?;
        }
    }
    if let Some(n) = c.n_centroids {
        cfg.eval.n_centroids = n;
    }
    if let Some(n) = c.n_is_samples {
        cfg.eval.n_is_samples = n;
    }
    if let Some(r) = c.beta_ramp_epochs {
        cfg.train.beta.ramp_epochs = Some(r);
        cfg.stages.iter_mut().for_each(|s| s.ramp_epochs = Some(r));
    }
    if let Some(r) = c.noise_rate {
        cfg.train.noise_rate = r;
    }
    if let Some(m) = c.intermediate_mode {
        cfg.sample.intermediate_mode = m;
    }
    cfg.validate()?;
    Ok(Some(Loaded { cfg, base }))
}

fn require_config(c: &Common, data_is_test: bool) -> Result<Loaded> {
    load_config(c, data_is_test)?.ok_or_else(|| DgaError::Config("this subcommand needs --config".into()))
}

fn out_dir(path: &Path) -> Result<PathBuf> {
    fs::create_dir_all(path).map_err(|e| DgaError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn progress(summary: &EpochSummary) {
    let line = serde_json::to_string(summary).expect("summary serializes");
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| DgaError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| DgaError::io(path, e))
}

fn cmd_train(c: &Common) -> Result<String> {
    let run = require_config(c, false)?;
    let data = run.cfg.train_data.load(&run.base)?;
    let shapes = run.cfg.shapes(data.width())?;
    let mut cfg = run.cfg.schedule().stage_config(&run.cfg.train_config(), 0);
    cfg.beta.end = 1.0;
    let model = train_shallow(&data, &shapes[0], &cfg, progress)?;
    let dir = out_dir(&run.cfg.out)?;
    let path = dir.join("model.dga");
    save_model(&path, std::slice::from_ref(&model), &run.info(&data.provenance().content_hash))?;
    Ok(json!({
        "model": path,
        "seed": run.cfg.seed,
        "config_hash": run.hash(),
        "data": data.provenance(),
    })
    .to_string())
}

fn cmd_stack(c: &Common, write_codes: bool) -> Result<String> {
    let run = require_config(c, false)?;
    let data = run.cfg.train_data.load(&run.base)?;
    let shapes = run.cfg.shapes(data.width())?;
    let trained = greedy_pretrain(&data, &shapes, &run.cfg.schedule(), &run.cfg.train_config(), progress)?;
    let dir = out_dir(&run.cfg.out)?;
    let path = dir.join("model.dga");
    save_model(&path, trained.model.stages(), &run.info(&data.provenance().content_hash))?;
    let mut code_files = Vec::new();
    if write_codes {
        let levels = level_datasets(&trained.model, &data)?;
        for (k, level) in levels.iter().enumerate().skip(1) {
            let p = dir.join(format!("codes_level{k}.amat"));
            write_amat(level, &p)?;
            code_files.push(p);
        }
    }
    Ok(json!({
        "model": path,
        "stages": trained.model.len(),
        "seed": run.cfg.seed,
        "config_hash": run.hash(),
        "codes": code_files,
    })
    .to_string())
}

fn require_model(c: &Common) -> Result<(DeepDga, ModelInfo, PathBuf)> {
    let path = c.model.clone().ok_or_else(|| DgaError::Config("--model is required".into()))?;
    let (model, info) = load_model(&path)?;
    Ok((model, info, path))
}

fn tile_layout(width: usize, s: &SampleSettings) -> Result<GridLayout> {
    let (th, tw) = match s.tile {
        Some(t) => t,
        None => {
            let side = (width as f64).sqrt().round() as usize;
            if side * side != width {
                return Err(DgaError::Config(format!("width {width} is not a perfect square; set sample.tile")));
            }
            (side, side)
        }
    };
    if th * tw != width {
        return Err(DgaError::Config(format!("tile {th}x{tw} does not match width {width}")));
    }
    Ok(GridLayout { tile_height: th, tile_width: tw, rows: s.grid_rows, cols: s.grid_cols })
}

fn cmd_sample(c: &Common) -> Result<String> {
    let run = load_config(c, false)?;
    let (model, info, model_path) = require_model(c)?;
    let mut settings = run.as_ref().map(|r| r.cfg.sample.clone()).unwrap_or_default();
    if let Some(m) = c.intermediate_mode {
        settings.intermediate_mode = m;
    }
    let seed = c.seed.or(run.as_ref().map(|r| r.cfg.seed)).unwrap_or(0);
    let out = c.out.clone().or(run.as_ref().map(|r| r.cfg.out.clone())).unwrap_or_else(|| PathBuf::from("."));
    let layout = tile_layout(model.input_dim(), &settings)?;
    let mut rng = RngState::new(seed);
    let samples = ancestral_sample(&model, layout.rows * layout.cols, &mut rng, settings.intermediate_mode)?;
    let dir = out_dir(&out)?;
    let pgm = dir.join("samples.pgm");
    write_pgm(&pgm, &samples.means, layout)?;
    let sidecar = json!({
        "image": pgm,
        "seed": seed,
        "config_hash": run.as_ref().map(Loaded::hash).or(info.config_hash),
        "model_sha256": file_hash(&model_path)?,
        "intermediate_mode": settings.intermediate_mode,
        "grid": [layout.rows, layout.cols],
        "tile": [layout.tile_height, layout.tile_width],
    });
    write_json(&dir.join("samples.json"), &sidecar)?;
    Ok(sidecar.to_string())
}

fn eval_data(c: &Common, run: Option<&Loaded>) -> Result<BinaryDataset> {
    if let Some(r) = run {
        if let Some(spec) = &r.cfg.test_data {
            return spec.load(&r.base);
        }
        return r.cfg.train_data.load(&r.base);
    }
    let d = c.data.as_ref().ok_or_else(|| DgaError::Config("--data or --config is required".into()))?;
    DataSpec::file(d).load(Path::new("."))
}

fn cmd_eval(c: &Common) -> Result<String> {
    let run = load_config(c, true)?;
    let (model, info, model_path) = require_model(c)?;
    let data = eval_data(c, run.as_ref())?;
    let eval = run.as_ref().map(|r| r.cfg.eval.clone()).unwrap_or_default();
    let n = c.n_centroids.unwrap_or(eval.n_centroids);
    let s = c.n_is_samples.unwrap_or(eval.n_is_samples);
    let seed = c.seed.or(run.as_ref().map(|r| r.cfg.seed)).unwrap_or(0);
    let report = evaluate(&model, &data, n, s, seed)?;
    let out = json!({
        "report": report,
        "seed": seed,
        "config_hash": run.as_ref().map(Loaded::hash).or(info.config_hash),
        "model_sha256": file_hash(&model_path)?,
        "data": data.provenance(),
    });
    if let Some(dir) = c.out.clone().or(run.as_ref().map(|r| r.cfg.out.clone())) {
        write_json(&out_dir(&dir)?.join("eval_report.json"), &out)?;
    }
    Ok(out.to_string())
}

fn level_label(k: usize) -> String {
    if k == 0 {
        return "Data (X)".to_string();
    }
    let mut s = "X".to_string();
    for i in 1..=k {
        s = format!("f{i}({s})");
    }
    s
}

fn cmd_metrics(c: &Common) -> Result<String> {
    let run = load_config(c, false)?;
    let data = match (&run, &c.data) {
        (Some(r), _) => r.cfg.train_data.load(&r.base)?,
        (None, Some(d)) => DataSpec::file(d).load(Path::new("."))?,
        (None, None) => return Err(DgaError::Config("--data or --config is required".into())),
    };
    let levels = match &c.model {
        Some(_) => level_datasets(&require_model(c)?.0, &data)?,
        None => vec![data.clone()],
    };
    let rows = levels
        .iter()
        .enumerate()
        .map(|(k, level)| {
            let m = table1_metrics(level)?;
            Ok(json!({
                "level": level_label(k),
                "width": level.width(),
                "entropy_bits": m.entropy_bits,
                "avg_active_bits": m.avg_active_bits,
                "offdiag_corr_fro": m.offdiag_corr_fro,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "rows": rows,
        "examples": data.rows(),
        "data": data.provenance(),
        "config_hash": run.as_ref().map(Loaded::hash),
    })
    .to_string())
}

fn cmd_oracle(c: &Common) -> Result<String> {
    let (model, info, _) = require_model(c)?;
    let xs = all_binary_vectors(model.input_dim())?;
    let star = log_p_star_batch(&model, &xs)?;
    let marg = exact_log_marginals(&model, &xs)?;
    let mut violations = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    for (s, m) in star.iter().zip(&marg) {
        let excess = s.exp() - m.exp();
        max_excess = max_excess.max(excess);
        if excess > 1e-12 {
            violations += 1;
        }
    }
    Ok(json!({
        "inputs": xs.rows(),
        "log_z": exact_log_z(&model)?,
        "bound_violations": violations,
        "max_excess": max_excess,
        "seed": info.seed,
        "config_hash": info.config_hash,
    })
    .to_string())
}
