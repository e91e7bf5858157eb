//! One PASS/FAIL line per acceptance criterion.
//!
//! Runs without the test harness so the table is never captured. Failures
//! are reported, not raised; `DGA_ACCEPTANCE_STRICT=1` makes any FAIL exit 1.
//! The MNIST criteria read the IDX files from `data/mnist` (or `DGA_MNIST_DIR`).

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::{gradient_probe, mnist_dir};
use dga::eval::{all_binary_vectors, exact_log_marginals};
use dga::image::parse_pgm;
use dga::network::threshold_codes;
use dga::training::{train_shallow, Trainer};
use dga::{
    emit_sample_grid, evaluate, exact_log_z, greedy_pretrain, load_idx_and_binarize, log_p_star_batch, save_model,
    synth_manifold, table1_metrics, BetaSchedule, Binarization, DataSource, DeepDga, DgaModel, GenerativeStack,
    GridLayout, Matrix, ModelInfo, ModelShape, PriorCounter, RngState, RunConfig, TrainConfig,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    outcome(false, detail)
}

struct Table {
    rows: Vec<(usize, bool)>,
}

impl Table {
    fn record(&mut self, n: usize, name: &str, started: Instant, o: Outcome) {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {verdict} {name}: {} ({:.1}s)", o.detail, started.elapsed().as_secs_f64());
        self.rows.push((n, o.pass));
    }
}

/// The tiny synthetic model shared by criteria 1 and 2.
fn tiny_model() -> dga::Result<(DgaModel, dga::BinaryDataset)> {
    let data = synth_manifold(2000, 12, 3, &mut RngState::new(1))?;
    let cfg = TrainConfig { epochs: 200, seed: 1, beta: BetaSchedule::linear(0.0, 1.0, 100), ..TrainConfig::default() };
    let model = train_shallow(&data, &ModelShape::new(12, 8), &cfg, |_| {})?;
    Ok((model, data))
}

fn bound_check(model: &DgaModel) -> dga::Result<Outcome> {
    let xs = all_binary_vectors(12)?;
    let star = log_p_star_batch(model, &xs)?;
    let marg = exact_log_marginals(model, &xs)?;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for (s, m) in star.iter().zip(&marg) {
        let excess = s.exp() - m.exp();
        worst = worst.max(excess);
        if excess > 1e-12 {
            violations += 1;
        }
    }
    Ok(outcome(
        violations == 0,
        format!("{violations} of {} inputs exceed the marginal, max excess {worst:.3e}", xs.rows()),
    ))
}

fn log_z_check(model: &DgaModel, data: &dga::BinaryDataset) -> dga::Result<Outcome> {
    let exact = exact_log_z(model)?;
    let report = evaluate(model, data, 100, 100_000, 5)?;
    let diff = (report.log_z - exact).abs();
    let pass = diff < 0.05 && diff < 3.0 * report.log_z_std_err;
    Ok(outcome(
        pass,
        format!(
            "estimate {:.5} ± {:.5} vs enumerated {exact:.5}, |diff| {diff:.5}",
            report.log_z, report.log_z_std_err
        ),
    ))
}

fn gradient_check() -> Outcome {
    let shape = ModelShape::new(6, 4);
    let (mut dec_max, mut enc_max) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let (dec, enc) = gradient_probe(&shape, seed, 0.7, 0.01);
        dec_max = dec_max.max(dec);
        enc_max = enc_max.max(enc);
    }
    outcome(
        dec_max < 1e-5 && enc_max < 1e-5,
        format!("max relative error decoder {dec_max:.2e}, encoder {enc_max:.2e}"),
    )
}

fn annealing_check() -> dga::Result<Outcome> {
    let data = synth_manifold(500, 10, 3, &mut RngState::new(3))?;
    let cfg = TrainConfig { epochs: 5, seed: 21, beta: BetaSchedule::constant(0.0), ..TrainConfig::default() };
    let shape = ModelShape::new(10, 6).with_hidden(vec![7], vec![5]);
    let mut dga = Trainer::new(&shape, cfg.clone())?;
    let mut ae = Trainer::new(&shape, cfg)?;
    let mut identical = true;
    for _ in 0..5 {
        let a = dga.step_epoch(&data)?;
        let b = ae.step_autoencoder_epoch(&data)?;
        identical &= a.recon_nll.to_bits() == b.recon_nll.to_bits()
            && dga.model().encoder == ae.model().encoder
            && dga.model().decoder == ae.model().decoder;
    }
    Ok(outcome(
        identical,
        if identical {
            "encoder and decoder parameters equal bit for bit after every epoch"
        } else {
            "trajectories diverged"
        },
    ))
}

fn overfit_check() -> dga::Result<Outcome> {
    let row = vec![1, 0, 1, 1, 0, 0, 1, 0];
    let data = dga::BinaryDataset::from_rows(vec![row; 100], 8)?;
    let cfg = TrainConfig {
        epochs: 200,
        seed: 4,
        learning_rate: 10.0,
        beta: BetaSchedule::constant(0.0),
        ..TrainConfig::default()
    };
    let mut first_below = None;
    let mut last = f64::NAN;
    train_shallow(&data, &ModelShape::new(8, 4), &cfg, |s| {
        last = s.recon_nll;
        if first_below.is_none() && s.recon_nll < 0.01 {
            first_below = Some(s.epoch);
        }
    })?;
    Ok(match first_below {
        Some(e) => outcome(true, format!("reconstruction NLL below 0.01 nats at epoch {e}, final {last:.2e}")),
        None => fail(format!("final reconstruction NLL {last:.4}")),
    })
}

fn preset(name: &str) -> dga::Result<(RunConfig, PathBuf)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut cfg = RunConfig::from_path(&dir.join(name))?;
    let mnist = mnist_dir();
    for spec in std::iter::once(&mut cfg.train_data).chain(cfg.test_data.as_mut()) {
        if let DataSource::File { path, .. } = &mut spec.source {
            *path = mnist.join(path.file_name().expect("file name"));
        }
    }
    Ok((cfg, dir))
}

struct DeskRun {
    deep: DeepDga,
    shallow: DgaModel,
    train: dga::BinaryDataset,
    test: dga::BinaryDataset,
    eval: dga::config::EvalSettings,
    seed: u64,
}

fn desk_run() -> dga::Result<DeskRun> {
    let (deep_cfg, base) = preset("mnist-deep2.json")?;
    let train = deep_cfg.train_data.load(&base)?;
    let test = deep_cfg.test_data.as_ref().expect("preset has test data").load(&base)?;
    let shapes = deep_cfg.shapes(train.width())?;
    let deep = greedy_pretrain(&train, &shapes, &deep_cfg.schedule(), &deep_cfg.train_config(), |_| {})?.model;

    let (shallow_cfg, _) = preset("mnist-shallow.json")?;
    let shallow_shape = &shallow_cfg.shapes(train.width())?[0];
    let stage_cfg = shallow_cfg.schedule().stage_config(&shallow_cfg.train_config(), 0);
    let shallow = train_shallow(&train, shallow_shape, &stage_cfg, |_| {})?;
    Ok(DeskRun { deep, shallow, train, test, eval: deep_cfg.eval.clone(), seed: deep_cfg.seed })
}

fn monotone_check(run: &DeskRun) -> dga::Result<Outcome> {
    let levels = dga::stack::level_datasets(&run.deep, &run.train)?;
    let m: Vec<_> = levels.iter().map(table1_metrics).collect::<dga::Result<_>>()?;
    let pass = m[1].entropy_bits < m[0].entropy_bits
        && m[2].entropy_bits < m[1].entropy_bits
        && m[1].offdiag_corr_fro < m[0].offdiag_corr_fro
        && m[2].offdiag_corr_fro < m[1].offdiag_corr_fro;
    let fmt = |f: fn(&dga::RepresentationMetrics) -> f64| {
        m.iter().map(|x| format!("{:.2}", f(x))).collect::<Vec<_>>().join(" -> ")
    };
    Ok(outcome(
        pass,
        format!("{} rows; entropy {}; corr {}", run.train.rows(), fmt(|x| x.entropy_bits), fmt(|x| x.offdiag_corr_fro)),
    ))
}

fn raw_metrics_check() -> dga::Result<Outcome> {
    let data =
        load_idx_and_binarize(&mnist_dir().join("train-images-idx3-ubyte"), Binarization::Threshold)?.slice(0, 50_000);
    let m = table1_metrics(&data)?;
    let pass = (m.entropy_bits - 297.6).abs() <= 5.0
        && (m.avg_active_bits - 102.1).abs() <= 3.0
        && (m.offdiag_corr_fro - 63.5).abs() <= 3.0;
    Ok(outcome(
        pass,
        format!(
            "{} rows ({}): entropy {:.2}, active {:.2}, corr {:.2}",
            data.rows(),
            data.provenance().binarization,
            m.entropy_bits,
            m.avg_active_bits,
            m.offdiag_corr_fro
        ),
    ))
}

fn likelihood_check(run: &DeskRun) -> dga::Result<Outcome> {
    let (n, s) = (run.eval.n_centroids, run.eval.n_is_samples);
    let deep = evaluate(&run.deep, &run.test, n, s, run.seed)?;
    let shallow = evaluate(&run.shallow, &run.test, n, s, run.seed)?;
    let finite = deep.mean_log_likelihood_nats.is_finite() && deep.log_z_std_err.is_finite();
    let embedded = deep.n_centroids == n && deep.n_is_samples == s;
    let pass = finite && embedded && deep.mean_log_likelihood_nats > shallow.mean_log_likelihood_nats;
    Ok(outcome(
        pass,
        format!(
            "{} test rows, N {n}, S {s}, seeds {}/{}: deep {:.2} (ln Z {:.3} ± {:.3}) vs shallow {:.2} (ln Z {:.3} ± {:.3}) nats",
            run.test.rows(),
            deep.seeds.proposal,
            deep.seeds.importance,
            deep.mean_log_likelihood_nats,
            deep.log_z,
            deep.log_z_std_err,
            shallow.mean_log_likelihood_nats,
            shallow.log_z,
            shallow.log_z_std_err
        ),
    ))
}

fn run_sample(model: &DeepDga, dir: &Path, name: &str) -> dga::Result<Vec<u8>> {
    let path = dir.join(format!("{name}.dga"));
    save_model(&path, model.stages(), &ModelInfo::default())?;
    let out = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_dga"))
        .args(["sample", "--seed", "3", "--model"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("binary runs");
    if !status.status.success() {
        return Err(dga::DgaError::Config(String::from_utf8_lossy(&status.stderr).into_owned()));
    }
    Ok(fs::read(out.join("samples.pgm")).expect("grid written"))
}

fn sampling_check(run: &DeskRun) -> dga::Result<Outcome> {
    let dir = tempfile::tempdir().expect("temp dir");
    let grid = run_sample(&run.deep, dir.path(), "trained")?;
    let (w, h, _) = parse_pgm(&grid, Path::new("trained"))?;
    if (w, h) != (280, 280) {
        return Ok(fail(format!("trained grid is {w}x{h}")));
    }

    // Concentrate the top prior on its mode.
    let mut stages = run.deep.stages().to_vec();
    let top = stages.last_mut().expect("stages");
    let mode = top.prior_snapshot()?.mode();
    let ones: Vec<f64> = mode.iter().map(|&b| f64::from(b) * 1e9).collect();
    top.prior = PriorCounter::from_counts(ones, 1e9, 1e-3, 1.0)?;
    let concentrated = DeepDga::new(stages)?;
    let emitted = run_sample(&concentrated, dir.path(), "concentrated")?;

    // Direct decode of the modal code, stage by stage.
    let s = concentrated.stages();
    let top_code = Matrix::from_vec(1, mode.len(), mode.iter().map(|&b| f64::from(b)).collect())?;
    let h1 = threshold_codes(&s[1].decode_logits_batch(&top_code)?);
    let h1_bits: Vec<u8> = h1.row(0).iter().map(|&v| v as u8).collect();
    let means = s[0].decode_means(&h1_bits)?;
    let expected = emit_sample_grid(&vec![means; 100], GridLayout::square(28, 10, 10))?;
    let pass = emitted == expected;
    Ok(outcome(
        pass,
        format!(
            "trained grid {w}x{h}; concentrated grid {} direct decode ({} bytes)",
            if emitted == expected { "equals" } else { "differs from" },
            emitted.len()
        ),
    ))
}

fn main() {
    let mut table = Table { rows: Vec::new() };

    let t = Instant::now();
    let tiny = tiny_model();
    match &tiny {
        Ok((model, _)) => table.record(1, "bound", t, bound_check(model).unwrap_or_else(|e| fail(e.to_string()))),
        Err(e) => table.record(1, "bound", t, fail(e.to_string())),
    }
    let t = Instant::now();
    match &tiny {
        Ok((model, data)) => {
            table.record(2, "log Z", t, log_z_check(model, data).unwrap_or_else(|e| fail(e.to_string())))
        }
        Err(e) => table.record(2, "log Z", t, fail(e.to_string())),
    }

    let t = Instant::now();
    table.record(3, "gradients", t, gradient_check());
    let t = Instant::now();
    table.record(4, "annealing reduction", t, annealing_check().unwrap_or_else(|e| fail(e.to_string())));
    let t = Instant::now();
    table.record(5, "overfit", t, overfit_check().unwrap_or_else(|e| fail(e.to_string())));

    let t = Instant::now();
    let desk = desk_run();
    match &desk {
        Ok(run) => {
            table.record(6, "monotone diagnostics", t, monotone_check(run).unwrap_or_else(|e| fail(e.to_string())))
        }
        Err(e) => table.record(6, "monotone diagnostics", t, fail(e.to_string())),
    }
    let t = Instant::now();
    table.record(7, "raw data diagnostics", t, raw_metrics_check().unwrap_or_else(|e| fail(e.to_string())));
    for (n, name, check) in [
        (8, "deep vs shallow likelihood", likelihood_check as fn(&DeskRun) -> dga::Result<Outcome>),
        (9, "sampling", sampling_check),
    ] {
        let t = Instant::now();
        match &desk {
            Ok(run) => table.record(n, name, t, check(run).unwrap_or_else(|e| fail(e.to_string()))),
            Err(e) => table.record(n, name, t, fail(e.to_string())),
        }
    }

    let failed: Vec<usize> = table.rows.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria pass", table.rows.len() - failed.len(), table.rows.len());
    let strict = std::env::var_os("DGA_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if strict && !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
