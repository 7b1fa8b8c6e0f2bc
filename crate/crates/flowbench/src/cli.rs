//! The `flowbench` command line: `generate`, `train` and `eval`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use flowbench_core::data::{generate_synthetic_noisy, normalize, FrameDataset, Split};
use flowbench_core::models::{FrameGeometry, ModelKind};
use flowbench_core::train::{evaluate, predict_split, TrainConfig};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{decode_dataset, write_dataset};
use crate::error::{io_at, Error, Result};
use crate::manifest::{sha256_hex, verify_digest, DatasetProvenance, ModelEntry, RunManifest, TrainSettings};
use crate::pgm::render_frame;
use crate::report::{write_test_results, Metric, MetricsTable, TEST_RESULTS_CSV};
use crate::run::{run_models, worker_threads};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "flowbench", version, about = "Next-frame flow prediction benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic vortex-street dataset.
    Generate(GenerateArgs),
    /// Train one or all models and write metrics, checkpoints and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 151)]
    pub frames: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Amplitude of additive uniform noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Output FLOWDAT1 file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    One(ModelKind),
    All,
}

impl std::str::FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ModelChoice::All);
        }
        s.parse().map(ModelChoice::One).map_err(|_| format!("unknown model `{s}` (expected ae, conv, transformer or all)"))
    }
}

impl ModelChoice {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            ModelChoice::One(k) => vec![k],
            ModelChoice::All => ModelKind::CSV_ORDER.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// ae, conv, transformer or all.
    #[arg(long, default_value = "all")]
    pub model: ModelChoice,
    /// FLOWDAT1 dataset to train on.
    #[arg(long, required_unless_present = "manifest")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Transformer dropout probability while training.
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    /// Keep the training pairs in order instead of shuffling each epoch.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Directory for checkpoints, metric CSVs and the manifest.
    #[arg(long)]
    pub outdir: PathBuf,
    /// Repeat the run recorded in a manifest; other settings are ignored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model_checkpoint: PathBuf,
    /// FLOWDAT1 dataset whose test split is scored.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of test predictions to render as PGM pairs.
    #[arg(long, default_value_t = 0)]
    pub render: usize,
    #[arg(long, default_value = ".")]
    pub outdir: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub batch: usize,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
    }
}

fn generate(a: &GenerateArgs) -> Result<String> {
    let geometry = FrameGeometry::new(a.height, a.width)?;
    let ds = generate_synthetic_noisy(geometry, a.frames, a.seed, a.noise)?;
    write_dataset(&a.out, &ds)?;
    let (lo, hi) = ds.value_range();
    Ok(format!(
        "wrote {} frames of {}x{} to {} (values in [{lo:.6}, {hi:.6}])",
        ds.len(),
        a.height,
        a.width,
        a.out.display()
    ))
}

fn load_normalized(bytes: &[u8]) -> Result<FrameDataset> {
    Ok(normalize(&decode_dataset(bytes)?)?)
}

pub fn checkpoint_name(kind: ModelKind) -> String {
    format!("{}.ckpt", kind.name())
}

fn train(a: &TrainArgs) -> Result<String> {
    let (kinds, cfg, data_path, bytes) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            let bytes = verify_digest(&m.dataset.path, &m.dataset.sha256)?;
            (m.kinds()?, m.train.to_config()?, m.dataset.path.clone(), bytes)
        }
        None => {
            let data = a.data.clone().ok_or_else(|| Error::Usage("--data is required".into()))?;
            let bytes = fs::read(&data).map_err(io_at(&data))?;
            let cfg = TrainConfig {
                batch_size: a.batch,
                epochs: a.epochs,
                lr: a.lr,
                seed: a.seed,
                dropout_p: a.dropout,
                shuffle: !a.no_shuffle,
                geometry: FrameGeometry::default(),
            };
            (a.model.kinds(), cfg, data, bytes)
        }
    };
    let ds = load_normalized(&bytes)?;
    let cfg = TrainConfig { geometry: ds.geometry(), ..cfg };
    cfg.validate()?;
    fs::create_dir_all(&a.outdir).map_err(io_at(&a.outdir))?;

    let runs = run_models(&kinds, &ds, &cfg, worker_threads())?;

    let mut table = MetricsTable::default();
    let mut models = Vec::new();
    let mut outputs: Vec<PathBuf> = Metric::ALL.iter().map(|m| a.outdir.join(m.file_name())).collect();
    let mut lines = Vec::new();
    for run in &runs {
        let kind = run.model.kind();
        let ckpt = a.outdir.join(checkpoint_name(kind));
        save_checkpoint(&ckpt, &run.model)?;
        table.insert(kind, run.records.clone());
        models.push(ModelEntry {
            model: kind.name().into(),
            hyperparameters: run.model.config().hyperparameters(),
            checkpoint: ckpt.clone(),
        });
        outputs.push(ckpt);
        let first = run.summary.epoch_mean_loss.first().copied().unwrap_or(f64::NAN);
        let last = run.summary.epoch_mean_loss.last().copied().unwrap_or(f64::NAN);
        lines.push(format!(
            "{}: {} steps, epoch loss {first:.6} -> {last:.6}, test loss {:.6}, psnr {:.4}, ssim {:.4}",
            kind.name(),
            run.summary.steps,
            run.test.mse,
            run.test.psnr,
            run.test.ssim
        ));
    }
    table.write(&a.outdir)?;
    let results_path = a.outdir.join(TEST_RESULTS_CSV);
    write_test_results(&results_path, &runs.iter().map(|r| r.test).collect::<Vec<_>>())?;
    outputs.push(results_path);

    let norm = ds.normalization().expect("normalized above");
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        train: TrainSettings::from(&cfg),
        models,
        dataset: DatasetProvenance {
            path: absolute(&data_path),
            sha256: sha256_hex(&bytes),
            frames: ds.len(),
            norm_lo: norm.lo,
            norm_hi: norm.hi,
        },
        outputs,
    };
    manifest.write(a.outdir.join(MANIFEST_FILE))?;
    Ok(lines.join("\n"))
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

fn eval(a: &EvalArgs) -> Result<String> {
    let mut model = load_checkpoint(&a.model_checkpoint)?;
    let bytes = fs::read(&a.data).map_err(io_at(&a.data))?;
    let ds = load_normalized(&bytes)?;
    if model.geometry() != ds.geometry() {
        let (m, d) = (model.geometry(), ds.geometry());
        return Err(Error::Usage(format!(
            "checkpoint geometry {}x{} does not match dataset {}x{}",
            m.height, m.width, d.height, d.width
        )));
    }
    let result = evaluate(&mut model, &ds, Split::Test, a.batch)?;
    fs::create_dir_all(&a.outdir).map_err(io_at(&a.outdir))?;
    write_test_results(a.outdir.join(TEST_RESULTS_CSV), &[result])?;
    if a.render > 0 {
        let preds = predict_split(&mut model, &ds, Split::Test)?;
        for (i, (t, pred)) in preds.iter().take(a.render).enumerate() {
            render_frame(pred, a.outdir.join(format!("pred_{i:03}.pgm")))?;
            render_frame(&ds.frames()[t + 1], a.outdir.join(format!("truth_{i:03}.pgm")))?;
        }
    }
    Ok(format!(
        "{}: test loss {:.6}, psnr {:.4}, ssim {:.4}",
        result.model.name(),
        result.mse,
        result.psnr,
        result.ssim
    ))
}

/// Flattens a message onto one line for the `error:` prefix contract.
pub fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}
