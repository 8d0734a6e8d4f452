use std::path::{Path, PathBuf};
use std::sync::Arc;

use airsig::dataset::{
    build_pair_set, load_dataset, split_by_authors, synth_generate, ForgeryMode, Layout, SignerRecord, Split,
    SynthConfig,
};
use airsig::landmark::{read_trace, DEFAULT_DEBOUNCE};
use airsig::nn::{OptimizerConfig, Preset};
use airsig::service::{replay, CaptureConfig, EnrollmentStore, Verifier};
use airsig::siamese::{
    calibrate, equal_error_rate, evaluate, history_csv, score_pairs, train, LossConfig, LossKind, PairSet,
    TrainConfig,
};
use airsig::stroke::{SmoothingConfig, DEFAULT_CANVAS_H, DEFAULT_CANVAS_W};
use airsig::{SiameseModel, SignatureImage};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{pick, require, FileConfig};
use crate::error::CliError;
use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "airsig", version, about = "Air-signature capture and signature verification")]
pub struct Cli {
    /// Key-value (TOML) file with serve/replay settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a signature corpus.
    Train(TrainArgs),
    /// Score a pair set at a fixed threshold and print the report.
    Eval(EvalArgs),
    /// Pick the accuracy-maximizing threshold on a pair set.
    Calibrate(CalibrateArgs),
    /// Rasterize a recorded landmark trace to a PNG.
    Replay(ReplayArgs),
    /// Write a synthetic corpus in the per-signer directory layout.
    Synth(SynthArgs),
    /// Run the HTTP/WebSocket service.
    Serve(ServeArgs),
    /// Compare two signature images.
    VerifyPair(VerifyPairArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    CedarNames,
    PerSignerDirs,
    Manifest,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::CedarNames => Layout::CedarNames,
            LayoutArg::PerSignerDirs => Layout::PerSignerDirs,
            LayoutArg::Manifest => Layout::Manifest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Tiny,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Linear,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForgeryArg {
    OtherSeed,
    HeavyPerturb,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root (or manifest file).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "per-signer-dirs")]
    pub layout: LayoutArg,
    /// Signer split ratios: train,val,test (or train,test).
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.25,0.25")]
    pub split: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 7)]
    pub pair_seed: u64,
    /// Keep every genuine-forged negative instead of balancing to the positive count.
    #[arg(long)]
    pub all_negatives: bool,
}

impl DataArgs {
    fn records(&self) -> Result<Vec<SignerRecord>, CliError> {
        Ok(load_dataset(&self.data, self.layout.into())?)
    }

    fn subset(&self, records: &[SignerRecord], subset: Subset) -> Result<Vec<SignerRecord>, CliError> {
        let split = match subset {
            Subset::All => return Ok(records.to_vec()),
            Subset::Train => Split::Train,
            Subset::Val => Split::Val,
            Subset::Test => Split::Test,
        };
        let plan = split_by_authors(records, &self.split, self.split_seed)?;
        let chosen = plan.select(records, split);
        if chosen.is_empty() {
            return Err(CliError::Usage(format!("the {subset:?} split is empty for ratios {:?}", self.split)));
        }
        Ok(chosen)
    }

    fn pairs(&self, records: &[SignerRecord], preset: Preset) -> Result<PairSet, CliError> {
        let [_, h, w] = preset.input_shape();
        Ok(build_pair_set(records, h, w, !self.all_negatives, self.pair_seed)?)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV (default: next to the model with a .csv extension).
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tiny")]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, value_enum, default_value = "linear")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.0)]
    pub min_delta: f64,
    /// Seed for weight initialization, shuffling and dropout.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// Also write the report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "val")]
    pub subset: Subset,
}

#[derive(Debug, Args)]
pub struct CaptureArgs {
    #[arg(long)]
    pub debounce: Option<usize>,
    /// Smoothing weight of the newest sample, in (0, 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CANVAS_W)]
    pub canvas_w: u32,
    #[arg(long, default_value_t = DEFAULT_CANVAS_H)]
    pub canvas_h: u32,
    #[arg(long, default_value_t = 2)]
    pub brush_radius: u32,
    #[arg(long, default_value_t = 10)]
    pub margin: u32,
}

impl CaptureArgs {
    fn resolve(&self, file: &FileConfig) -> CaptureConfig {
        CaptureConfig {
            canvas_w: self.canvas_w,
            canvas_h: self.canvas_h,
            debounce: pick(self.debounce, file.debounce, DEFAULT_DEBOUNCE),
            smoothing: SmoothingConfig {
                alpha: pick(self.alpha, file.alpha, SmoothingConfig::default().alpha),
                brush_radius_px: self.brush_radius,
                crop_margin_px: self.margin,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Line-delimited JSON landmark trace.
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub capture: CaptureArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub signers: usize,
    #[arg(long, default_value_t = 10)]
    pub genuine: usize,
    #[arg(long, default_value_t = 10)]
    pub forged: usize,
    /// Control-point jitter in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value = "other-seed")]
    pub forgery_mode: ForgeryArg,
    #[arg(long, default_value_t = 220)]
    pub canvas_w: u32,
    #[arg(long, default_value_t = 155)]
    pub canvas_h: u32,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Enrollment store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub capture: CaptureArgs,
}

#[derive(Debug, Args)]
pub struct VerifyPairArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub threshold: f64,
    pub a: PathBuf,
    pub b: PathBuf,
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn load_model(path: &Path) -> Result<SiameseModel, CliError> {
    Ok(SiameseModel::load(path)?.0)
}

fn load_image(path: &Path) -> Result<SignatureImage, CliError> {
    SignatureImage::load_png(path).map_err(CliError::data)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Replay(a) => cmd_replay(a, &file),
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a, &file),
        Command::VerifyPair(a) => cmd_verify_pair(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    if a.data.split.len() != 3 {
        return Err(CliError::Usage("training needs train,val,test split ratios".into()));
    }
    let preset: Preset = a.preset.into();
    let records = a.data.records()?;
    let train_set = a.data.pairs(&a.data.subset(&records, Subset::Train)?, preset)?;
    let val_set = a.data.pairs(&a.data.subset(&records, Subset::Val)?, preset)?;
    let cfg = TrainConfig {
        optimizer: OptimizerConfig {
            lr: a.lr,
            rho: a.rho,
            eps: a.eps,
            momentum: a.momentum,
            batch_size: a.batch_size,
            max_epochs: a.epochs,
        },
        loss: LossConfig {
            margin: a.margin,
            kind: match a.loss {
                LossArg::Linear => LossKind::Linear,
                LossArg::Squared => LossKind::Squared,
            },
        },
        patience: a.patience,
        min_delta: a.min_delta,
        seed: a.seed,
    };
    let mut model = SiameseModel::new(preset, a.seed)?;
    let outcome = train(&mut model, &train_set, &val_set, &cfg)?;
    let header = model.save(&a.out)?;
    // threshold of the saved (f32) weights
    let saved = load_model(&a.out)?;
    let threshold = calibrate(&score_pairs(&saved, &val_set)?)?.threshold;
    let history = a.history.unwrap_or_else(|| a.out.with_extension("csv"));
    std::fs::write(&history, history_csv(&outcome.history))?;
    print_json(&json!({
        "model": a.out,
        "history": history,
        "preset": preset.name(),
        "model_version": header.model_version(),
        "train_pairs": train_set.len(),
        "val_pairs": val_set.len(),
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_acc": outcome.best_val_acc,
        "threshold": threshold,
        "stopped_early": outcome.stopped_early,
    }));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let records = a.data.records()?;
    let set = a.data.pairs(&a.data.subset(&records, a.subset)?, model.preset())?;
    let report = evaluate(&model, &set, a.threshold)?;
    let eer = equal_error_rate(&score_pairs(&model, &set)?).ok();
    let mut v = serde_json::to_value(&report).expect("report serializes");
    v["eer"] = json!(eer.map(|e| e.eer));
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&v).expect("json value serializes"))?;
    }
    print_json(&v);
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let records = a.data.records()?;
    let set = a.data.pairs(&a.data.subset(&records, a.subset)?, model.preset())?;
    let report = calibrate(&score_pairs(&model, &set)?)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn cmd_replay(a: ReplayArgs, file: &FileConfig) -> Result<(), CliError> {
    let cfg = a.capture.resolve(file);
    let f = std::fs::File::open(&a.trace).map_err(|e| CliError::data(format!("{}: {e}", a.trace.display())))?;
    let frames = read_trace(std::io::BufReader::new(f))?;
    let (img, stats) = replay(&frames, &cfg)?;
    img.save_png(&a.out).map_err(CliError::data)?;
    print_json(&json!({
        "out": a.out,
        "frames": stats.frames,
        "dropped": stats.dropped,
        "strokes": stats.strokes,
        "width": img.width(),
        "height": img.height(),
    }));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_signers: a.signers,
        genuine_per_signer: a.genuine,
        forged_per_signer: a.forged,
        jitter_sigma: a.sigma,
        forgery_mode: match a.forgery_mode {
            ForgeryArg::OtherSeed => ForgeryMode::OtherSeed,
            ForgeryArg::HeavyPerturb => ForgeryMode::HeavyPerturb,
        },
        canvas_w: a.canvas_w,
        canvas_h: a.canvas_h,
        seed: a.seed,
    };
    let records = synth_generate(&cfg, &a.out)?;
    let images: usize = records.iter().map(|r| r.genuine.len() + r.forged.len()).sum();
    print_json(&json!({ "out": a.out, "signers": records.len(), "images": images }));
    Ok(())
}

fn cmd_serve(a: ServeArgs, file: &FileConfig) -> Result<(), CliError> {
    let host = pick(a.host.clone(), file.host.clone(), "127.0.0.1".to_string());
    let port = pick(a.port, file.port, 8080);
    let model_path = require(a.model.clone(), file.model.clone(), "model")?;
    let store_path = require(a.store.clone(), file.store.clone(), "store")?;
    let threshold = require(a.threshold, file.threshold, "threshold")?;
    let capture = a.capture.resolve(file);
    capture.smoothing.validate()?;
    let verifier = Verifier::new(load_model(&model_path)?, threshold);
    let store = EnrollmentStore::open(&store_path, verifier.model_version(), threshold)?;
    let state = AppState::new(verifier, store, capture);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, "serving");
        server::run(listener, Arc::clone(&state)).await
    })?;
    Ok(())
}

fn cmd_verify_pair(a: VerifyPairArgs) -> Result<(), CliError> {
    if !(a.threshold >= 0.0) {
        return Err(CliError::Usage(format!("threshold must be >= 0, got {}", a.threshold)));
    }
    let verifier = Verifier::new(load_model(&a.model)?, a.threshold);
    let out = verifier.verify_pair(&load_image(&a.a)?, &load_image(&a.b)?)?;
    print_json(&serde_json::to_value(out).expect("outcome serializes"));
    Ok(())
}
