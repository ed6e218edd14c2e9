use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tfgc_core::checkpoint;
use tfgc_core::config::RunConfig;
use tfgc_core::harness::{self, REPORT_FILE};
use tfgc_core::media_io::SynthMode;
use tfgc_core::scenario::{read_manifest, split_report, validate};

#[derive(Parser)]
#[command(name = "tfgc", version, about = "Talking-face forgery detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clips, audio and a manifest.
    Synth(SynthArgs),
    /// Inspect scenario manifests.
    #[command(subcommand)]
    Manifest(ManifestCommand),
    /// Train a detector and write a checkpoint plus report.
    Train(RunArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Score one clip and dump saliency heatmaps.
    Infer(InferArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fix every pair to one mode instead of cycling.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, default_value_t = 30)]
    count: usize,
    /// Frames per clip.
    #[arg(long = "T", default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Coherent,
    Jitter,
    Desync,
}

impl From<Mode> for SynthMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Coherent => SynthMode::Coherent,
            Mode::Jitter => SynthMode::Jitter,
            Mode::Desync => SynthMode::Desync,
        }
    }
}

#[derive(Subcommand)]
enum ManifestCommand {
    /// Check every record and its labels.
    Validate { manifest: PathBuf },
    /// Per-scenario and per-split counts as JSON.
    Report {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// TOML file mirroring the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_lfs: bool,
    #[arg(long)]
    no_rsfdm: bool,
    #[arg(long)]
    no_dctam: bool,
    #[arg(long)]
    no_vafm: bool,
}

impl Overrides {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        let m = &mut cfg.modules;
        m.lfs &= !self.no_lfs;
        m.rsfdm &= !self.no_rsfdm;
        m.dctam &= !self.no_dctam;
        m.vafm &= !self.no_vafm;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for the checkpoint and report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to score; defaults to the checkpoint's own.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of frame images.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct InferReport<'a> {
    config_hash: String,
    video_prob: f64,
    audio_prob: f64,
    video_label: tfgc_core::media_io::Authenticity,
    audio_label: tfgc_core::media_io::Authenticity,
    heatmaps: &'a [PathBuf],
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config_hash: String,
    checkpoint: Option<&'a Path>,
    epoch_losses: &'a [f64],
    train: &'a harness::EvalReport,
    test: Option<&'a harness::EvalReport>,
    seconds: f64,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let recs = harness::write_synthetic(&a.out, a.seed, a.mode.map(Into::into), a.count, a.frames, a.size)?;
            log::info!("wrote {} pairs to {}", recs.len(), a.out.display());
        }
        Command::Manifest(ManifestCommand::Validate { manifest }) => {
            let recs = read_manifest(&manifest)?;
            for r in &recs {
                validate(r).with_context(|| format!("record {}", r.clip_id))?;
            }
            println!("{}: {} records ok", manifest.display(), recs.len());
        }
        Command::Manifest(ManifestCommand::Report { manifest, out }) => {
            let report = split_report(&read_manifest(&manifest)?)?;
            if let Some(p) = out {
                harness::write_json(&p, &report)?;
            }
            print_json(&report)?;
        }
        Command::Train(a) => {
            let mut cfg = a.overrides.resolve(RunConfig::synthetic_small())?;
            if a.out.is_some() {
                cfg.output_dir = a.out;
            }
            let out = harness::train(&cfg)?;
            print_json(&TrainReport {
                config_hash: cfg.hash(),
                checkpoint: out.checkpoint.as_deref(),
                epoch_losses: &out.epoch_losses,
                train: &out.train_report,
                test: out.test_report.as_ref(),
                seconds: out.seconds,
            })?;
            if let Some(dir) = &cfg.output_dir {
                log::info!("report written to {}", dir.join(REPORT_FILE).display());
            }
        }
        Command::Eval(a) => {
            let (model, pre) = checkpoint::load(&a.checkpoint)?;
            let cfg = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => model.config.clone(),
            };
            let data = harness::load_dataset(&cfg, &pre)?;
            let samples = match a.split {
                SplitArg::Train => data.train,
                SplitArg::Test => data.test,
            };
            if samples.is_empty() {
                bail!("the selected split is empty");
            }
            let report = harness::evaluate_checkpoint(&a.checkpoint, &samples)?;
            if let Some(p) = a.out {
                harness::write_json(&p, &report)?;
            }
            print_json(&report)?;
        }
        Command::Infer(a) => {
            let res = harness::infer(&a.checkpoint, &a.clip, &a.wav, &a.out)?;
            let (model, _) = checkpoint::load(&a.checkpoint)?;
            print_json(&InferReport {
                config_hash: model.config.hash(),
                video_prob: res.output.video_prob,
                audio_prob: res.output.audio_prob,
                video_label: res.output.video_label(),
                audio_label: res.output.audio_label(),
                heatmaps: &res.heatmaps,
            })?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
