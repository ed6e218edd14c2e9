//! Datasets, training, evaluation and inference.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tfgc_autograd::optim::Adam;
use tfgc_autograd::Tensor;

use crate::checkpoint;
use crate::config::{DatasetSpec, RunConfig};
use crate::error::{io_err, Error, Result};
use crate::head::{joint_loss_value, DetectionOutput};
use crate::media_io::{
    load_clip_with, read_wav, save_clip, synth_pair, write_wav, Authenticity, LabeledPair, LoadOptions, SynthMode,
    DEFAULT_FRAME_RATE,
};
use crate::model::{upsample_nearest, Detector, Preprocessor, Sample};
use crate::scenario::{derive_labels, read_manifest, write_manifest, ScenarioRecord, Split};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.json";

/// Seed of the `index`-th synthetic pair of a split.
pub fn synthetic_seed(seed: u64, split: Split, index: usize) -> u64 {
    let lane = match split {
        Split::Train => 0,
        Split::Test => 1u64 << 40,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ lane ^ index as u64
}

/// Modes cycle coherent, jitter, desync.
pub fn synthetic_mode(index: usize) -> SynthMode {
    SynthMode::ALL[index % 3]
}

pub fn synthetic_samples(
    pre: &Preprocessor,
    seed: u64,
    split: Split,
    count: usize,
    frames: usize,
    size: usize,
) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let mode = synthetic_mode(i);
            let pair = synth_pair(synthetic_seed(seed, split, i), mode, frames, size)?;
            pre.prepare(&pair, Some(mode))
        })
        .collect()
}

/// Loads the clips of one split listed in a manifest.
pub fn manifest_samples(
    pre: &Preprocessor,
    manifest: &Path,
    root: &Path,
    opts: &LoadOptions,
    split: Split,
) -> Result<Vec<Sample>> {
    if !manifest.is_file() {
        return Err(Error::Data(format!("manifest {} not found", manifest.display())));
    }
    read_manifest(manifest)?
        .into_iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let (video_label, audio_label) = derive_labels(&r)?;
            let clip = load_clip_with(&root.join(&r.clip_id), opts)?;
            let waveform = read_wav(&root.join(format!("{}.wav", r.clip_id)))?;
            let pair = LabeledPair {
                clip,
                waveform,
                video_label,
                audio_label,
            };
            pre.prepare(&pair, None)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn load_dataset(config: &RunConfig, pre: &Preprocessor) -> Result<Dataset> {
    match &config.dataset {
        DatasetSpec::Synthetic {
            train,
            test,
            frames,
            size,
        } => Ok(Dataset {
            train: synthetic_samples(pre, config.seed, Split::Train, *train, *frames, *size)?,
            test: synthetic_samples(pre, config.seed, Split::Test, *test, *frames, *size)?,
        }),
        DatasetSpec::Manifest {
            manifest,
            root,
            frames,
            size,
            frame_stride,
        } => {
            let opts = LoadOptions {
                frame_stride: *frame_stride,
                ..LoadOptions::new(*frames, *size)
            };
            Ok(Dataset {
                train: manifest_samples(pre, manifest, root, &opts, Split::Train)?,
                test: manifest_samples(pre, manifest, root, &opts, Split::Test)?,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub correct: usize,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Video accuracy at threshold 0.5.
    pub accuracy: f64,
    pub total: usize,
    pub correct: usize,
    /// Keyed by true video label.
    pub per_class: BTreeMap<Authenticity, Tally>,
    /// Keyed by synthetic mode, when known.
    pub per_mode: BTreeMap<SynthMode, Tally>,
    pub audio_accuracy: f64,
    pub mean_loss: f64,
    pub config_hash: String,
    pub seconds: f64,
}

impl EvalReport {
    pub fn mode_accuracy(&self, mode: SynthMode) -> Option<f64> {
        self.per_mode.get(&mode).map(Tally::accuracy)
    }
}

pub trait Predictor {
    fn predict(&mut self, sample: &Sample) -> Result<DetectionOutput>;
}

impl Predictor for Detector {
    fn predict(&mut self, sample: &Sample) -> Result<DetectionOutput> {
        Detector::predict(self, sample)
    }
}

pub fn evaluate(
    predictor: &mut dyn Predictor,
    data: &[Sample],
    config_hash: &str,
    audio_weight: f64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let mut video = Tally::default();
    let mut audio = Tally::default();
    let mut per_class: BTreeMap<Authenticity, Tally> = BTreeMap::new();
    let mut per_mode: BTreeMap<SynthMode, Tally> = BTreeMap::new();
    let mut loss = 0.0;
    for s in data {
        let out = predictor.predict(s)?;
        let ok = out.video_label() == s.labels.0;
        video.add(ok);
        audio.add(out.audio_label() == s.labels.1);
        per_class.entry(s.labels.0).or_default().add(ok);
        if let Some(m) = s.mode {
            per_mode.entry(m).or_default().add(ok);
        }
        loss += joint_loss_value(&out, s.labels, audio_weight);
    }
    Ok(EvalReport {
        accuracy: video.accuracy(),
        total: video.total,
        correct: video.correct,
        per_class,
        per_mode,
        audio_accuracy: audio.accuracy(),
        mean_loss: loss / data.len() as f64,
        config_hash: config_hash.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Rejects samples whose layout the checkpoint's model cannot consume.
fn check_compatible(model: &Detector, pre: &Preprocessor, data: &[Sample]) -> Result<()> {
    let cfg = &model.config;
    let (t, s) = (cfg.dataset.frames(), cfg.dataset.size());
    for x in data {
        let fs = x.frames.shape();
        if fs != [t, 3, s, s] {
            return Err(Error::Schema(format!(
                "{}: frames {fs:?}, checkpoint expects {:?}",
                x.clip_id,
                [t, 3, s, s]
            )));
        }
        if x.audio.shape().get(1) != Some(&pre.feature_dim()) {
            return Err(Error::Schema(format!("{}: audio feature width differs", x.clip_id)));
        }
        if x.freq.is_some() != cfg.modules.lfs {
            return Err(Error::Schema(format!("{}: frequency features do not match", x.clip_id)));
        }
    }
    Ok(())
}

pub fn evaluate_checkpoint(path: &Path, data: &[Sample]) -> Result<EvalReport> {
    let (mut model, pre) = checkpoint::load(path)?;
    check_compatible(&model, &pre, data)?;
    let hash = model.config.hash();
    let w = model.config.loss.audio_weight;
    evaluate(&mut model, data, &hash, w)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Detector,
    /// Mean joint loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_report: EvalReport,
    pub test_report: Option<EvalReport>,
    pub checkpoint: Option<PathBuf>,
    pub seconds: f64,
}

/// Builds the dataset described by `config` and trains on it.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let pre = Preprocessor::from_config(config)?;
    let data = load_dataset(config, &pre)?;
    let test = (!data.test.is_empty()).then_some(data.test.as_slice());
    train_on(config, &pre, &data.train, test)
}

pub fn train_on(
    config: &RunConfig,
    pre: &Preprocessor,
    train: &[Sample],
    test: Option<&[Sample]>,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let start = Instant::now();
    let mut model = Detector::new(config, pre.feature_dim())?;
    check_compatible(&model, pre, train)?;
    let hash = config.hash();
    let ckpt_path = match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            Some(dir.join(CHECKPOINT_FILE))
        }
        None => None,
    };
    let mut last_good: Option<PathBuf> = None;
    let mut adam = Adam::new(model.store.values(), config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F_0DE5);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads: Vec<Tensor> = model.store.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, g, _) = model.loss_and_grads(&train[i])?;
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi)?;
                }
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    last_good,
                });
            }
            let k = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = grads.into_iter().map(|g| g.scale(k)).collect();
            adam.update(model.store.values_mut(), &grads);
            total += batch_loss;
        }
        let mean = total / train.len() as f64;
        log::info!("epoch {} loss {:.5}", epoch + 1, mean);
        epoch_losses.push(mean);
        if let Some(p) = &ckpt_path {
            checkpoint::save(&model, p)?;
            last_good = Some(p.clone());
        }
    }

    let w = config.loss.audio_weight;
    let train_report = evaluate(&mut model, train, &hash, w)?;
    let test_report = test.map(|t| evaluate(&mut model, t, &hash, w)).transpose()?;
    if let Some(dir) = &config.output_dir {
        let report = test_report.as_ref().unwrap_or(&train_report);
        write_json(&dir.join(REPORT_FILE), report)?;
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        train_report,
        test_report,
        checkpoint: ckpt_path,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(io_err(path))
}

#[derive(Clone, Debug)]
pub struct InferOutput {
    pub output: DetectionOutput,
    /// `(T, S, S)` in `[0, 1]`.
    pub saliency: Tensor,
    pub heatmaps: Vec<PathBuf>,
}

/// Blue-to-red ramp.
fn heat_colour(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v).min(1.0)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * v - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.5 * (1.0 - v)).min(1.0)).round() as u8;
    [r, g, b]
}

/// Writes `(T, S, S)` maps as `dir/saliency_%05d.png`.
pub fn write_heatmaps(saliency: &Tensor, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let &[t, h, w] = saliency.shape() else {
        return Err(Error::Shape("saliency must be (T,H,W)".into()));
    };
    (0..t)
        .map(|ti| {
            let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb(heat_colour(saliency.at(&[ti, y as usize, x as usize])))
            });
            let path = dir.join(format!("saliency_{ti:05}.png"));
            img.save(&path).map_err(|e| Error::Decode {
                path: path.clone(),
                msg: e.to_string(),
            })?;
            Ok(path)
        })
        .collect()
}

/// Saliency of a prepared sample, upsampled to the crop size.
pub fn sample_saliency(model: &Detector, sample: &Sample) -> Result<(DetectionOutput, Tensor)> {
    let (out, cam) = model.saliency(sample)?;
    let factor = sample.frames.shape()[2] / cam.shape()[1];
    Ok((out, upsample_nearest(&cam, factor)?))
}

/// Scores one clip and dumps its saliency heatmaps into `out_dir`.
pub fn infer(checkpoint_path: &Path, clip_dir: &Path, wav: &Path, out_dir: &Path) -> Result<InferOutput> {
    let (model, pre) = checkpoint::load(checkpoint_path)?;
    let stride = match &model.config.dataset {
        DatasetSpec::Manifest { frame_stride, .. } => *frame_stride,
        DatasetSpec::Synthetic { .. } => 1,
    };
    let opts = LoadOptions {
        frame_stride: stride,
        frame_rate: DEFAULT_FRAME_RATE,
        ..LoadOptions::new(model.config.dataset.frames(), model.config.dataset.size())
    };
    let pair = LabeledPair {
        clip: load_clip_with(clip_dir, &opts)?,
        waveform: read_wav(wav)?,
        video_label: Authenticity::Real,
        audio_label: Authenticity::Real,
    };
    let sample = pre.prepare(&pair, None)?;
    let (output, saliency) = sample_saliency(&model, &sample)?;
    let heatmaps = write_heatmaps(&saliency, out_dir)?;
    write_json(&out_dir.join("detection.json"), &output)?;
    Ok(InferOutput {
        output,
        saliency,
        heatmaps,
    })
}

/// Writes `count` synthetic pairs under `out` as `<clip_id>/%05d.png` plus
/// `<clip_id>.wav`, and a `manifest.jsonl` whose every fifth record is in
/// the test split. Without `mode`, modes cycle.
pub fn write_synthetic(
    out: &Path,
    seed: u64,
    mode: Option<SynthMode>,
    count: usize,
    frames: usize,
    size: usize,
) -> Result<Vec<ScenarioRecord>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let m = mode.unwrap_or_else(|| synthetic_mode(i));
        let pair_seed = seed.wrapping_add(i as u64);
        let pair = synth_pair(pair_seed, m, frames, size)?;
        let clip_id = format!("{}-{i:05}", pair.clip.clip_id());
        save_clip(&pair.clip, &out.join(&clip_id))?;
        write_wav(&pair.waveform, &out.join(format!("{clip_id}.wav")))?;
        let source = format!("synth-{pair_seed}");
        records.push(ScenarioRecord {
            clip_id,
            // pristine, or genuine-audio lip-only forgery
            scenario_id: if m == SynthMode::Coherent { 0 } else { 10 },
            source_audio_id: format!("{source}/audio"),
            source_video_id: source,
            split: if i % 5 == 4 { Split::Test } else { Split::Train },
        });
    }
    write_manifest(&out.join("manifest.jsonl"), &records)?;
    Ok(records)
}
