//! Face-clip and audio ingestion, normalisation and the synthetic pair
//! generator.

mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use tfgc_autograd::Tensor;

use crate::error::{io_err, shape_err, Error, Result};

pub use synth::{
    pearson, synth_pair, synth_pair_with_truth, MouthBox, SynthMode, SynthTruth, SYNTH_FRAME_RATE,
};

/// Audio rate every encoder adapter expects.
pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Authenticity {
    Real,
    Fake,
}

impl Authenticity {
    /// BCE target: fake is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Authenticity::Real => 0.0,
            Authenticity::Fake => 1.0,
        }
    }

    pub fn from_prob(p: f64) -> Self {
        if p >= 0.5 {
            Authenticity::Fake
        } else {
            Authenticity::Real
        }
    }
}

/// `T` square face crops, `(T, C, H, W)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Tensor,
    frame_rate: f64,
    clip_id: String,
}

impl Clip {
    pub fn new(frames: Tensor, frame_rate: f64, clip_id: impl Into<String>) -> Result<Self> {
        let &[t, c, h, w] = frames.shape() else {
            return Err(shape_err(format!(
                "clip must be (T,C,H,W), got {:?}",
                frames.shape()
            )));
        };
        if t < 2 {
            return Err(Error::TooFewFrames(t));
        }
        if c != 1 && c != 3 {
            return Err(shape_err(format!("clip needs 1 or 3 channels, got {c}")));
        }
        if h != w {
            return Err(shape_err(format!("clip crops must be square, got {h}x{w}")));
        }
        if !frames.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Data("clip values must be finite and in [0,1]".into()));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Data(format!("bad frame rate {frame_rate}")));
        }
        Ok(Self {
            frames,
            frame_rate,
            clip_id: clip_id.into(),
        })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn size(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn duration(&self) -> f64 {
        self.num_frames() as f64 / self.frame_rate
    }
}

/// Mono samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
    clip_id: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32, clip_id: impl Into<String>) -> Result<Self> {
        if !samples.iter().all(|v| (-1.0..=1.0).contains(v)) {
            return Err(Error::Data("audio samples must be finite and in [-1,1]".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            clip_id: clip_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Durations agree within one frame period of `clip`.
    pub fn is_aligned_with(&self, clip: &Clip) -> bool {
        (self.duration() - clip.duration()).abs() <= 1.0 / clip.frame_rate() + 1e-9
    }

    /// Linear-interpolation resampling.
    pub fn resampled(&self, rate: u32) -> Waveform {
        if rate == self.sample_rate {
            return self.clone();
        }
        let n_out = (self.samples.len() as u64 * rate as u64 / self.sample_rate as u64) as usize;
        let ratio = self.sample_rate as f64 / rate as f64;
        let last = self.samples.len().saturating_sub(1);
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = (pos.floor() as usize).min(last);
                let i1 = (i0 + 1).min(last);
                let frac = pos - i0 as f64;
                self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac
            })
            .collect();
        Waveform {
            samples,
            sample_rate: rate,
            clip_id: self.clip_id.clone(),
        }
    }

    /// Keeps at most `seconds` of audio.
    pub fn truncated(&self, seconds: f64) -> Waveform {
        let n = ((seconds * self.sample_rate as f64).round() as usize).min(self.samples.len());
        Waveform {
            samples: self.samples[..n].to_vec(),
            sample_rate: self.sample_rate,
            clip_id: self.clip_id.clone(),
        }
    }
}

/// A clip with its driving audio and independent per-modality labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub clip: Clip,
    pub waveform: Waveform,
    pub video_label: Authenticity,
    pub audio_label: Authenticity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    pub frames: usize,
    pub size: usize,
    /// Take every `frame_stride`-th file.
    pub frame_stride: usize,
    /// Rate of the files on disk, before striding.
    pub frame_rate: f64,
}

impl LoadOptions {
    pub fn new(frames: usize, size: usize) -> Self {
        Self {
            frames,
            size,
            frame_stride: 1,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }
}

/// Image files of a frame directory in lexicographic file-name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false)
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads the first `frames` frames of `dir`, resized to `size`x`size` RGB.
pub fn load_clip(dir: &Path, frames: usize, size: usize) -> Result<Clip> {
    load_clip_with(dir, &LoadOptions::new(frames, size))
}

pub fn load_clip_with(dir: &Path, opts: &LoadOptions) -> Result<Clip> {
    if opts.frames < 2 {
        return Err(Error::TooFewFrames(opts.frames));
    }
    let stride = opts.frame_stride.max(1);
    let files = list_frames(dir)?;
    let needed = (opts.frames - 1) * stride + 1;
    if files.len() < needed {
        return Err(Error::MissingFrames {
            dir: dir.to_path_buf(),
            needed,
            found: files.len(),
        });
    }
    let s = opts.size;
    let mut data = Vec::with_capacity(opts.frames * 3 * s * s);
    for path in files.iter().step_by(stride).take(opts.frames) {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let rgb = if rgb.width() as usize == s && rgb.height() as usize == s {
            rgb
        } else {
            image::imageops::resize(&rgb, s as u32, s as u32, FilterType::Triangle)
        };
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    data.push(rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0);
                }
            }
        }
    }
    let frames = Tensor::new(&[opts.frames, 3, s, s], data)?;
    let clip_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Clip::new(frames, opts.frame_rate / stride as f64, clip_id)
}

/// Writes frames as `dir/%05d.png`.
pub fn save_clip(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let s = clip.size();
    let c = clip.channels();
    for t in 0..clip.num_frames() {
        let frame = clip.frames().index_axis0(t);
        let px = |ch: usize, x: u32, y: u32| {
            (frame.at(&[ch, y as usize, x as usize]) * 255.0).round().clamp(0.0, 255.0) as u8
        };
        let path = dir.join(format!("{t:05}.png"));
        let res = if c == 3 {
            image::RgbImage::from_fn(s as u32, s as u32, |x, y| {
                image::Rgb([px(0, x, y), px(1, x, y), px(2, x, y)])
            })
            .save(&path)
        } else {
            image::GrayImage::from_fn(s as u32, s as u32, |x, y| image::Luma([px(0, x, y)])).save(&path)
        };
        res.map_err(|e| Error::Decode {
            path: path.clone(),
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Reads 16-bit PCM mono WAV and resamples to [`SAMPLE_RATE`].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let decode = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| decode(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(decode(format!(
            "expected 16-bit PCM mono, got {} ch / {} bit / {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| decode(e.to_string()))?;
    let clip_id = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Waveform::new(samples, spec.sample_rate, clip_id)?.resampled(SAMPLE_RATE))
}

pub fn write_wav(w: &Waveform, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in w.samples() {
        writer
            .write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)
            .map_err(err)?;
    }
    writer.finalize().map_err(err)
}

/// Per-channel affine map applied by [`normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    /// `None` for a zero-variance channel, which is only centred.
    pub std: Option<f64>,
}

/// Standardised clip plus the statistics needed to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedClip {
    pub frames: Tensor,
    pub stats: Vec<ChannelStats>,
    pub frame_rate: f64,
    pub clip_id: String,
}

impl NormalizedClip {
    pub fn denormalize(&self) -> Result<Clip> {
        let &[t, c, h, w] = self.frames.shape() else {
            return Err(shape_err("normalized clip must be 4-d"));
        };
        let plane = h * w;
        let mut data = self.frames.data().to_vec();
        for ti in 0..t {
            for (ch, st) in self.stats.iter().enumerate().take(c) {
                let k = st.std.unwrap_or(1.0);
                for v in &mut data[(ti * c + ch) * plane..(ti * c + ch + 1) * plane] {
                    *v = (*v * k + st.mean).clamp(0.0, 1.0);
                }
            }
        }
        Clip::new(Tensor::new(self.frames.shape(), data)?, self.frame_rate, self.clip_id.clone())
    }
}

/// Per-channel standardisation over the whole clip (population variance).
pub fn normalize(clip: &Clip) -> NormalizedClip {
    let shape = clip.frames().shape().to_vec();
    let (t, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let src = clip.frames().data();
    let n = (t * plane) as f64;
    let mut data = src.to_vec();
    let mut stats = Vec::with_capacity(c);
    for ch in 0..c {
        let chan = || (0..t).flat_map(move |ti| src[(ti * c + ch) * plane..(ti * c + ch + 1) * plane].iter());
        let (lo, hi) = chan().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        // a constant channel must centre to exactly zero
        let mean = if lo == hi { lo } else { chan().sum::<f64>() / n };
        let var = chan().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = (var > 1e-12).then(|| var.sqrt());
        for ti in 0..t {
            for v in &mut data[(ti * c + ch) * plane..(ti * c + ch + 1) * plane] {
                *v = match std {
                    Some(s) => (*v - mean) / s,
                    None => *v - mean,
                };
            }
        }
        stats.push(ChannelStats { mean, std });
    }
    NormalizedClip {
        frames: Tensor::new(&shape, data).expect("same shape"),
        stats,
        frame_rate: clip.frame_rate(),
        clip_id: clip.clip_id().to_string(),
    }
}
