//! Deterministic rendered face proxies with a driving audio track.
//!
//! Each pair draws its shared content (colours, head path, pitch, envelope)
//! from stream 0 of a ChaCha8 generator seeded with `seed`; mode-specific
//! perturbations come from stream 1, so the three modes of one seed differ
//! only in the property under test.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use tfgc_autograd::Tensor;

use super::{Authenticity, Clip, LabeledPair, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const SYNTH_FRAME_RATE: f64 = 25.0;

const MAX_SCRAMBLE_TRIES: usize = 10_000;
const DESYNC_MAX_CORR: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Coherent,
    Jitter,
    Desync,
}

impl SynthMode {
    pub const ALL: [SynthMode; 3] = [SynthMode::Coherent, SynthMode::Jitter, SynthMode::Desync];

    pub fn name(self) -> &'static str {
        match self {
            SynthMode::Coherent => "coherent",
            SynthMode::Jitter => "jitter",
            SynthMode::Desync => "desync",
        }
    }

    pub fn video_label(self) -> Authenticity {
        match self {
            SynthMode::Coherent => Authenticity::Real,
            _ => Authenticity::Fake,
        }
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synth mode {s:?}")))
    }
}

/// Pixel-space rectangle, `[x0, x1) x [y0, y1)` in continuous coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MouthBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl MouthBox {
    /// Whether pixel `(x, y)` overlaps the box.
    pub fn touches(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        x + 1.0 > self.x0 && x < self.x1 && y + 1.0 > self.y0 && y < self.y1
    }
}

/// Generator-side ground truth for a synthetic pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub mode: SynthMode,
    /// Audio amplitude envelope sampled at frame centres.
    pub envelope: Vec<f64>,
    /// Mouth aperture per frame, in the envelope's units.
    pub aperture: Vec<f64>,
    pub mouth_boxes: Vec<MouthBox>,
    pub head_centers: Vec<(f64, f64)>,
}

/// See [`synth_pair_with_truth`].
pub fn synth_pair(seed: u64, mode: SynthMode, frames: usize, size: usize) -> Result<LabeledPair> {
    synth_pair_with_truth(seed, mode, frames, size).map(|(p, _)| p)
}

pub fn synth_pair_with_truth(
    seed: u64,
    mode: SynthMode,
    frames: usize,
    size: usize,
) -> Result<(LabeledPair, SynthTruth)> {
    if size < 16 {
        return Err(Error::Data(format!("synthetic size must be >= 16, got {size}")));
    }
    if frames < 4 {
        return Err(Error::Data(format!("synthetic clips need >= 4 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alt = ChaCha8Rng::seed_from_u64(seed);
    alt.set_stream(1);

    let s = size as f64;
    let background = jitter_colour(&mut rng, [0.22, 0.26, 0.30], 0.08);
    let skin = jitter_colour(&mut rng, [0.86, 0.68, 0.55], 0.06);
    let eye_colour = [0.08, 0.08, 0.12];
    let mouth_colour = [0.55, 0.10, 0.16];

    let rx = s * rng.random_range(0.28..0.32);
    let ry = s * rng.random_range(0.36..0.40);
    let amp_x = s * rng.random_range(0.02..0.05);
    let amp_y = s * rng.random_range(0.01..0.03);
    let cycles = rng.random_range(0.5..1.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let eye_r = s * 0.045;
    let f0 = rng.random_range(110.0..220.0);
    let envelope: Vec<f64> = (0..frames).map(|_| rng.random_range(0.1..1.0)).collect();

    let aperture = match mode {
        SynthMode::Desync => scramble_envelope(&envelope, &mut alt),
        _ => envelope.clone(),
    };

    let mut head_centers = Vec::with_capacity(frames);
    let mut eye_radii = Vec::with_capacity(frames);
    for t in 0..frames {
        let a = 2.0 * PI * cycles * t as f64 / frames as f64 + phase;
        let (mut cx, mut cy) = (s / 2.0 + amp_x * a.sin(), s / 2.0 + amp_y * a.cos());
        let mut er = eye_r;
        if mode == SynthMode::Jitter {
            cx += s * alt.random_range(-0.08..0.08);
            cy += s * alt.random_range(-0.08..0.08);
            er *= alt.random_range(0.5..1.6);
        }
        head_centers.push((cx, cy));
        eye_radii.push(er);
    }

    let mut data = Vec::with_capacity(frames * 3 * size * size);
    let mut mouth_boxes = Vec::with_capacity(frames);
    for t in 0..frames {
        let (cx, cy) = head_centers[t];
        let mouth_h = s * (0.02 + 0.14 * aperture[t]);
        let mouth_w = s * 0.22;
        let my = cy + s * 0.17;
        let mb = MouthBox {
            x0: cx - mouth_w / 2.0,
            x1: cx + mouth_w / 2.0,
            y0: my - mouth_h / 2.0,
            y1: my + mouth_h / 2.0,
        };
        mouth_boxes.push(mb);
        let eyes = [(cx - s * 0.12, cy - s * 0.08), (cx + s * 0.12, cy - s * 0.08)];
        let mut frame = vec![[0.0f64; 3]; size * size];
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut col = background;
                let head = ellipse_cover(px - cx, py - cy, rx, ry);
                blend(&mut col, skin, head);
                for &(ex, ey) in &eyes {
                    let d = ((px - ex).powi(2) + (py - ey).powi(2)).sqrt();
                    blend(&mut col, eye_colour, (eye_radii[t] - d + 0.5).clamp(0.0, 1.0));
                }
                let cover = span_cover(x as f64, mb.x0, mb.x1) * span_cover(y as f64, mb.y0, mb.y1);
                blend(&mut col, mouth_colour, cover);
                frame[y * size + x] = col;
            }
        }
        for c in 0..3 {
            data.extend(frame.iter().map(|p| p[c].clamp(0.0, 1.0)));
        }
    }

    let clip_id = format!("synth-{seed}-{}", mode.name());
    let clip = Clip::new(
        Tensor::new(&[frames, 3, size, size], data)?,
        SYNTH_FRAME_RATE,
        clip_id.clone(),
    )?;
    let samples = render_audio(&envelope, f0, frames);
    let waveform = Waveform::new(samples, SAMPLE_RATE, clip_id)?;
    let pair = LabeledPair {
        clip,
        waveform,
        video_label: mode.video_label(),
        audio_label: Authenticity::Real,
    };
    let truth = SynthTruth {
        mode,
        envelope,
        aperture,
        mouth_boxes,
        head_centers,
    };
    Ok((pair, truth))
}

fn jitter_colour(rng: &mut ChaCha8Rng, base: [f64; 3], spread: f64) -> [f64; 3] {
    base.map(|v| (v + rng.random_range(-spread..spread)).clamp(0.0, 1.0))
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d * (1.0 - alpha) + s * alpha;
    }
}

/// Soft ellipse edge about one pixel wide.
fn ellipse_cover(dx: f64, dy: f64, rx: f64, ry: f64) -> f64 {
    let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    ((1.0 - r) * rx.min(ry) + 0.5).clamp(0.0, 1.0)
}

/// Length of `[p, p+1] ∩ [a, b]`.
fn span_cover(p: f64, a: f64, b: f64) -> f64 {
    ((p + 1.0).min(b) - p.max(a)).max(0.0)
}

/// Harmonic tone whose amplitude follows `envelope`, linearly interpolated
/// between frame centres and held flat beyond the first and last.
fn render_audio(envelope: &[f64], f0: f64, frames: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let n = (frames as f64 / SYNTH_FRAME_RATE * sr).round() as usize;
    let harmonics = [(1.0, 0.6), (2.0, 0.25), (3.0, 0.15)];
    (0..n)
        .map(|i| {
            let time = i as f64 / sr;
            let u = (time * SYNTH_FRAME_RATE - 0.5).clamp(0.0, (frames - 1) as f64);
            let i0 = (u.floor() as usize).min(frames - 1);
            let i1 = (i0 + 1).min(frames - 1);
            let frac = u - i0 as f64;
            let amp = envelope[i0] * (1.0 - frac) + envelope[i1] * frac;
            let tone: f64 = harmonics
                .iter()
                .map(|&(k, g)| g * (2.0 * PI * k * f0 * time).sin())
                .sum();
            0.9 * amp * tone
        })
        .collect()
}

/// Phase-randomised surrogate of `env` with the same magnitude spectrum,
/// redrawn until it is decorrelated from `env`, then mapped affinely onto
/// the original value range.
fn scramble_envelope(env: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = env.len();
    let mean = env.iter().sum::<f64>() / n as f64;
    let mut spectrum: Vec<Complex<f64>> = env.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spectrum);
    let inverse = planner.plan_fft_inverse(n);
    let (lo, hi) = env.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..MAX_SCRAMBLE_TRIES {
        let mut buf = spectrum.clone();
        for k in 1..=(n - 1) / 2 {
            let rot = Complex::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
            buf[k] *= rot;
            buf[n - k] = buf[k].conj();
        }
        if n % 2 == 0 && rng.random_bool(0.5) {
            buf[n / 2] = -buf[n / 2];
        }
        inverse.process(&mut buf);
        let raw: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let (rlo, rhi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let out: Vec<f64> = if rhi - rlo > 1e-12 {
            raw.iter().map(|v| lo + (v - rlo) / (rhi - rlo) * (hi - lo)).collect()
        } else {
            vec![mean; n]
        };
        let c = pearson(&out, env).abs();
        if c < DESYNC_MAX_CORR {
            return out;
        }
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, out));
        }
    }
    best.map(|(_, v)| v).unwrap_or_else(|| env.to_vec())
}

/// Pearson correlation; 0 when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
