//! Audio stream: pluggable frame encoder, residual refinement, an
//! authenticity head and the per-frame audio map handed to fusion.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use tfgc_autograd::{Conv2dSpec, Tape, Tensor, Var};

use crate::error::{io_err, shape_err, Error, Result};
use crate::media_io::{Waveform, SAMPLE_RATE};
use crate::params::{glorot, he, Bound, ParamId, ParamStore};

/// Side of the square grid each audio step is laid out on.
pub const AUDIO_GRID: usize = 8;

/// Encoder output, `(T_a, D_a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatureSeq {
    pub data: Tensor,
    /// Seconds per step.
    pub hop: f64,
}

impl AudioFeatureSeq {
    pub fn steps(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[1]
    }
}

/// A frozen waveform-to-sequence encoder.
pub trait EncoderAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn output_dim(&self) -> usize;
    /// Samples per output step.
    fn hop(&self) -> usize;
    fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }
    /// `(floor(N / hop), output_dim)` features of a waveform at [`Self::sample_rate`].
    fn encode_samples(&self, samples: &[f64]) -> Result<Tensor>;
}

/// Runs `adapter` on `w`, which must already be at the adapter's rate.
pub fn encode(w: &Waveform, adapter: &dyn EncoderAdapter) -> Result<AudioFeatureSeq> {
    if w.sample_rate() != adapter.sample_rate() {
        return Err(Error::Data(format!(
            "waveform at {} Hz, {} expects {} Hz",
            w.sample_rate(),
            adapter.name(),
            adapter.sample_rate()
        )));
    }
    let hop = adapter.hop();
    if w.samples().len() < hop {
        return Err(Error::AudioTooShort {
            samples: w.samples().len(),
            hop,
        });
    }
    Ok(AudioFeatureSeq {
        data: adapter.encode_samples(w.samples())?,
        hop: hop as f64 / adapter.sample_rate() as f64,
    })
}

pub const LOG_FLOOR: f64 = 1e-10;

/// Log-mel filterbank: Hann window, power spectrum, HTK-scale triangular
/// filters from 0 Hz to Nyquist, `log10(max(e, 1e-10))`.
pub struct LogMel {
    mels: usize,
    window: Vec<f64>,
    hop: usize,
    n_fft: usize,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("mels", &self.mels)
            .field("window", &self.window.len())
            .field("hop", &self.hop)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new(64, 400, 320, 512)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl LogMel {
    pub fn new(mels: usize, window: usize, hop: usize, n_fft: usize) -> Self {
        assert!(window <= n_fft && hop > 0 && mels > 0);
        let hann = (0..window)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / window as f64).cos())
            .collect();
        let bins = n_fft / 2 + 1;
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (mels + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / n_fft as f64;
        let filters = (0..mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .filter_map(|k| {
                        let f = bin_hz(k);
                        let wgt = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (wgt > 0.0).then_some((k, wgt))
                    })
                    .collect()
            })
            .collect();
        Self {
            mels,
            window: hann,
            hop,
            n_fft,
            filters,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }
}

impl EncoderAdapter for LogMel {
    fn name(&self) -> &str {
        "logmel"
    }

    fn output_dim(&self) -> usize {
        self.mels
    }

    fn hop(&self) -> usize {
        self.hop
    }

    fn encode_samples(&self, samples: &[f64]) -> Result<Tensor> {
        let steps = samples.len() / self.hop;
        let mut out = Vec::with_capacity(steps * self.mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for s in 0..steps {
            let start = s * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let x = if i < self.window.len() {
                    samples.get(start + i).copied().unwrap_or(0.0) * self.window[i]
                } else {
                    0.0
                };
                *b = Complex::new(x, 0.0);
            }
            self.fft.process(&mut buf);
            for filt in &self.filters {
                let e: f64 = filt.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum();
                out.push(e.max(LOG_FLOOR).log10());
            }
        }
        Ok(Tensor::new(&[steps, self.mels], out)?)
    }
}

/// One strided 1-D convolution of a [`ConvEncoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `(out, in, kernel)` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Frozen stack of strided 1-D convolutions with GELU, loaded from a JSON
/// weight file. Stands in for a pretrained speech feature encoder; the
/// product of the strides is the hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub name: String,
    pub layers: Vec<ConvLayer>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh())
}

impl ConvEncoder {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let enc: ConvEncoder = serde_json::from_str(&text)?;
        enc.check()?;
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(io_err(path))
    }

    /// Random weights with the given `(channels, kernel, stride)` layers.
    pub fn random(layers: &[(usize, usize, usize)], rng: &mut impl Rng) -> Self {
        let mut c_in = 1;
        let layers = layers
            .iter()
            .map(|&(c_out, kernel, stride)| {
                let fan = c_in * kernel;
                let layer = ConvLayer {
                    in_channels: c_in,
                    out_channels: c_out,
                    kernel,
                    stride,
                    weight: glorot(&[c_out, c_in, kernel], fan, c_out * kernel, rng).into_data(),
                    bias: vec![0.0; c_out],
                };
                c_in = c_out;
                layer
            })
            .collect();
        Self {
            name: "conv-encoder".into(),
            layers,
        }
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("encoder has no layers".into()));
        }
        let mut c = 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_channels != c
                || l.kernel < l.stride
                || l.stride == 0
                || l.weight.len() != l.out_channels * l.in_channels * l.kernel
                || l.bias.len() != l.out_channels
            {
                return Err(Error::Config(format!("encoder layer {i} is malformed")));
            }
            c = l.out_channels;
        }
        Ok(())
    }
}

impl EncoderAdapter for ConvEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    fn hop(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    fn encode_samples(&self, samples: &[f64]) -> Result<Tensor> {
        let steps = samples.len() / self.hop();
        // (channels, length), padded on the right so every layer keeps
        // exactly len / stride outputs
        let mut x: Vec<Vec<f64>> = vec![samples.to_vec()];
        for l in &self.layers {
            let len = x[0].len() / l.stride;
            let mut y = vec![vec![0.0; len]; l.out_channels];
            for (o, row) in y.iter_mut().enumerate() {
                for (p, out) in row.iter_mut().enumerate() {
                    let mut acc = l.bias[o];
                    for (c, xc) in x.iter().enumerate() {
                        let w = &l.weight[(o * l.in_channels + c) * l.kernel..][..l.kernel];
                        for (k, wk) in w.iter().enumerate() {
                            acc += wk * xc.get(p * l.stride + k).copied().unwrap_or(0.0);
                        }
                    }
                    *out = gelu(acc);
                }
            }
            x = y;
        }
        let d = x.len();
        let mut out = Vec::with_capacity(steps * d);
        for t in 0..steps {
            for row in &x {
                out.push(row.get(t).copied().unwrap_or(0.0));
            }
        }
        Ok(Tensor::new(&[steps, d], out)?)
    }
}

/// Fractional audio-step positions sampled for each of `t` video steps:
/// `u = (i + 0.5) / t * t_a - 0.5`, clamped to the valid range.
pub fn alignment_positions(t: usize, t_a: usize) -> Vec<f64> {
    (0..t)
        .map(|i| ((i as f64 + 0.5) / t as f64 * t_a as f64 - 0.5).clamp(0.0, (t_a - 1) as f64))
        .collect()
}

/// `(t, t_a)` linear-interpolation matrix for [`alignment_positions`].
pub fn interpolation_matrix(t: usize, t_a: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t_a]);
    for (i, u) in alignment_positions(t, t_a).into_iter().enumerate() {
        let j0 = u.floor() as usize;
        let j1 = (j0 + 1).min(t_a - 1);
        let frac = u - j0 as f64;
        m.set(&[i, j0], m.at(&[i, j0]) + 1.0 - frac);
        m.set(&[i, j1], m.at(&[i, j1]) + frac);
    }
    m
}

/// Handles for one residual block `x + W₂ relu(W₁ x + b₁) + b₂`.
#[derive(Clone, Copy, Debug)]
pub struct ResidualVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub fn residual_block(tape: &mut Tape, x: Var, p: &ResidualVars) -> Result<Var> {
    let h = tape.linear(x, p.w1, Some(p.b1))?;
    let h = tape.relu(h);
    let y = tape.linear(h, p.w2, Some(p.b2))?;
    Ok(tape.add(x, y)?)
}

/// Temporal mean of `(T_a, D)` features, then `(1, D)` linear to a `[1]` logit.
pub fn audio_head(tape: &mut Tape, f_a: Var, w: Var, b: Var) -> Result<Var> {
    let d = tape.shape(f_a)[1];
    let pooled = tape.mean_axis(f_a, 0)?;
    let row = tape.reshape(pooled, &[1, d])?;
    let logit = tape.linear(row, w, Some(b))?;
    Ok(tape.reshape(logit, &[1])?)
}

/// Handles for the two 3x3 convolutions producing the audio map.
#[derive(Clone, Copy, Debug)]
pub struct MapVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Resamples `(T_a, D)` onto `t` steps, lays each step on an
/// [`AUDIO_GRID`]² grid (zero-padding `D` to a multiple of 64) and applies
/// conv-relu-conv. Output `(t, C_a, 8, 8)`.
pub fn intermediate_features(tape: &mut Tape, f_a: Var, t: usize, p: &MapVars) -> Result<Var> {
    let &[t_a, d] = tape.shape(f_a) else {
        return Err(shape_err(format!("audio features must be 2-d, got {:?}", tape.shape(f_a))));
    };
    if t_a == 0 {
        return Err(Error::AudioTooShort { samples: 0, hop: 1 });
    }
    let cell = AUDIO_GRID * AUDIO_GRID;
    let c_in = d.div_ceil(cell);
    let interp = tape.constant(interpolation_matrix(t, t_a));
    let mut aligned = tape.matmul(interp, f_a)?;
    if c_in * cell != d {
        let pad = tape.constant(Tensor::zeros(&[t, c_in * cell - d]));
        aligned = tape.concat(&[aligned, pad], 1)?;
    }
    let grid = tape.reshape(aligned, &[t, c_in, AUDIO_GRID, AUDIO_GRID])?;
    let h = tape.conv2d(grid, p.w1, Some(p.b1), Conv2dSpec::same(3, 3))?;
    let h = tape.relu(h);
    Ok(tape.conv2d(h, p.w2, Some(p.b2), Conv2dSpec::same(3, 3))?)
}

/// Learnable part of the audio stream.
#[derive(Clone, Debug)]
pub struct AudioStream {
    blocks: [[ParamId; 4]; 2],
    head: [ParamId; 2],
    map: [ParamId; 4],
    pub feature_dim: usize,
    pub map_channels: usize,
}

/// Outputs of [`AudioStream::forward`].
#[derive(Clone, Copy, Debug)]
pub struct AudioOutputs {
    pub features: Var,
    pub logit: Var,
    pub map: Var,
}

impl AudioStream {
    pub fn new(
        store: &mut ParamStore,
        feature_dim: usize,
        res_dim: usize,
        map_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = feature_dim;
        let blocks = [0, 1].map(|i| {
            [
                store.add(format!("audio.res{i}.w1"), he(&[res_dim, d], d, rng)),
                store.add(format!("audio.res{i}.b1"), Tensor::zeros(&[res_dim])),
                store.add(
                    format!("audio.res{i}.w2"),
                    glorot(&[d, res_dim], res_dim, d, rng).scale(0.1),
                ),
                store.add(format!("audio.res{i}.b2"), Tensor::zeros(&[d])),
            ]
        });
        let head = [
            store.add("audio.head.w", glorot(&[1, d], d, 1, rng)),
            store.add("audio.head.b", Tensor::zeros(&[1])),
        ];
        let c_in = d.div_ceil(AUDIO_GRID * AUDIO_GRID);
        let c = map_channels;
        let map = [
            store.add("audio.map.w1", he(&[c, c_in, 3, 3], 9 * c_in, rng)),
            store.add("audio.map.b1", Tensor::zeros(&[c])),
            store.add("audio.map.w2", glorot(&[c, c, 3, 3], 9 * c, 9 * c, rng)),
            store.add("audio.map.b2", Tensor::zeros(&[c])),
        ];
        Self {
            blocks,
            head,
            map,
            feature_dim,
            map_channels,
        }
    }

    /// `raw` is a constant `(T_a, D)` encoder output; `t` is the video length.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, raw: Var, t: usize) -> Result<AudioOutputs> {
        if tape.shape(raw).get(1) != Some(&self.feature_dim) {
            return Err(shape_err(format!(
                "audio features {:?}, expected width {}",
                tape.shape(raw),
                self.feature_dim
            )));
        }
        let mut x = raw;
        for ids in &self.blocks {
            let p = ResidualVars {
                w1: bound[ids[0]],
                b1: bound[ids[1]],
                w2: bound[ids[2]],
                b2: bound[ids[3]],
            };
            x = residual_block(tape, x, &p)?;
        }
        let logit = audio_head(tape, x, bound[self.head[0]], bound[self.head[1]])?;
        let mv = MapVars {
            w1: bound[self.map[0]],
            b1: bound[self.map[1]],
            w2: bound[self.map[2]],
            b2: bound[self.map[3]],
        };
        let map = intermediate_features(tape, x, t, &mv)?;
        Ok(AudioOutputs {
            features: x,
            logit,
            map,
        })
    }
}
