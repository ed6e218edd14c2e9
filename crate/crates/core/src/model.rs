//! The full detector: preprocessing into per-sample tensors and the
//! toggleable forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tfgc_autograd::{Conv2dSpec, Tape, Tensor, Var};

use crate::audio::{encode, AudioStream, ConvEncoder, EncoderAdapter, LogMel, AUDIO_GRID};
use crate::config::{AdapterKind, RunConfig};
use crate::dctam::{Dctam, VarianceMap};
use crate::error::{shape_err, Error, Result};
use crate::head::{joint_loss, DetectionOutput, FusionHead};
use crate::lfs::lfs_features;
use crate::media_io::{normalize, Authenticity, LabeledPair, SynthMode, SAMPLE_RATE};
use crate::params::{glorot, he, Bound, ParamId, ParamStore};
use crate::rsfdm::Rsfdm;
use crate::vafm::Vafm;

/// Everything the network consumes for one clip, precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    /// Standardised frames, `(T, 3, S, S)`.
    pub frames: Tensor,
    /// Standardised encoder output, `(T_a, D)`.
    pub audio: Tensor,
    /// `(T, bands, 8, 8)` when the frequency stream is on.
    pub freq: Option<Tensor>,
    pub labels: (Authenticity, Authenticity),
    pub mode: Option<SynthMode>,
}

/// Turns media into [`Sample`]s with a fixed encoder and LFS settings.
pub struct Preprocessor {
    adapter: Box<dyn EncoderAdapter>,
    config: RunConfig,
}

impl std::fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preprocessor")
            .field("adapter", &self.adapter.name())
            .finish()
    }
}

/// Per-feature mean/variance normalisation over time. Features that never
/// change are only centred.
fn standardise(x: &Tensor) -> Tensor {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let data = x.data();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for row in data.chunks_exact(d) {
        row.iter().zip(&mut mean).for_each(|(v, m)| *m += v / n as f64);
    }
    for row in data.chunks_exact(d) {
        for j in 0..d {
            var[j] += (row[j] - mean[j]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = var.iter().map(|&v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    Tensor::from_fn(&[n, d], |i| (x.at(i) - mean[i[1]]) * scale[i[1]])
}

impl Preprocessor {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let adapter: Box<dyn EncoderAdapter> = match config.audio.adapter {
            AdapterKind::Logmel => Box::new(LogMel::default()),
            AdapterKind::Pretrained => {
                let path = config
                    .audio
                    .pretrained_path
                    .as_ref()
                    .ok_or_else(|| Error::Config("audio.pretrained_path is unset".into()))?;
                Box::new(ConvEncoder::load(path)?)
            }
        };
        Ok(Self {
            adapter,
            config: config.clone(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.adapter.output_dim()
    }

    pub fn prepare(&self, pair: &LabeledPair, mode: Option<SynthMode>) -> Result<Sample> {
        let clip = &pair.clip;
        if clip.channels() != 3 {
            return Err(shape_err(format!("detector expects RGB clips, got {} channels", clip.channels())));
        }
        let wave = pair.waveform.resampled(SAMPLE_RATE);
        let feats = encode(&wave, self.adapter.as_ref())?;
        let freq = if self.config.modules.lfs {
            Some(lfs_features(clip.frames(), &self.config.lfs, AUDIO_GRID, AUDIO_GRID)?)
        } else {
            None
        };
        Ok(Sample {
            clip_id: clip.clip_id().to_string(),
            frames: normalize(clip).frames,
            audio: standardise(&feats.data),
            freq,
            labels: (pair.video_label, pair.audio_label),
            mode,
        })
    }
}

/// Tape handles produced by [`Detector::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    pub video_logit: Var,
    pub audio_logit: Var,
    /// Last visual feature map, `(T, C_v, S/2, S/2)`.
    pub visual_map: Var,
    pub variance: Option<VarianceMap>,
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub config: RunConfig,
    pub store: ParamStore,
    rsfdm: Option<Rsfdm>,
    stem: [ParamId; 2],
    dctam: Option<Dctam>,
    audio: AudioStream,
    vafm: Option<Vafm>,
    bypass: Option<[ParamId; 2]>,
    head: FusionHead,
}

impl Detector {
    /// Deterministic initialisation from `config.seed`.
    pub fn new(config: &RunConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let cv = config.model.visual_channels;
        let ca = config.model.audio_channels;
        let width = config.vafm.width;
        let m = config.modules;

        let rsfdm = m.rsfdm.then(|| Rsfdm::new(&mut store, 3));
        let stem = [
            store.add("stem.w", he(&[cv, 3, 3, 3], 27, &mut rng)),
            store.add("stem.b", Tensor::zeros(&[cv])),
        ];
        let dctam = m
            .dctam
            .then(|| Dctam::new(&mut store, cv, config.dctam.k_fraction, &mut rng));
        let audio = AudioStream::new(&mut store, feature_dim, config.audio.res_dim, ca, &mut rng);
        let (vafm, bypass) = if m.vafm {
            (Some(Vafm::new(&mut store, ca, cv, config.vafm.clone(), &mut rng)), None)
        } else {
            let ids = [
                store.add("bypass.w", glorot(&[width, cv], cv, width, &mut rng)),
                store.add("bypass.b", Tensor::zeros(&[width])),
            ];
            (None, Some(ids))
        };
        let head_in = width + if m.lfs { config.lfs.bands } else { 0 };
        let head = FusionHead::new(&mut store, head_in, config.head.clone(), &mut rng);
        Ok(Self {
            config: config.clone(),
            store,
            rsfdm,
            stem,
            dctam,
            audio,
            vafm,
            bypass,
            head,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, sample: &Sample) -> Result<Forward> {
        let shape = sample.frames.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(shape_err(format!("frames must be (T,3,S,S), got {shape:?}")));
        }
        let t = shape[0];
        let mut x = tape.constant(sample.frames.clone());
        if let Some(r) = &self.rsfdm {
            x = r.forward(tape, bound, x)?;
        }
        let spec = Conv2dSpec::same(3, 3).with_stride(2);
        let v = tape.conv2d(x, bound[self.stem[0]], Some(bound[self.stem[1]]), spec)?;
        let mut v = tape.relu(v);
        let mut variance = None;
        if let Some(d) = &self.dctam {
            let (out, vmap) = d.forward(tape, bound, v)?;
            v = out;
            variance = Some(vmap);
        }
        let visual_map = v;

        let raw = tape.constant(sample.audio.clone());
        let audio = self.audio.forward(tape, bound, raw, t)?;

        let fused = match (&self.vafm, &self.bypass) {
            (Some(vafm), _) => vafm.forward(tape, bound, audio.map, visual_map)?.fused,
            (None, Some([w, b])) => {
                let side = tape.shape(visual_map)[2];
                let pooled = match side / AUDIO_GRID {
                    0 => return Err(shape_err(format!("visual map {side} smaller than grid"))),
                    1 => visual_map,
                    f => tape.avg_pool2d(visual_map, f)?,
                };
                tape.channel_mix(pooled, bound[*w], Some(bound[*b]))?
            }
            (None, None) => unreachable!("either fusion or bypass is built"),
        };

        let freq = match (&sample.freq, self.config.modules.lfs) {
            (Some(f), true) => Some(tape.constant(f.clone())),
            (None, true) => return Err(Error::Data(format!("{}: missing frequency features", sample.clip_id))),
            (_, false) => None,
        };
        let video_logit = self.head.forward(tape, bound, fused, freq)?;
        Ok(Forward {
            video_logit,
            audio_logit: audio.logit,
            visual_map,
            variance,
        })
    }

    /// Inference with frozen parameters.
    pub fn predict(&self, sample: &Sample) -> Result<DetectionOutput> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, sample)?;
        Ok(DetectionOutput::from_logits(
            tape.value(out.video_logit).item(),
            tape.value(out.audio_logit).item(),
        ))
    }

    /// Joint loss, its gradient for every parameter (store order) and the
    /// prediction.
    pub fn loss_and_grads(&self, sample: &Sample) -> Result<(f64, Vec<Tensor>, DetectionOutput)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, sample)?;
        let loss = joint_loss(
            &mut tape,
            out.video_logit,
            out.audio_logit,
            sample.labels,
            self.config.loss.audio_weight,
        )?;
        let value = tape.value(loss).item();
        let pred = DetectionOutput::from_logits(
            tape.value(out.video_logit).item(),
            tape.value(out.audio_logit).item(),
        );
        let mut grads = tape.backward(loss)?;
        let g = bound
            .vars()
            .iter()
            .zip(self.store.values())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, g, pred))
    }

    /// `|Σ_c ∂logit/∂A ⊙ A|` at the visual map, scaled to `[0, 1]` over the
    /// clip, shape `(T, S/2, S/2)`.
    pub fn saliency(&self, sample: &Sample) -> Result<(DetectionOutput, Tensor)> {
        let mut tape = Tape::new();
        // parameters must be leaves for gradient to flow back to the map
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, sample)?;
        tape.retain_grad(out.visual_map);
        let pred = DetectionOutput::from_logits(
            tape.value(out.video_logit).item(),
            tape.value(out.audio_logit).item(),
        );
        let act = tape.value(out.visual_map).clone();
        let &[t, c, h, w] = act.shape() else {
            return Err(shape_err("visual map must be 4-d"));
        };
        let grads = tape.backward(out.video_logit)?;
        let g = grads.get_or_zeros(out.visual_map, &act);
        let mut cam = vec![0.0; t * h * w];
        for ti in 0..t {
            for ch in 0..c {
                let base = (ti * c + ch) * h * w;
                for p in 0..h * w {
                    cam[ti * h * w + p] += g.data()[base + p] * act.data()[base + p];
                }
            }
        }
        cam.iter_mut().for_each(|v| *v = v.abs());
        let peak = cam.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            cam.iter_mut().for_each(|v| *v /= peak);
        }
        Ok((pred, Tensor::new(&[t, h, w], cam)?))
    }
}

/// Nearest-neighbour upsampling of `(T, h, w)` maps by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let &[t, h, w] = x.shape() else {
        return Err(shape_err("saliency must be (T,h,w)"));
    };
    let (oh, ow) = (h * factor, w * factor);
    Ok(Tensor::from_fn(&[t, oh, ow], |i| x.at(&[i[0], i[1] / factor, i[2] / factor])))
}
