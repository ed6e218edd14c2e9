//! Video classification head over fused and frequency features, and the
//! joint audio/video objective.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tfgc_autograd::{sigmoid, Conv2dSpec, Tape, Tensor, Var};

use crate::error::{shape_err, Result};
use crate::media_io::Authenticity;
use crate::params::{glorot, he, Bound, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutput {
    pub video_logit: f64,
    pub audio_logit: f64,
    pub video_prob: f64,
    pub audio_prob: f64,
}

impl DetectionOutput {
    pub fn from_logits(video_logit: f64, audio_logit: f64) -> Self {
        Self {
            video_logit,
            audio_logit,
            video_prob: sigmoid(video_logit),
            audio_prob: sigmoid(audio_logit),
        }
    }

    pub fn video_label(&self) -> Authenticity {
        Authenticity::from_prob(self.video_prob)
    }

    pub fn audio_label(&self) -> Authenticity {
        Authenticity::from_prob(self.audio_prob)
    }
}

/// Handles for one depthwise-separable block.
#[derive(Clone, Copy, Debug)]
pub struct SeparableVars {
    /// `(C, 1, k, k)` and `[C]`.
    pub depth_w: Var,
    pub depth_b: Var,
    /// `(C_out, C)` and `[C_out]`.
    pub point_w: Var,
    pub point_b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub blocks: [SeparableVars; 2],
    /// `(1, width)` and `[1]`.
    pub fc_w: Var,
    pub fc_b: Var,
}

fn separable(tape: &mut Tape, x: Var, p: &SeparableVars) -> Result<Var> {
    let c = tape.shape(x)[1];
    let k = tape.shape(p.depth_w)[2];
    let spec = Conv2dSpec::same(k, k).depthwise(c);
    let h = tape.conv2d(x, p.depth_w, Some(p.depth_b), spec)?;
    let h = tape.channel_mix(h, p.point_w, Some(p.point_b))?;
    Ok(tape.relu(h))
}

/// `concat(F_va, F_freq)` → two separable blocks → mean over `(T, H', W')`
/// → linear. Returns a `[1]` logit.
pub fn head_forward(tape: &mut Tape, f_va: Var, freq: Option<Var>, p: &HeadVars) -> Result<Var> {
    let mut x = f_va;
    if let Some(fq) = freq {
        let (a, b) = (tape.shape(f_va), tape.shape(fq));
        if a.len() != 4 || b.len() != 4 || a[0] != b[0] || a[2..] != b[2..] {
            return Err(shape_err(format!("cannot concatenate {a:?} with frequency features {b:?}")));
        }
        x = tape.concat(&[f_va, fq], 1)?;
    }
    for block in &p.blocks {
        x = separable(tape, x, block)?;
    }
    let width = tape.shape(x)[1];
    let pooled = tape.mean_axis(x, 3)?;
    let pooled = tape.mean_axis(pooled, 2)?;
    let pooled = tape.mean_axis(pooled, 0)?;
    let row = tape.reshape(pooled, &[1, width])?;
    let logit = tape.linear(row, p.fc_w, Some(p.fc_b))?;
    Ok(tape.reshape(logit, &[1])?)
}

/// `BCE(video) + w_a · BCE(audio)`, fake being the positive class.
pub fn joint_loss(
    tape: &mut Tape,
    video_logit: Var,
    audio_logit: Var,
    labels: (Authenticity, Authenticity),
    audio_weight: f64,
) -> Result<Var> {
    let lv = tape.bce_with_logits(video_logit, labels.0.target())?;
    let la = tape.bce_with_logits(audio_logit, labels.1.target())?;
    let la = tape.scale(la, audio_weight);
    Ok(tape.add(lv, la)?)
}

/// Numerically stable `BCE(sigmoid(z), y)`.
pub fn bce(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// [`joint_loss`] on plain values.
pub fn joint_loss_value(out: &DetectionOutput, labels: (Authenticity, Authenticity), audio_weight: f64) -> f64 {
    bce(out.video_logit, labels.0.target()) + audio_weight * bce(out.audio_logit, labels.1.target())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub width: usize,
    /// Depthwise kernel size; 1 makes the head purely pointwise.
    pub kernel: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { width: 128, kernel: 3 }
    }
}

#[derive(Clone, Debug)]
pub struct FusionHead {
    blocks: [[ParamId; 4]; 2],
    fc: [ParamId; 2],
    pub in_channels: usize,
    pub config: HeadConfig,
}

impl FusionHead {
    pub fn new(store: &mut ParamStore, in_channels: usize, config: HeadConfig, rng: &mut impl Rng) -> Self {
        let (k, w) = (config.kernel, config.width);
        let mut block = |i: usize, c: usize, rng: &mut _| {
            [
                store.add(format!("head.block{i}.depth.w"), he(&[c, 1, k, k], k * k, rng)),
                store.add(format!("head.block{i}.depth.b"), Tensor::zeros(&[c])),
                store.add(format!("head.block{i}.point.w"), he(&[w, c], c, rng)),
                store.add(format!("head.block{i}.point.b"), Tensor::zeros(&[w])),
            ]
        };
        let blocks = [block(0, in_channels, rng), block(1, w, rng)];
        let fc = [
            store.add("head.fc.w", glorot(&[1, w], w, 1, rng)),
            store.add("head.fc.b", Tensor::zeros(&[1])),
        ];
        Self {
            blocks,
            fc,
            in_channels,
            config,
        }
    }

    pub fn vars(&self, bound: &Bound) -> HeadVars {
        let sep = |ids: &[ParamId; 4]| SeparableVars {
            depth_w: bound[ids[0]],
            depth_b: bound[ids[1]],
            point_w: bound[ids[2]],
            point_b: bound[ids[3]],
        };
        HeadVars {
            blocks: [sep(&self.blocks[0]), sep(&self.blocks[1])],
            fc_w: bound[self.fc[0]],
            fc_b: bound[self.fc[1]],
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f_va: Var, freq: Option<Var>) -> Result<Var> {
        head_forward(tape, f_va, freq, &self.vars(bound))
    }
}
