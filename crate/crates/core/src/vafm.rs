//! Audio-visual fusion: multi-head temporal cross-attention with audio
//! queries against visual keys, plus a residual value path.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tfgc_autograd::{cross_attention_weights, Tape, Tensor, Var};

use crate::error::{shape_err, Error, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};

/// Scale applied to the attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divisor {
    /// `sqrt(d · H' · W')`, the flattened per-head token size.
    #[default]
    Sqrt,
    /// Feature-map height `H'`.
    Height,
}

impl Divisor {
    pub fn value(self, head_dim: usize, h: usize, w: usize) -> f64 {
        match self {
            Divisor::Sqrt => ((head_dim * h * w) as f64).sqrt(),
            Divisor::Height => h as f64,
        }
    }
}

/// Query, key and value, each `(T, width, H', W')`; heads are contiguous
/// channel blocks of `width / heads`.
#[derive(Clone, Copy, Debug)]
pub struct FusionState {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QkvVars {
    /// `(width, C_a)` and `[width]`: audio channel alignment.
    pub align_w: Var,
    pub align_b: Var,
    /// `(width, width, 3, 3, 3)`.
    pub query_w: Var,
    pub query_b: Var,
    /// `(width, C_v, 3, 3, 3)`.
    pub key_w: Var,
    pub key_b: Var,
    /// `(width, C_a + C_v)` over `concat(audio, visual)`.
    pub value_w: Var,
    pub value_b: Var,
}

/// Splits `(T, heads·d, H, W)` into `(heads, d, T, H, W)`.
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let &[t, c, h, w] = x.shape() else {
        return Err(shape_err(format!("expected (T,C,H,W), got {:?}", x.shape())));
    };
    if heads == 0 || c % heads != 0 {
        return Err(shape_err(format!("{c} channels not divisible into {heads} heads")));
    }
    let d = c / heads;
    Ok(x.reshape(&[t, heads, d, h, w])?.permute(&[1, 2, 0, 3, 4])?)
}

/// Average-pools the visual map onto the audio grid and builds Q, K, V.
pub fn build_qkv(
    tape: &mut Tape,
    audio_map: Var,
    visual_map: Var,
    p: &QkvVars,
    heads: usize,
) -> Result<FusionState> {
    let sa = tape.shape(audio_map).to_vec();
    let sv = tape.shape(visual_map).to_vec();
    if sa.len() != 4 || sv.len() != 4 {
        return Err(shape_err(format!("fusion inputs must be 4-d, got {sa:?} and {sv:?}")));
    }
    if sa[0] != sv[0] {
        return Err(Error::Alignment(format!(
            "audio has {} steps, video has {}",
            sa[0], sv[0]
        )));
    }
    let (gh, gw) = (sa[2], sa[3]);
    if sv[2] % gh != 0 || sv[3] % gw != 0 || sv[2] / gh != sv[3] / gw {
        return Err(shape_err(format!(
            "visual {}x{} does not pool onto audio grid {gh}x{gw}",
            sv[2], sv[3]
        )));
    }
    let visual = match sv[2] / gh {
        1 => visual_map,
        f => tape.avg_pool2d(visual_map, f)?,
    };
    let width = tape.shape(p.align_w)[0];
    if heads == 0 || width % heads != 0 {
        return Err(shape_err(format!("width {width} not divisible into {heads} heads")));
    }
    let aligned = tape.channel_mix(audio_map, p.align_w, Some(p.align_b))?;
    let query = tape.conv3d(aligned, p.query_w, Some(p.query_b))?;
    let key = tape.conv3d(visual, p.key_w, Some(p.key_b))?;
    let both = tape.concat(&[audio_map, visual], 1)?;
    let value = tape.channel_mix(both, p.value_w, Some(p.value_b))?;
    Ok(FusionState {
        query,
        key,
        value,
        heads,
    })
}

/// Per-head attention weights `(heads, T, T)` of a state.
pub fn attention_weights(tape: &Tape, state: &FusionState, divisor: Divisor) -> Result<Tensor> {
    let s = tape.shape(state.query);
    let d = s[1] / state.heads;
    let div = divisor.value(d, s[2], s[3]);
    Ok(cross_attention_weights(
        tape.value(state.query),
        tape.value(state.key),
        state.heads,
        div,
    )?)
}

/// Attended values, heads concatenated back to `(T, width, H', W')`.
pub fn cross_attend(tape: &mut Tape, state: &FusionState, divisor: Divisor) -> Result<Var> {
    let s = tape.shape(state.query).to_vec();
    let d = s[1] / state.heads;
    let div = divisor.value(d, s[2], s[3]);
    Ok(tape.cross_attention(state.query, state.key, state.value, state.heads, div)?)
}

#[derive(Clone, Copy, Debug)]
pub struct FuseVars {
    pub out_w: Var,
    pub out_b: Var,
    pub psi_w1: Var,
    pub psi_b1: Var,
    pub psi_w2: Var,
    pub psi_b2: Var,
}

/// `Ψ(V) + out_proj(attended)` with `Ψ(V) = V + pw₂(relu(pw₁ V))`.
pub fn fuse(tape: &mut Tape, attended: Var, value: Var, p: &FuseVars) -> Result<Var> {
    let h = tape.channel_mix(value, p.psi_w1, Some(p.psi_b1))?;
    let h = tape.relu(h);
    let r = tape.channel_mix(h, p.psi_w2, Some(p.psi_b2))?;
    let psi = tape.add(value, r)?;
    let proj = tape.channel_mix(attended, p.out_w, Some(p.out_b))?;
    Ok(tape.add(psi, proj)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VafmConfig {
    pub heads: usize,
    pub width: usize,
    pub divisor: Divisor,
}

impl Default for VafmConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            width: 64,
            divisor: Divisor::Sqrt,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Vafm {
    qkv: [ParamId; 8],
    fuse: [ParamId; 6],
    pub config: VafmConfig,
}

#[derive(Clone, Copy, Debug)]
pub struct VafmOutputs {
    pub fused: Var,
    pub state: FusionState,
}

impl Vafm {
    pub fn new(
        store: &mut ParamStore,
        audio_channels: usize,
        visual_channels: usize,
        config: VafmConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let (ca, cv, w) = (audio_channels, visual_channels, config.width);
        let zeros = |n| Tensor::zeros(&[n]);
        let qkv = [
            store.add("vafm.align.w", glorot(&[w, ca], ca, w, rng)),
            store.add("vafm.align.b", zeros(w)),
            store.add("vafm.query.w", glorot(&[w, w, 3, 3, 3], 27 * w, 27 * w, rng)),
            store.add("vafm.query.b", zeros(w)),
            store.add("vafm.key.w", glorot(&[w, cv, 3, 3, 3], 27 * cv, 27 * w, rng)),
            store.add("vafm.key.b", zeros(w)),
            store.add("vafm.value.w", glorot(&[w, ca + cv], ca + cv, w, rng)),
            store.add("vafm.value.b", zeros(w)),
        ];
        let fuse = [
            store.add("vafm.out.w", glorot(&[w, w], w, w, rng)),
            store.add("vafm.out.b", zeros(w)),
            store.add("vafm.psi.w1", glorot(&[w, w], w, w, rng)),
            store.add("vafm.psi.b1", zeros(w)),
            store.add("vafm.psi.w2", glorot(&[w, w], w, w, rng).scale(0.1)),
            store.add("vafm.psi.b2", zeros(w)),
        ];
        Self { qkv, fuse, config }
    }

    pub fn qkv_vars(&self, bound: &Bound) -> QkvVars {
        let v = self.qkv.map(|id| bound[id]);
        QkvVars {
            align_w: v[0],
            align_b: v[1],
            query_w: v[2],
            query_b: v[3],
            key_w: v[4],
            key_b: v[5],
            value_w: v[6],
            value_b: v[7],
        }
    }

    pub fn fuse_vars(&self, bound: &Bound) -> FuseVars {
        let v = self.fuse.map(|id| bound[id]);
        FuseVars {
            out_w: v[0],
            out_b: v[1],
            psi_w1: v[2],
            psi_b1: v[3],
            psi_w2: v[4],
            psi_b2: v[5],
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, audio_map: Var, visual_map: Var) -> Result<VafmOutputs> {
        let state = build_qkv(tape, audio_map, visual_map, &self.qkv_vars(bound), self.config.heads)?;
        let attended = cross_attend(tape, &state, self.config.divisor)?;
        let fused = fuse(tape, attended, state.value, &self.fuse_vars(bound))?;
        Ok(VafmOutputs { fused, state })
    }
}
