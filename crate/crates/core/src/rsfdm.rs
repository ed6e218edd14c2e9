//! Frame-transition smoothness: inter-frame differences fed back into the
//! features as channel-mixed multiplicative attention.

use rand::Rng;
use tfgc_autograd::{Tape, Tensor, Var};

use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

fn check_frames(shape: &[usize]) -> Result<()> {
    if shape.len() != 4 {
        return Err(shape_err(format!("expected (T,C,H,W), got {shape:?}")));
    }
    if shape[0] < 2 {
        return Err(Error::TooFewFrames(shape[0]));
    }
    Ok(())
}

/// `D[i] = F[i+1] - F[i]`, shape `(T-1, C, H, W)`.
pub fn frame_diffs(f: &Tensor) -> Result<Tensor> {
    check_frames(f.shape())?;
    Ok(tfgc_autograd::frame_diff(f)?)
}

/// `D̂` with `D̂[0] = 2 D[0]`, `D̂[t] = D[t-1] + D[t]`, `D̂[T-1] = 2 D[T-2]`.
pub fn pad_sum_diffs(d: &Tensor) -> Result<Tensor> {
    if d.ndim() == 0 || d.shape()[0] == 0 {
        return Err(Error::TooFewFrames(1));
    }
    Ok(tfgc_autograd::pad_sum(d)?)
}

/// `F + F ⊙ mixer(D̂)` with a bias-free `(C, C)` channel mixer.
pub fn rsfdm_apply(tape: &mut Tape, f: Var, mixer: Var) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    check_frames(&shape)?;
    if tape.shape(mixer) != [shape[1], shape[1]] {
        return Err(shape_err(format!(
            "mixer {:?} does not map {} channels",
            tape.shape(mixer),
            shape[1]
        )));
    }
    let d = tape.frame_diff(f)?;
    let d_hat = tape.pad_sum(d)?;
    let gate = tape.channel_mix(d_hat, mixer, None)?;
    let modulation = tape.mul(f, gate)?;
    Ok(tape.add(f, modulation)?)
}

#[derive(Clone, Debug)]
pub struct Rsfdm {
    mixer: ParamId,
}

impl Rsfdm {
    /// Zero-initialised mixer: the module starts as the identity.
    pub fn new(store: &mut ParamStore, channels: usize) -> Self {
        Self {
            mixer: store.add("rsfdm.mixer", Tensor::zeros(&[channels, channels])),
        }
    }

    /// Small random mixer, for tests that need a non-trivial module.
    pub fn new_random(store: &mut ParamStore, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            mixer: store.add("rsfdm.mixer", Tensor::uniform(&[channels, channels], 0.5, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        rsfdm_apply(tape, f, bound[self.mixer])
    }
}
