//! Discrepancy capture: per-pixel temporal self-attention gated by a
//! variance-activated mask, followed by tri-scale temporal aggregation over
//! two axis-permuted views.

use rand::Rng;
use tfgc_autograd::{pixel_attention_scores, Conv2dSpec, Tape, Tensor, Var};

use crate::error::{shape_err, Result};
use crate::params::{glorot, Bound, ParamId, ParamStore};

/// `(T,C,H,W) -> (W,C,H,T)`; its own inverse.
pub const VERTICAL_AXES: [usize; 4] = [3, 1, 2, 0];
/// `(T,C,H,W) -> (H,C,T,W)`; its own inverse.
pub const HORIZONTAL_AXES: [usize; 4] = [2, 1, 0, 3];

/// `ceil(fraction * H * W)`, clamped to `1..=H*W`.
pub fn default_k(h: usize, w: usize, fraction: f64) -> usize {
    let hw = h * w;
    ((fraction * hw as f64).ceil() as usize).clamp(1, hw.max(1))
}

/// Three bias-free channel projections.
pub fn project_qkv(tape: &mut Tape, f: Var, wq: Var, wk: Var, wv: Var) -> Result<(Var, Var, Var)> {
    let c = tape.shape(f).get(1).copied().unwrap_or(0);
    for w in [wq, wk, wv] {
        if tape.shape(w) != [c, c] {
            return Err(shape_err(format!("projection {:?} for {c} channels", tape.shape(w))));
        }
    }
    Ok((
        tape.channel_mix(f, wq, None)?,
        tape.channel_mix(f, wk, None)?,
        tape.channel_mix(f, wv, None)?,
    ))
}

/// `A[h,w,t,s] = <Q[t,:,h,w], K[s,:,h,w]>`, shape `(H, W, T, T)`.
pub fn temporal_scores(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    pixel_attention_scores(q, k).map_err(|e| shape_err(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceMap {
    /// `(H, W)` population variance over time of the score row sums.
    pub variance: Tensor,
    /// k-th smallest variance.
    pub threshold: f64,
    /// `(H, W)`, 1 where variance strictly exceeds the threshold.
    pub mask: Tensor,
}

impl VarianceMap {
    pub fn active(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.0).count()
    }
}

pub fn variance_activate(a: &Tensor, k: usize) -> Result<VarianceMap> {
    let &[h, w, t, t2] = a.shape() else {
        return Err(shape_err(format!("scores must be (H,W,T,T), got {:?}", a.shape())));
    };
    if t != t2 || t == 0 {
        return Err(shape_err(format!("scores must be square in time, got {:?}", a.shape())));
    }
    if k == 0 || k > h * w {
        return Err(shape_err(format!("k={k} outside 1..={}", h * w)));
    }
    let variance: Vec<f64> = a
        .data()
        .chunks(t * t)
        .map(|pix| {
            let sums: Vec<f64> = pix.chunks(t).map(|row| row.iter().sum()).collect();
            // shifting by the first sum keeps a constant row exactly zero
            let dev: Vec<f64> = sums.iter().map(|s| s - sums[0]).collect();
            let mean = dev.iter().sum::<f64>() / t as f64;
            dev.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / t as f64
        })
        .collect();
    let mut sorted = variance.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[k - 1];
    let mask = variance.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect();
    Ok(VarianceMap {
        variance: Tensor::new(&[h, w], variance)?,
        threshold,
        mask: Tensor::new(&[h, w], mask)?,
    })
}

/// `F + α · (mask ⊙ O)` with `O` the per-pixel softmax attention over time.
/// The mask is computed from the current values and held constant.
pub fn discrepancy_update(
    tape: &mut Tape,
    f: Var,
    (q, k, v): (Var, Var, Var),
    alpha: Var,
    k_count: usize,
) -> Result<(Var, VarianceMap)> {
    let shape = tape.shape(f).to_vec();
    if tape.shape(v) != shape.as_slice() {
        return Err(shape_err(format!("value {:?} vs features {shape:?}", tape.shape(v))));
    }
    let scores = temporal_scores(tape.value(q), tape.value(k))?;
    let vmap = variance_activate(&scores, k_count)?;
    let plane = shape[2] * shape[3];
    let gate = Tensor::from_fn(&shape, |i| vmap.mask.data()[i[2] * shape[3] + i[3]]);
    debug_assert_eq!(gate.len(), shape[0] * shape[1] * plane);
    let attended = tape.pixel_attention(q, k, v)?;
    let gated = tape.mul_const(attended, &gate)?;
    let scaled = tape.scalar_mul(alpha, gated)?;
    Ok((tape.add(f, scaled)?, vmap))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxisViews {
    pub f_v: Tensor,
    pub f_h: Tensor,
}

pub fn axis_reshape(f: &Tensor) -> Result<AxisViews> {
    Ok(AxisViews {
        f_v: f.permute(&VERTICAL_AXES)?,
        f_h: f.permute(&HORIZONTAL_AXES)?,
    })
}

/// Inverse of [`axis_reshape`], one tensor per view.
pub fn axis_restore(views: &AxisViews) -> Result<(Tensor, Tensor)> {
    Ok((
        views.f_v.permute(&VERTICAL_AXES)?,
        views.f_h.permute(&HORIZONTAL_AXES)?,
    ))
}

/// `(1/3)[conv₁(x) + up₂ conv₂(down₂ x) + up₄ conv₄(down₄ x)]` along the last
/// axis of a 4-d view. Kernels are `(C, C, 1, 3)` channel-mixing convs.
pub fn multigrain_aggregate(tape: &mut Tape, view: Var, kernels: [Var; 3]) -> Result<Var> {
    let shape = tape.shape(view).to_vec();
    if shape.len() != 4 {
        return Err(shape_err(format!("view must be 4-d, got {shape:?}")));
    }
    let len = shape[3];
    if len == 0 || len % 4 != 0 {
        return Err(shape_err(format!("aggregated axis length {len} not divisible by 4")));
    }
    let c = shape[1];
    for k in kernels {
        if tape.shape(k) != [c, c, 1, 3] {
            return Err(shape_err(format!("kernel {:?} for {c} channels", tape.shape(k))));
        }
    }
    let spec = Conv2dSpec::same(1, 3);
    let mut acc = tape.conv2d(view, kernels[0], None, spec)?;
    for (kernel, factor) in kernels[1..].iter().zip([2, 4]) {
        let down = tape.avg_pool_last(view, factor)?;
        let conv = tape.conv2d(down, *kernel, None, spec)?;
        let up = tape.repeat_last(conv, factor);
        acc = tape.add(acc, up)?;
    }
    Ok(tape.scale(acc, 1.0 / 3.0))
}

/// [`multigrain_aggregate`] along axis 2 of a `(H, C, T, W)` view, i.e. with
/// the kernels acting as transposed `3x1` convolutions.
pub fn multigrain_aggregate_axis2(tape: &mut Tape, view: Var, kernels: [Var; 3]) -> Result<Var> {
    let swapped = tape.permute(view, &[0, 1, 3, 2])?;
    let agg = multigrain_aggregate(tape, swapped, kernels)?;
    Ok(tape.permute(agg, &[0, 1, 3, 2])?)
}

/// Tape handles for one [`dctam_apply`] call.
#[derive(Clone, Copy, Debug)]
pub struct DctamVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub alpha: Var,
    pub vertical: [Var; 3],
    pub horizontal: [Var; 3],
}

pub fn dctam_apply(tape: &mut Tape, f: Var, vars: &DctamVars, k_count: usize) -> Result<(Var, VarianceMap)> {
    let qkv = project_qkv(tape, f, vars.wq, vars.wk, vars.wv)?;
    let (updated, vmap) = discrepancy_update(tape, f, qkv, vars.alpha, k_count)?;
    let fv = tape.permute(updated, &VERTICAL_AXES)?;
    let av = multigrain_aggregate(tape, fv, vars.vertical)?;
    let back_v = tape.permute(av, &VERTICAL_AXES)?;
    let fh = tape.permute(updated, &HORIZONTAL_AXES)?;
    let ah = multigrain_aggregate_axis2(tape, fh, vars.horizontal)?;
    let back_h = tape.permute(ah, &HORIZONTAL_AXES)?;
    let views = tape.add(back_v, back_h)?;
    let fused = tape.scale(views, 0.5);
    Ok((tape.add(updated, fused)?, vmap))
}

#[derive(Clone, Debug)]
pub struct Dctam {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    alpha: ParamId,
    vertical: [ParamId; 3],
    horizontal: [ParamId; 3],
    pub k_fraction: f64,
}

impl Dctam {
    /// Random projections and kernels, `α = 0`.
    pub fn new(store: &mut ParamStore, channels: usize, k_fraction: f64, rng: &mut impl Rng) -> Self {
        let c = channels;
        let mut proj = |name: &str, rng: &mut _| store.add(format!("dctam.{name}"), glorot(&[c, c], c, c, rng));
        let wq = proj("wq", rng);
        let wk = proj("wk", rng);
        let wv = proj("wv", rng);
        let alpha = store.add("dctam.alpha", Tensor::zeros(&[1]));
        let mut kernels = |view: &str, rng: &mut _| {
            [1, 2, 4].map(|s| {
                store.add(
                    format!("dctam.{view}.k{s}"),
                    glorot(&[c, c, 1, 3], 3 * c, 3 * c, rng).scale(0.5),
                )
            })
        };
        let vertical = kernels("v", rng);
        let horizontal = kernels("h", rng);
        Self {
            wq,
            wk,
            wv,
            alpha,
            vertical,
            horizontal,
            k_fraction,
        }
    }

    pub fn vars(&self, bound: &Bound) -> DctamVars {
        DctamVars {
            wq: bound[self.wq],
            wk: bound[self.wk],
            wv: bound[self.wv],
            alpha: bound[self.alpha],
            vertical: self.vertical.map(|id| bound[id]),
            horizontal: self.horizontal.map(|id| bound[id]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<(Var, VarianceMap)> {
        let shape = tape.shape(f);
        let k = default_k(shape[2], shape[3], self.k_fraction);
        dctam_apply(tape, f, &self.vars(bound), k)
    }
}
