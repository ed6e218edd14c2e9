//! Fused softmax-attention kernels over `(T, C, H, W)` feature maps.
//!
//! Two token layouts are supported:
//! * per-pixel temporal attention: every spatial position attends across the
//!   `T` frames using its `C`-dimensional channel vector;
//! * head-split temporal attention: every frame is one token whose descriptor
//!   is the flattened `(C/heads, H, W)` block of one head.

use crate::{invalid, Result, Tape, Tensor, TensorError, Var};

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Softmax backward for one row: `gs = p * (gp - <p, gp>)`.
fn softmax_back(p: &[f64], gp: &mut [f64]) {
    let dot: f64 = p.iter().zip(gp.iter()).map(|(a, b)| a * b).sum();
    for (g, &pv) in gp.iter_mut().zip(p) {
        *g = pv * (*g - dot);
    }
}

fn dims4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(invalid(op, format!("expected (T,C,H,W), got {:?}", t.shape()))),
    }
}

/// Raw per-pixel dot-product scores, laid out `(H, W, T, T)`:
/// `A[h,w,t,s] = sum_c q[t,c,h,w] * k[s,c,h,w]`.
pub fn pixel_attention_scores(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    if q.shape() != k.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "pixel_attention_scores",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (t, c, h, w) = dims4("pixel_attention_scores", q)?;
    let hw = h * w;
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; hw * t * t];
    for ti in 0..t {
        for si in 0..t {
            for ch in 0..c {
                let qrow = &qd[(ti * c + ch) * hw..(ti * c + ch + 1) * hw];
                let krow = &kd[(si * c + ch) * hw..(si * c + ch + 1) * hw];
                for p in 0..hw {
                    out[(p * t + ti) * t + si] += qrow[p] * krow[p];
                }
            }
        }
    }
    Tensor::new(&[h, w, t, t], out)
}

/// Row-softmax of [`pixel_attention_scores`], same `(H, W, T, T)` layout.
pub fn pixel_attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let mut a = pixel_attention_scores(q, k)?;
    let t = a.shape()[3];
    a.data_mut().chunks_mut(t).for_each(softmax_in_place);
    Ok(a)
}

/// Per-head temporal attention weights `(heads, T, T)`.
pub fn cross_attention_weights(q: &Tensor, k: &Tensor, heads: usize, divisor: f64) -> Result<Tensor> {
    if q.shape() != k.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_attention_weights",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (t, c, h, w) = dims4("cross_attention_weights", q)?;
    if heads == 0 || c % heads != 0 {
        return Err(invalid(
            "cross_attention",
            format!("{c} channels not divisible into {heads} heads"),
        ));
    }
    if !(divisor.is_finite() && divisor > 0.0) {
        return Err(invalid("cross_attention", "divisor must be positive"));
    }
    let blk = c / heads * h * w;
    let row = c * h * w;
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; heads * t * t];
    for hd in 0..heads {
        for ti in 0..t {
            let qs = &qd[ti * row + hd * blk..ti * row + (hd + 1) * blk];
            let r = &mut out[(hd * t + ti) * t..(hd * t + ti + 1) * t];
            for (si, slot) in r.iter_mut().enumerate() {
                let ks = &kd[si * row + hd * blk..si * row + (hd + 1) * blk];
                *slot = qs.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>() / divisor;
            }
            softmax_in_place(r);
        }
    }
    Tensor::new(&[heads, t, t], out)
}

impl Tape {
    /// Per-pixel attention across frames:
    /// `O[t,:,h,w] = sum_s softmax_s(A[h,w,t,:]) * v[s,:,h,w]`.
    pub fn pixel_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "pixel_attention",
                lhs: shape,
                rhs: self.shape(v).to_vec(),
            });
        }
        let (t, c, h, w) = dims4("pixel_attention", self.value(q))?;
        let hw = h * w;
        let probs = pixel_attention_weights(self.value(q), self.value(k))?;
        let pd = probs.data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; t * c * hw];
        for ti in 0..t {
            for si in 0..t {
                for ch in 0..c {
                    let vrow = &vd[(si * c + ch) * hw..(si * c + ch + 1) * hw];
                    let orow = &mut out[(ti * c + ch) * hw..(ti * c + ch + 1) * hw];
                    for p in 0..hw {
                        orow[p] += pd[(p * t + ti) * t + si] * vrow[p];
                    }
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            &[q, k, v],
            Box::new(move |ctx| {
                let p = probs.data();
                let g = ctx.grad.data();
                let (qd, kd, vd) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
                let n = t * c * hw;
                let gv = ctx.needs(2).then(|| {
                    let mut gv = vec![0.0; n];
                    for ti in 0..t {
                        for si in 0..t {
                            for ch in 0..c {
                                let grow = &g[(ti * c + ch) * hw..(ti * c + ch + 1) * hw];
                                let dst = &mut gv[(si * c + ch) * hw..(si * c + ch + 1) * hw];
                                for px in 0..hw {
                                    dst[px] += p[(px * t + ti) * t + si] * grow[px];
                                }
                            }
                        }
                    }
                    Tensor::new(ctx.inputs[2].shape(), gv).unwrap()
                });
                let (gq, gk) = if ctx.needs(0) || ctx.needs(1) {
                    // gradient w.r.t. the scores, (H, W, T, T)
                    let mut gs = vec![0.0; hw * t * t];
                    for ti in 0..t {
                        for si in 0..t {
                            for ch in 0..c {
                                let grow = &g[(ti * c + ch) * hw..(ti * c + ch + 1) * hw];
                                let vrow = &vd[(si * c + ch) * hw..(si * c + ch + 1) * hw];
                                for px in 0..hw {
                                    gs[(px * t + ti) * t + si] += grow[px] * vrow[px];
                                }
                            }
                        }
                    }
                    for (prow, grow) in p.chunks(t).zip(gs.chunks_mut(t)) {
                        softmax_back(prow, grow);
                    }
                    let mut gq = ctx.needs(0).then(|| vec![0.0; n]);
                    let mut gk = ctx.needs(1).then(|| vec![0.0; n]);
                    for ti in 0..t {
                        for si in 0..t {
                            for ch in 0..c {
                                let a = (ti * c + ch) * hw;
                                let b = (si * c + ch) * hw;
                                for px in 0..hw {
                                    let s = gs[(px * t + ti) * t + si];
                                    if let Some(gq) = gq.as_mut() {
                                        gq[a + px] += s * kd[b + px];
                                    }
                                    if let Some(gk) = gk.as_mut() {
                                        gk[b + px] += s * qd[a + px];
                                    }
                                }
                            }
                        }
                    }
                    (
                        gq.map(|d| Tensor::new(&shape, d).unwrap()),
                        gk.map(|d| Tensor::new(&shape, d).unwrap()),
                    )
                } else {
                    (None, None)
                };
                vec![gq, gk, gv]
            }),
        ))
    }

    /// Head-split attention across frames:
    /// `out_i[t] = sum_s softmax_s(q_i[t] . k_i[s] / divisor) * v_i[s]`,
    /// with heads concatenated back along channels.
    pub fn cross_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, divisor: f64) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if self.shape(v) != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_attention",
                lhs: shape,
                rhs: self.shape(v).to_vec(),
            });
        }
        let probs = cross_attention_weights(self.value(q), self.value(k), heads, divisor)?;
        let (t, c, h, w) = dims4("cross_attention", self.value(q))?;
        let blk = c / heads * h * w;
        let row = c * h * w;
        let pd = probs.data();
        let vd = self.value(v).data();
        let mut out = vec![0.0; t * row];
        for hd in 0..heads {
            for ti in 0..t {
                for si in 0..t {
                    let pw = pd[(hd * t + ti) * t + si];
                    let src = &vd[si * row + hd * blk..si * row + (hd + 1) * blk];
                    let dst = &mut out[ti * row + hd * blk..ti * row + (hd + 1) * blk];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += pw * s;
                    }
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            &[q, k, v],
            Box::new(move |ctx| {
                let p = probs.data();
                let g = ctx.grad.data();
                let (qd, kd, vd) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
                let mut gq = ctx.needs(0).then(|| vec![0.0; t * row]);
                let mut gk = ctx.needs(1).then(|| vec![0.0; t * row]);
                let mut gv = ctx.needs(2).then(|| vec![0.0; t * row]);
                for hd in 0..heads {
                    let sl = |ti: usize| ti * row + hd * blk..ti * row + (hd + 1) * blk;
                    for ti in 0..t {
                        let prow = &p[(hd * t + ti) * t..(hd * t + ti + 1) * t];
                        let gout = &g[sl(ti)];
                        // d loss / d prob
                        let mut gp: Vec<f64> = (0..t)
                            .map(|si| gout.iter().zip(&vd[sl(si)]).map(|(a, b)| a * b).sum())
                            .collect();
                        if let Some(gv) = gv.as_mut() {
                            for (si, &pw) in prow.iter().enumerate() {
                                for (d, gi) in gv[sl(si)].iter_mut().zip(gout) {
                                    *d += pw * gi;
                                }
                            }
                        }
                        softmax_back(prow, &mut gp);
                        for (si, &gs) in gp.iter().enumerate() {
                            let gs = gs / divisor;
                            if let Some(gq) = gq.as_mut() {
                                for (d, kv) in gq[sl(ti)].iter_mut().zip(&kd[sl(si)]) {
                                    *d += gs * kv;
                                }
                            }
                            if let Some(gk) = gk.as_mut() {
                                for (d, qv) in gk[sl(si)].iter_mut().zip(&qd[sl(ti)]) {
                                    *d += gs * qv;
                                }
                            }
                        }
                    }
                }
                vec![
                    gq.map(|d| Tensor::new(&shape, d).unwrap()),
                    gk.map(|d| Tensor::new(&shape, d).unwrap()),
                    gv.map(|d| Tensor::new(&shape, d).unwrap()),
                ]
            }),
        ))
    }
}
