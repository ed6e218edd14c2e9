//! Reshapes, permutations, concatenation, pooling and other linear maps
//! that only move or average values.

use crate::{invalid, Result, Tape, Tensor, TensorError, Var};

impl Tape {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(|ctx| vec![Some(ctx.grad.reshape(ctx.inputs[0].shape()).unwrap())]),
        ))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(ctx.grad.permute(&inverse).unwrap())]),
        ))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or(TensorError::Empty("concat"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            out,
            parts,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut grads: Vec<Vec<f64>> = sizes
                    .iter()
                    .map(|&sz| Vec::with_capacity(outer * sz * inner))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (gi, &sz) in grads.iter_mut().zip(&sizes) {
                        gi.extend_from_slice(&g[off..off + sz * inner]);
                        off += sz * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&ctx.inputs)
                    .enumerate()
                    .map(|(i, (d, x))| ctx.needs(i).then(|| Tensor::new(x.shape(), d).unwrap()))
                    .collect()
            }),
        ))
    }

    /// Forward differences along axis 0: `out[i] = x[i+1] - x[i]`.
    pub fn frame_diff(&mut self, a: Var) -> Result<Var> {
        let out = frame_diff(self.value(a))?;
        Ok(self.push(
            out,
            &[a],
            Box::new(|ctx| {
                let g = ctx.grad;
                let n = ctx.inputs[0].shape()[0];
                let inner = g.len() / (n - 1);
                let mut gx = vec![0.0; n * inner];
                for i in 0..n - 1 {
                    for j in 0..inner {
                        let v = g.data()[i * inner + j];
                        gx[(i + 1) * inner + j] += v;
                        gx[i * inner + j] -= v;
                    }
                }
                vec![Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap())]
            }),
        ))
    }

    /// Sum of the front-padded and back-padded difference stacks along axis 0.
    pub fn pad_sum(&mut self, d: Var) -> Result<Var> {
        let out = pad_sum(self.value(d))?;
        Ok(self.push(
            out,
            &[d],
            Box::new(|ctx| {
                let n = ctx.inputs[0].shape()[0];
                let inner = ctx.inputs[0].len() / n;
                let g = ctx.grad.data();
                let mut gd = vec![0.0; n * inner];
                // out[0] = 2 d[0]; out[t] = d[t-1] + d[t]; out[n] = 2 d[n-1]
                for j in 0..inner {
                    gd[j] += 2.0 * g[j];
                    gd[(n - 1) * inner + j] += 2.0 * g[n * inner + j];
                }
                for t in 1..n {
                    for j in 0..inner {
                        let v = g[t * inner + j];
                        gd[(t - 1) * inner + j] += v;
                        gd[t * inner + j] += v;
                    }
                }
                vec![Some(Tensor::new(ctx.inputs[0].shape(), gd).unwrap())]
            }),
        ))
    }

    /// Average pooling by factor `n` along the last axis.
    pub fn avg_pool_last(&mut self, a: Var, n: usize) -> Result<Var> {
        let out = avg_pool_last(self.value(a), n)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let scaled = ctx.grad.scale(1.0 / n as f64);
                vec![Some(repeat_last(&scaled, n))]
            }),
        ))
    }

    /// Nearest-neighbour upsampling by factor `n` along the last axis.
    pub fn repeat_last(&mut self, a: Var, n: usize) -> Var {
        let out = repeat_last(self.value(a), n);
        self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let summed = avg_pool_last(ctx.grad, n).unwrap().scale(n as f64);
                vec![Some(summed)]
            }),
        )
    }

    /// Average pooling over the trailing two axes by an integer factor.
    pub fn avg_pool2d(&mut self, a: Var, factor: usize) -> Result<Var> {
        let out = avg_pool2d(self.value(a), factor)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let x = ctx.inputs[0];
                let nd = x.ndim();
                let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
                let (oh, ow) = (h / factor, w / factor);
                let planes = x.len() / (h * w);
                let k = 1.0 / (factor * factor) as f64;
                let g = ctx.grad.data();
                let mut gx = vec![0.0; x.len()];
                for p in 0..planes {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[p * h * w + y * w + xx] =
                                g[p * oh * ow + (y / factor) * ow + xx / factor] * k;
                        }
                    }
                }
                vec![Some(Tensor::new(x.shape(), gx).unwrap())]
            }),
        ))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("mean_axis", format!("axis {axis} out of range")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = &x[(o * n + i) * inner..(o * n + i + 1) * inner];
                for (dst, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += v;
                }
            }
        }
        let k = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= k);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            out,
            &[a],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..n {
                        for j in 0..inner {
                            gx[(o * n + i) * inner + j] = g[o * inner + j] * k;
                        }
                    }
                }
                vec![Some(Tensor::new(ctx.inputs[0].shape(), gx).unwrap())]
            }),
        ))
    }
}

/// `out[i] = x[i+1] - x[i]` along axis 0.
pub fn frame_diff(x: &Tensor) -> Result<Tensor> {
    let n = x.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(invalid("frame_diff", format!("need at least 2 steps, got {n}")));
    }
    let inner = x.len() / n;
    let d = x.data();
    let data = (0..(n - 1) * inner)
        .map(|i| d[i + inner] - d[i])
        .collect();
    let mut shape = x.shape().to_vec();
    shape[0] = n - 1;
    Tensor::new(&shape, data)
}

/// `[d0, d0, d1, ..] + [d0, d1, .., dn, dn]` along axis 0.
pub fn pad_sum(d: &Tensor) -> Result<Tensor> {
    let n = d.shape().first().copied().unwrap_or(0);
    if n < 1 {
        return Err(invalid("pad_sum", "need at least one difference"));
    }
    let inner = d.len() / n;
    let src = d.data();
    let mut data = Vec::with_capacity((n + 1) * inner);
    for t in 0..=n {
        let prev = t.saturating_sub(1);
        let next = t.min(n - 1);
        for j in 0..inner {
            data.push(src[prev * inner + j] + src[next * inner + j]);
        }
    }
    let mut shape = d.shape().to_vec();
    shape[0] = n + 1;
    Tensor::new(&shape, data)
}

pub fn avg_pool_last(x: &Tensor, n: usize) -> Result<Tensor> {
    let len = *x.shape().last().ok_or(TensorError::Empty("avg_pool_last"))?;
    if n == 0 || len % n != 0 {
        return Err(invalid(
            "avg_pool_last",
            format!("last axis {len} not divisible by {n}"),
        ));
    }
    let k = 1.0 / n as f64;
    let data = x.data().chunks(n).map(|c| c.iter().sum::<f64>() * k).collect();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len / n;
    Tensor::new(&shape, data)
}

pub fn repeat_last(x: &Tensor, n: usize) -> Tensor {
    let data = x
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, n))
        .collect();
    let mut shape = x.shape().to_vec();
    if let Some(l) = shape.last_mut() {
        *l *= n;
    }
    Tensor::new(&shape, data).expect("repeat_last shape")
}

pub fn avg_pool2d(x: &Tensor, factor: usize) -> Result<Tensor> {
    let nd = x.ndim();
    if nd < 2 {
        return Err(invalid("avg_pool2d", "need at least 2 axes"));
    }
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(invalid(
            "avg_pool2d",
            format!("{h}x{w} not divisible by {factor}"),
        ));
    }
    let (oh, ow) = (h / factor, w / factor);
    let planes = x.len() / (h * w);
    let k = 1.0 / (factor * factor) as f64;
    let src = x.data();
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[p * oh * ow + (y / factor) * ow + xx / factor] += src[p * h * w + y * w + xx] * k;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::new(&shape, out)
}
