use crate::{invalid, Result, Tape, Tensor, TensorError, Var};

impl Tape {
    /// `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let (av, bv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs(0).then(|| {
                    // g (m,n) . b^T (n,k)
                    let mut out = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                out[i * k + p] += gv * bv[p * n + j];
                            }
                        }
                    }
                    Tensor::new(&[m, k], out).unwrap()
                });
                let gb = ctx.needs(1).then(|| {
                    // a^T (k,m) . g (m,n)
                    let mut out = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = av[i * k + p];
                            for j in 0..n {
                                out[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    Tensor::new(&[k, n], out).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Dense layer `x W^T + b` on `(n, in)` rows with `W: (out, in)`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: sx,
                rhs: sw,
            });
        }
        // Rows of x are the "batch", features are the channel axis.
        let (n, i) = (sx[0], sx[1]);
        let xt = self.reshape(x, &[n, i, 1])?;
        let y = self.channel_mix(xt, w, bias)?;
        let o = sw[0];
        self.reshape(y, &[n, o])
    }

    /// 1x1 convolution: mixes axis 1 of `(N, Ci, ...)` with `W: (Co, Ci)`.
    pub fn channel_mix(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() < 2 || sw.len() != 2 || sw[1] != sx[1] {
            return Err(TensorError::ShapeMismatch {
                op: "channel_mix",
                lhs: sx,
                rhs: sw,
            });
        }
        let (n, ci, co) = (sx[0], sx[1], sw[0]);
        let s: usize = sx[2..].iter().product();
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(invalid("channel_mix", format!("bias must be [{co}]")));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; n * co * s];
        for b in 0..n {
            for o in 0..co {
                let dst = &mut out[(b * co + o) * s..(b * co + o + 1) * s];
                for c in 0..ci {
                    let wgt = wv[o * ci + c];
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = &xv[(b * ci + c) * s..(b * ci + c + 1) * s];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += wgt * v;
                    }
                }
            }
        }
        if let Some(bv) = bias {
            let bv = self.value(bv).data();
            for b in 0..n {
                for o in 0..co {
                    out[(b * co + o) * s..(b * co + o + 1) * s]
                        .iter_mut()
                        .for_each(|v| *v += bv[o]);
                }
            }
        }
        let mut out_shape = sx.clone();
        out_shape[1] = co;
        let out = Tensor::new(&out_shape, out)?;
        let parents: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        Ok(self.push(
            out,
            &parents,
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; n * ci * s];
                    for b in 0..n {
                        for o in 0..co {
                            let gs = &g[(b * co + o) * s..(b * co + o + 1) * s];
                            for c in 0..ci {
                                let wgt = wv[o * ci + c];
                                if wgt == 0.0 {
                                    continue;
                                }
                                let dst = &mut gx[(b * ci + c) * s..(b * ci + c + 1) * s];
                                for (d, gv) in dst.iter_mut().zip(gs) {
                                    *d += wgt * gv;
                                }
                            }
                        }
                    }
                    Tensor::new(ctx.inputs[0].shape(), gx).unwrap()
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; co * ci];
                    for b in 0..n {
                        for o in 0..co {
                            let gs = &g[(b * co + o) * s..(b * co + o + 1) * s];
                            for c in 0..ci {
                                let xs = &xv[(b * ci + c) * s..(b * ci + c + 1) * s];
                                gw[o * ci + c] += gs.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    Tensor::new(&[co, ci], gw).unwrap()
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs(2).then(|| {
                        let mut gb = vec![0.0; co];
                        for b in 0..n {
                            for (o, acc) in gb.iter_mut().enumerate() {
                                *acc += g[(b * co + o) * s..(b * co + o + 1) * s].iter().sum::<f64>();
                            }
                        }
                        Tensor::new(&[co], gb).unwrap()
                    }));
                }
                grads
            }),
        ))
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
