//! 2-D (optionally grouped) and 3-D convolutions with zero padding.

use crate::{invalid, Result, Tape, Tensor, TensorError, Var};

/// Geometry of one input plane mapped onto one output plane for a fixed
/// kernel tap.
#[derive(Clone, Copy)]
struct Plane {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    stride: usize,
}

impl Plane {
    /// Output index range `lo..hi` whose source `o*stride + off` lies in `0..len`.
    fn valid(out_len: usize, len: usize, stride: usize, off: isize) -> (usize, usize) {
        let s = stride as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi_src = len as isize - 1 - off;
        let hi = if hi_src < 0 { 0 } else { hi_src / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(out_len);
        (lo, hi.max(lo))
    }

    /// `dst[o] += wv * src[o*stride + off]`.
    fn accumulate(&self, dst: &mut [f64], src: &[f64], wv: f64, dy: isize, dx: isize) {
        let (y0, y1) = Self::valid(self.oh, self.h, self.stride, dy);
        let (x0, x1) = Self::valid(self.ow, self.w, self.stride, dx);
        for oy in y0..y1 {
            let iy = (oy * self.stride) as isize + dy;
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
            if self.stride == 1 {
                let ix0 = (x0 as isize + dx) as usize;
                for (d, s) in drow[x0..x1].iter_mut().zip(&srow[ix0..ix0 + (x1 - x0)]) {
                    *d += wv * s;
                }
            } else {
                for ox in x0..x1 {
                    let ix = (ox * self.stride) as isize + dx;
                    drow[ox] += wv * srow[ix as usize];
                }
            }
        }
    }

    /// Adjoint of [`accumulate`]: `gsrc[o*stride + off] += wv * g[o]`.
    fn scatter(&self, gsrc: &mut [f64], g: &[f64], wv: f64, dy: isize, dx: isize) {
        let (y0, y1) = Self::valid(self.oh, self.h, self.stride, dy);
        let (x0, x1) = Self::valid(self.ow, self.w, self.stride, dx);
        for oy in y0..y1 {
            let iy = (oy * self.stride) as isize + dy;
            let grow = &g[oy * self.ow..(oy + 1) * self.ow];
            let srow = &mut gsrc[iy as usize * self.w..(iy as usize + 1) * self.w];
            if self.stride == 1 {
                let ix0 = (x0 as isize + dx) as usize;
                for (s, gv) in srow[ix0..ix0 + (x1 - x0)].iter_mut().zip(&grow[x0..x1]) {
                    *s += wv * gv;
                }
            } else {
                for ox in x0..x1 {
                    let ix = (ox * self.stride) as isize + dx;
                    srow[ix as usize] += wv * grow[ox];
                }
            }
        }
    }

    /// `sum_o g[o] * src[o*stride + off]`.
    fn dot(&self, g: &[f64], src: &[f64], dy: isize, dx: isize) -> f64 {
        let (y0, y1) = Self::valid(self.oh, self.h, self.stride, dy);
        let (x0, x1) = Self::valid(self.ow, self.w, self.stride, dx);
        let mut acc = 0.0;
        for oy in y0..y1 {
            let iy = (oy * self.stride) as isize + dy;
            let srow = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
            let grow = &g[oy * self.ow..(oy + 1) * self.ow];
            if self.stride == 1 {
                let ix0 = (x0 as isize + dx) as usize;
                acc += grow[x0..x1]
                    .iter()
                    .zip(&srow[ix0..ix0 + (x1 - x0)])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            } else {
                for ox in x0..x1 {
                    let ix = (ox * self.stride) as isize + dx;
                    acc += grow[ox] * srow[ix as usize];
                }
            }
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    /// Stride 1, "same" padding for odd kernels.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn depthwise(mut self, channels: usize) -> Self {
        self.groups = channels;
        self
    }
}

impl Tape {
    /// Grouped 2-D convolution. `x: (N, Ci, H, W)`, `w: (Co, Ci/groups, KH, KW)`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let g = spec.groups.max(1);
        if sx.len() != 4 || sw.len() != 4 || sx[1] % g != 0 || sw[0] % g != 0 || sw[1] != sx[1] / g
        {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (n, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, cig, kh, kw) = (sw[0], sw[1], sw[2], sw[3]);
        let s = spec.stride.max(1);
        if h + 2 * spec.pad_h < kh || wd + 2 * spec.pad_w < kw {
            return Err(invalid("conv2d", "kernel larger than padded input"));
        }
        let oh = (h + 2 * spec.pad_h - kh) / s + 1;
        let ow = (wd + 2 * spec.pad_w - kw) / s + 1;
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(invalid("conv2d", format!("bias must be [{co}]")));
            }
        }
        let plane = Plane {
            h,
            w: wd,
            oh,
            ow,
            stride: s,
        };
        let cog = co / g;
        let (ph, pw) = (spec.pad_h as isize, spec.pad_w as isize);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = bias.map(|b| self.value(b).data().to_vec());
        let mut out = vec![0.0; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                let dst = &mut out[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                if let Some(bv) = &bv {
                    dst.iter_mut().for_each(|v| *v = bv[o]);
                }
                let grp = o / cog;
                for c in 0..cig {
                    let cin = grp * cig + c;
                    let src = &xv[(b * ci + cin) * h * wd..(b * ci + cin + 1) * h * wd];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wgt = wv[((o * cig + c) * kh + ky) * kw + kx];
                            if wgt != 0.0 {
                                plane.accumulate(dst, src, wgt, ky as isize - ph, kx as isize - pw);
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[n, co, oh, ow], out)?;
        let parents: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        Ok(self.push(
            out,
            &parents,
            Box::new(move |ctx| {
                let gr = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let mut gx = ctx.needs(0).then(|| vec![0.0; n * ci * h * wd]);
                let mut gw = ctx.needs(1).then(|| vec![0.0; co * cig * kh * kw]);
                for b in 0..n {
                    for o in 0..co {
                        let gp = &gr[(b * co + o) * oh * ow..(b * co + o + 1) * oh * ow];
                        let grp = o / cog;
                        for c in 0..cig {
                            let cin = grp * cig + c;
                            let range = (b * ci + cin) * h * wd..(b * ci + cin + 1) * h * wd;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let (dy, dx) = (ky as isize - ph, kx as isize - pw);
                                    let widx = ((o * cig + c) * kh + ky) * kw + kx;
                                    if let Some(gx) = gx.as_mut() {
                                        let wgt = wv[widx];
                                        if wgt != 0.0 {
                                            plane.scatter(&mut gx[range.clone()], gp, wgt, dy, dx);
                                        }
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw[widx] += plane.dot(gp, &xv[range.clone()], dy, dx);
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![
                    gx.map(|d| Tensor::new(ctx.inputs[0].shape(), d).unwrap()),
                    gw.map(|d| Tensor::new(ctx.inputs[1].shape(), d).unwrap()),
                ];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs(2).then(|| bias_grad(gr, n, co, oh * ow)));
                }
                grads
            }),
        ))
    }

    /// 3-D convolution over `(T, H, W)` of a `(T, Ci, H, W)` tensor with
    /// `w: (Co, Ci, KT, KH, KW)`, stride 1, "same" zero padding.
    pub fn conv3d(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 5 || sw[1] != sx[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv3d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (t, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, kt, kh, kw) = (sw[0], sw[2], sw[3], sw[4]);
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid("conv3d", "kernel sizes must be odd"));
        }
        if let Some(b) = bias {
            if self.shape(b) != [co] {
                return Err(invalid("conv3d", format!("bias must be [{co}]")));
            }
        }
        let plane = Plane {
            h,
            w: wd,
            oh: h,
            ow: wd,
            stride: 1,
        };
        let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
        let hw = h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = bias.map(|b| self.value(b).data().to_vec());
        let widx = move |o: usize, c: usize, dt: usize, ky: usize, kx: usize| {
            (((o * ci + c) * kt + dt) * kh + ky) * kw + kx
        };
        let mut out = vec![0.0; t * co * hw];
        for to in 0..t {
            for o in 0..co {
                let dst = &mut out[(to * co + o) * hw..(to * co + o + 1) * hw];
                if let Some(bv) = &bv {
                    dst.iter_mut().for_each(|v| *v = bv[o]);
                }
                for dt in 0..kt {
                    let ti = to as isize + dt as isize - pt;
                    if ti < 0 || ti >= t as isize {
                        continue;
                    }
                    let ti = ti as usize;
                    for c in 0..ci {
                        let src = &xv[(ti * ci + c) * hw..(ti * ci + c + 1) * hw];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let wgt = wv[widx(o, c, dt, ky, kx)];
                                if wgt != 0.0 {
                                    plane.accumulate(dst, src, wgt, ky as isize - ph, kx as isize - pw);
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[t, co, h, wd], out)?;
        let parents: Vec<Var> = [x, w].into_iter().chain(bias).collect();
        Ok(self.push(
            out,
            &parents,
            Box::new(move |ctx| {
                let gr = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let mut gx = ctx.needs(0).then(|| vec![0.0; t * ci * hw]);
                let mut gw = ctx.needs(1).then(|| vec![0.0; co * ci * kt * kh * kw]);
                for to in 0..t {
                    for o in 0..co {
                        let gp = &gr[(to * co + o) * hw..(to * co + o + 1) * hw];
                        for dt in 0..kt {
                            let ti = to as isize + dt as isize - pt;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            let ti = ti as usize;
                            for c in 0..ci {
                                let range = (ti * ci + c) * hw..(ti * ci + c + 1) * hw;
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let (dy, dx) = (ky as isize - ph, kx as isize - pw);
                                        let wi = widx(o, c, dt, ky, kx);
                                        if let Some(gx) = gx.as_mut() {
                                            if wv[wi] != 0.0 {
                                                plane.scatter(&mut gx[range.clone()], gp, wv[wi], dy, dx);
                                            }
                                        }
                                        if let Some(gw) = gw.as_mut() {
                                            gw[wi] += plane.dot(gp, &xv[range.clone()], dy, dx);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![
                    gx.map(|d| Tensor::new(ctx.inputs[0].shape(), d).unwrap()),
                    gw.map(|d| Tensor::new(ctx.inputs[1].shape(), d).unwrap()),
                ];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs(2).then(|| bias_grad(gr, t, co, hw)));
                }
                grads
            }),
        ))
    }
}

fn bias_grad(g: &[f64], n: usize, co: usize, plane: usize) -> Tensor {
    let mut gb = vec![0.0; co];
    for b in 0..n {
        for (o, acc) in gb.iter_mut().enumerate() {
            *acc += g[(b * co + o) * plane..(b * co + o + 1) * plane].iter().sum::<f64>();
        }
    }
    Tensor::new(&[co], gb).unwrap()
}
