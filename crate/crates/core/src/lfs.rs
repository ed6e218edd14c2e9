//! Local frequency statistics: sliding-window 2-D DCT, radial band
//! log-magnitudes, pooled onto the fusion grid. Nothing here is learnable.

use serde::{Deserialize, Serialize};
use tfgc_autograd::Tensor;

use crate::error::{shape_err, Result};

pub const LOG_EPS: f64 = 1e-8;
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LfsConfig {
    pub window: usize,
    pub stride: usize,
    pub bands: usize,
}

impl Default for LfsConfig {
    fn default() -> Self {
        Self {
            window: 10,
            stride: 2,
            bands: 6,
        }
    }
}

/// `(C, H, W)` with `C` of 1 or 3 to an `(H, W)` luma plane.
pub fn to_luma(frame: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = frame.shape() else {
        return Err(shape_err(format!("frame must be (C,H,W), got {:?}", frame.shape())));
    };
    let plane = h * w;
    let d = frame.data();
    let data = match c {
        1 => d.to_vec(),
        3 => (0..plane)
            .map(|i| LUMA[0] * d[i] + LUMA[1] * d[plane + i] + LUMA[2] * d[2 * plane + i])
            .collect(),
        _ => return Err(shape_err(format!("luma needs 1 or 3 channels, got {c}"))),
    };
    Ok(Tensor::new(&[h, w], data)?)
}

/// Orthonormal DCT-II basis, `M[u][x]`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for u in 0..n {
        let a = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for x in 0..n {
            m[u * n + x] = a * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// `L · X · Rᵀ` for square `n x n` row-major blocks.
fn sandwich(l: &[f64], x: &[f64], r: &[f64], n: usize, transpose: bool) -> Vec<f64> {
    let at = |m: &[f64], i: usize, j: usize| if transpose { m[j * n + i] } else { m[i * n + j] };
    let mut tmp = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            tmp[i * n + j] = (0..n).map(|k| at(l, i, k) * x[k * n + j]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| tmp[i * n + k] * at(r, j, k)).sum();
        }
    }
    out
}

pub fn dct2(block: &[f64], n: usize, basis: &[f64]) -> Vec<f64> {
    sandwich(basis, block, basis, n, false)
}

pub fn idct2(coeffs: &[f64], n: usize, basis: &[f64]) -> Vec<f64> {
    sandwich(basis, coeffs, basis, n, true)
}

/// DCT of every `window`-sized patch at the given stride, shape
/// `(blocks_y, blocks_x, window, window)`.
pub fn block_dct(frame: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let luma = to_luma(frame)?;
    let (h, w) = (luma.shape()[0], luma.shape()[1]);
    if window == 0 || stride == 0 {
        return Err(shape_err("window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(shape_err(format!("window {window} exceeds frame {h}x{w}")));
    }
    let (by, bx) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let basis = dct_matrix(window);
    let mut out = Vec::with_capacity(by * bx * window * window);
    let mut block = vec![0.0; window * window];
    let src = luma.data();
    for y in 0..by {
        for x in 0..bx {
            for r in 0..window {
                let row = (y * stride + r) * w + x * stride;
                block[r * window..(r + 1) * window].copy_from_slice(&src[row..row + window]);
            }
            out.extend(dct2(&block, window, &basis));
        }
    }
    Ok(Tensor::new(&[by, bx, window, window], out)?)
}

/// Equal-width partition of the anti-diagonal index `u + v ∈ [0, 2n-2]`.
pub fn band_index(u: usize, v: usize, n: usize, bands: usize) -> usize {
    (u + v) * bands / (2 * n - 1)
}

/// `log10(mean |coeff| + ε)` per band and block, shape `(bands, blocks_y, blocks_x)`.
pub fn band_stats(coeffs: &Tensor, bands: usize) -> Result<Tensor> {
    let &[by, bx, n, n2] = coeffs.shape() else {
        return Err(shape_err(format!("coefficients must be 4-d, got {:?}", coeffs.shape())));
    };
    if n != n2 {
        return Err(shape_err("coefficient blocks must be square"));
    }
    if bands < 2 || bands > 2 * n - 1 {
        return Err(shape_err(format!("{bands} bands for a {n}x{n} window")));
    }
    let index: Vec<usize> = (0..n * n).map(|i| band_index(i / n, i % n, n, bands)).collect();
    let mut count = vec![0usize; bands];
    index.iter().for_each(|&b| count[b] += 1);
    let mut out = vec![0.0; bands * by * bx];
    for (blk, c) in coeffs.data().chunks(n * n).enumerate() {
        let mut acc = vec![0.0; bands];
        for (v, &b) in c.iter().zip(&index) {
            acc[b] += v.abs();
        }
        for b in 0..bands {
            out[b * by * bx + blk] = (acc[b] / count[b] as f64 + LOG_EPS).log10();
        }
    }
    Ok(Tensor::new(&[bands, by, bx], out)?)
}

/// Adaptive average pooling of `(C, H, W)` to `(C, oh, ow)`.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(shape_err(format!("pool input must be (C,H,W), got {:?}", x.shape())));
    };
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(shape_err(format!("cannot pool {h}x{w} to {oh}x{ow}")));
    }
    let bins = |i: usize, o: usize, len: usize| (i * len / o, ((i + 1) * len).div_ceil(o));
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            let (y0, y1) = bins(i, oh, h);
            for j in 0..ow {
                let (x0, x1) = bins(j, ow, w);
                let mut s = 0.0;
                for y in y0..y1 {
                    s += d[ch * h * w + y * w + x0..ch * h * w + y * w + x1].iter().sum::<f64>();
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(Tensor::new(&[c, oh, ow], out)?)
}

/// Frequency features of a `(T, C, H, W)` clip on an `oh x ow` grid,
/// shape `(T, bands, oh, ow)`.
pub fn lfs_features(frames: &Tensor, cfg: &LfsConfig, oh: usize, ow: usize) -> Result<Tensor> {
    if frames.ndim() != 4 {
        return Err(shape_err(format!("clip must be (T,C,H,W), got {:?}", frames.shape())));
    }
    let per_frame = (0..frames.shape()[0])
        .map(|t| {
            let coeffs = block_dct(&frames.index_axis0(t), cfg.window, cfg.stride)?;
            adaptive_avg_pool(&band_stats(&coeffs, cfg.bands)?, oh, ow)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&per_frame)?)
}
