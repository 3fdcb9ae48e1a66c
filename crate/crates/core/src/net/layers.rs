//! Layer kernels over channel-major (`C x N x H x W`) activations.
//!
//! Keeping the channel outermost turns every convolution into a single GEMM
//! over the whole batch and makes batch-norm statistics contiguous.

use super::tensor::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Act {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.c, self.n, self.h, self.w)
    }

    /// Elements per channel.
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// From an `N x C x H x W` buffer.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, src: &[T]) -> Self {
        let hw = h * w;
        let mut data = vec![T::zero(); src.len()];
        for ni in 0..n {
            for ci in 0..c {
                let from = &src[(ni * c + ci) * hw..][..hw];
                data[(ci * n + ni) * hw..][..hw].copy_from_slice(from);
            }
        }
        Act { c, n, h, w, data }
    }

    /// Activations of sample `ni` as `C x H x W`.
    pub fn sample_chw(&self, ni: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.c * hw);
        for ci in 0..self.c {
            out.extend_from_slice(&self.data[(ci * self.n + ni) * hw..][..hw]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            super::config::conv_out(h, self.kernel, self.stride, self.pad),
            super::config::conv_out(w, self.kernel, self.stride, self.pad),
        )
    }
}

fn im2col<T: Scalar>(x: &Act<T>, g: &ConvGeom, ho: usize, wo: usize) -> Vec<T> {
    let k = g.kernel;
    let cols = x.n * ho * wo;
    let mut col = vec![T::zero(); x.c * k * k * cols];
    let (h, w) = (x.h as isize, x.w as isize);
    for ci in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * cols..][..cols];
                for ni in 0..x.n {
                    let src = &x.data[(ci * x.n + ni) * x.h * x.w..][..x.h * x.w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let dst = &mut row[(ni * ho + oy) * wo..][..wo];
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.w..][..x.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], shape: (usize, usize, usize, usize), g: &ConvGeom, ho: usize, wo: usize) -> Act<T> {
    let (c, n, h, w) = shape;
    let mut x = Act::zeros(c, n, h, w);
    let k = g.kernel;
    let cols = n * ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * cols..][..cols];
                for ni in 0..n {
                    let dst = &mut x.data[(ci * n + ni) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &row[(ni * ho + oy) * wo..][..wo];
                        let dst_row = &mut dst[iy as usize * w..][..w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Bias-free convolution. Returns the output and the unfolded input needed
/// by [`conv_backward`].
pub fn conv_forward<T: Scalar>(x: &Act<T>, weight: &[T], g: &ConvGeom) -> (Act<T>, Vec<T>) {
    let (ho, wo) = g.out_size(x.h, x.w);
    let kdim = x.c * g.kernel * g.kernel;
    assert_eq!(weight.len(), g.out_channels * kdim, "conv weight size");
    let col = im2col(x, g, ho, wo);
    let cols = x.n * ho * wo;
    let mut out = Act::zeros(g.out_channels, x.n, ho, wo);
    T::gemm(
        g.out_channels,
        kdim,
        cols,
        weight,
        (kdim as isize, 1),
        &col,
        (cols as isize, 1),
        &mut out.data,
        false,
    );
    (out, col)
}

/// Accumulates the weight gradient into `dweight` and, when `need_input`,
/// returns the input gradient.
pub fn conv_backward<T: Scalar>(
    dout: &Act<T>,
    col: &[T],
    weight: &[T],
    in_shape: (usize, usize, usize, usize),
    g: &ConvGeom,
    dweight: &mut [T],
    need_input: bool,
) -> Option<Act<T>> {
    let (c, _, _, _) = in_shape;
    let kdim = c * g.kernel * g.kernel;
    let cols = dout.plane();
    // dW[cout x kdim] += dOut[cout x cols] * col^T
    T::gemm(
        g.out_channels,
        cols,
        kdim,
        &dout.data,
        (cols as isize, 1),
        col,
        (1, cols as isize),
        dweight,
        true,
    );
    if !need_input {
        return None;
    }
    let mut dcol = vec![T::zero(); kdim * cols];
    // dcol[kdim x cols] = W^T * dOut
    T::gemm(
        kdim,
        g.out_channels,
        cols,
        weight,
        (1, kdim as isize),
        &dout.data,
        (cols as isize, 1),
        &mut dcol,
        false,
    );
    Some(col2im(&dcol, in_shape, g, dout.h, dout.w))
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch statistics observed in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for the running estimate.
    pub var: Vec<f64>,
}

pub fn bn_forward_train<T: Scalar>(x: &Act<T>, gamma: &[T], beta: &[T]) -> (Act<T>, BnCache<T>, BnBatchStats) {
    let p = x.plane();
    let mut out = Act::zeros(x.c, x.n, x.h, x.w);
    let mut xhat = vec![T::zero(); x.data.len()];
    let mut inv_std = Vec::with_capacity(x.c);
    let mut stats = BnBatchStats {
        mean: Vec::with_capacity(x.c),
        var: Vec::with_capacity(x.c),
    };
    for c in 0..x.c {
        let src = x.channel(c);
        let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / p as f64;
        let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / p as f64;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        let (g, b) = (gamma[c].as_f64(), beta[c].as_f64());
        let xh = &mut xhat[c * p..(c + 1) * p];
        let dst = &mut out.data[c * p..(c + 1) * p];
        for ((s, h), d) in src.iter().zip(xh.iter_mut()).zip(dst.iter_mut()) {
            let v = (s.as_f64() - mean) * istd;
            *h = T::from_f64(v);
            *d = T::from_f64(v * g + b);
        }
        inv_std.push(istd);
        stats.mean.push(mean);
        stats
            .var
            .push(if p > 1 { var * p as f64 / (p - 1) as f64 } else { var });
    }
    (out, BnCache { xhat, inv_std }, stats)
}

pub fn bn_forward_eval<T: Scalar>(x: &Act<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Act<T> {
    let p = x.plane();
    let mut out = Act::zeros(x.c, x.n, x.h, x.w);
    for c in 0..x.c {
        let scale = gamma[c].as_f64() / (var[c].as_f64() + BN_EPS).sqrt();
        let shift = beta[c].as_f64() - mean[c].as_f64() * scale;
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        for (d, &v) in out.data[c * p..(c + 1) * p].iter_mut().zip(x.channel(c)) {
            *d = v * s + t;
        }
    }
    out
}

/// Returns the input gradient and accumulates into `dgamma`/`dbeta`.
pub fn bn_backward<T: Scalar>(
    dy: &Act<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Act<T> {
    let p = dy.plane();
    let mut dx = Act::zeros(dy.c, dy.n, dy.h, dy.w);
    for c in 0..dy.c {
        let g = dy.channel(c);
        let xh = &cache.xhat[c * p..(c + 1) * p];
        let sum_dy: f64 = g.iter().map(|v| v.as_f64()).sum();
        let sum_dy_xh: f64 = g.iter().zip(xh).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        dgamma[c] = dgamma[c] + T::from_f64(sum_dy_xh);
        dbeta[c] = dbeta[c] + T::from_f64(sum_dy);
        let k = gamma[c].as_f64() * cache.inv_std[c];
        let (mean_dy, mean_dy_xh) = (sum_dy / p as f64, sum_dy_xh / p as f64);
        for ((d, &gy), &h) in dx.data[c * p..(c + 1) * p].iter_mut().zip(g).zip(xh) {
            *d = T::from_f64(k * (gy.as_f64() - mean_dy - h.as_f64() * mean_dy_xh));
        }
    }
    dx
}

pub fn relu_inplace<T: Scalar>(x: &mut Act<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the rectified output was not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut Act<T>, output: &Act<T>) {
    for (g, &o) in dy.data.iter_mut().zip(&output.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 3x3 stride-2 max pooling with padding 1. Returns the argmax (flat index
/// within each input plane) of every output element.
pub fn maxpool_forward<T: Scalar>(x: &Act<T>) -> (Act<T>, Vec<u32>) {
    let g = ConvGeom {
        out_channels: x.c,
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let (ho, wo) = g.out_size(x.h, x.w);
    let mut out = Act::zeros(x.c, x.n, ho, wo);
    let mut arg = vec![0u32; out.data.len()];
    for plane in 0..x.c * x.n {
        let src = &x.data[plane * x.h * x.w..][..x.h * x.w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let i = iy as usize * x.w + ix as usize;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = plane * ho * wo + oy * wo + ox;
                out.data[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(dy: &Act<T>, arg: &[u32], in_shape: (usize, usize, usize, usize)) -> Act<T> {
    let (c, n, h, w) = in_shape;
    let mut dx = Act::zeros(c, n, h, w);
    let per_out = dy.h * dy.w;
    for plane in 0..c * n {
        let dst = &mut dx.data[plane * h * w..][..h * w];
        for j in 0..per_out {
            let o = plane * per_out + j;
            let i = arg[o] as usize;
            dst[i] = dst[i] + dy.data[o];
        }
    }
    dx
}
