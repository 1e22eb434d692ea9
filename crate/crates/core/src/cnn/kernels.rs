//! Batched 1-D kernels on `[batch, channel, position]` buffers.
//!
//! Inputs are read through a per-sample stride so that a dense block can feed
//! a channel prefix of its concatenation buffer to a layer without copying.

use crate::scalar::Scalar;

/// Strided read-only view of `channels` channels per sample.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub n: usize,
    pub channels: usize,
    pub len: usize,
    /// Distance between consecutive samples.
    pub stride: usize,
}

impl<'a, T: Scalar> View<'a, T> {
    pub fn dense(data: &'a [T], n: usize, channels: usize, len: usize) -> Self {
        View {
            data,
            n,
            channels,
            len,
            stride: channels * len,
        }
    }

    #[inline]
    pub fn row(&self, b: usize, c: usize) -> &'a [T] {
        let o = b * self.stride + c * self.len;
        &self.data[o..o + self.len]
    }
}

/// Convolution geometry.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub l_in: usize,
    pub l_out: usize,
}

impl Conv {
    /// Output positions `l` for which tap `k` reads inside the input.
    #[inline]
    fn valid(&self, tap: usize) -> (usize, usize) {
        let lo = if self.pad > tap {
            (self.pad - tap).div_ceil(self.stride)
        } else {
            0
        };
        let last_in = self.l_in + self.pad;
        let hi = if last_in > tap {
            ((last_in - tap - 1) / self.stride + 1).min(self.l_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// `out[b, off + o, l] = sum_{c,k} w[o, c, k] x[b, c, l*s + k - p]`, with
/// `out` holding `out_channels` channels per sample.
pub(crate) fn conv_forward<T: Scalar>(
    g: &Conv,
    x: View<'_, T>,
    w: &[T],
    out: &mut [T],
    out_channels: usize,
    off: usize,
) {
    let (lo_len, s) = (g.l_out, g.stride);
    for b in 0..x.n {
        for o in 0..g.c_out {
            let base = (b * out_channels + off + o) * lo_len;
            let dst = &mut out[base..base + lo_len];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for c in 0..g.c_in {
                let src = x.row(b, c);
                let wrow = &w[(o * g.c_in + c) * g.k..(o * g.c_in + c + 1) * g.k];
                for (tap, &wk) in wrow.iter().enumerate() {
                    let (lo, hi) = g.valid(tap);
                    if s == 1 {
                        let shift = lo + tap - g.pad;
                        for (d, &v) in dst[lo..hi].iter_mut().zip(&src[shift..shift + hi - lo]) {
                            *d += wk * v;
                        }
                    } else {
                        for l in lo..hi {
                            dst[l] += wk * src[l * s + tap - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `dw` and (optionally) writes `dx` (dense, `[n, c_in, l_in]`)
/// from `dout`, read with `dout_channels` channels per sample at offset `off`.
pub(crate) fn conv_backward<T: Scalar>(
    g: &Conv,
    x: View<'_, T>,
    w: &[T],
    dout: &[T],
    dout_channels: usize,
    off: usize,
    dw: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let s = g.stride;
    if let Some(dx) = dx.as_deref_mut() {
        dx.iter_mut().for_each(|v| *v = T::zero());
    }
    for b in 0..x.n {
        for o in 0..g.c_out {
            let base = (b * dout_channels + off + o) * g.l_out;
            let dy = &dout[base..base + g.l_out];
            for c in 0..g.c_in {
                let src = x.row(b, c);
                let wi = (o * g.c_in + c) * g.k;
                for tap in 0..g.k {
                    let (lo, hi) = g.valid(tap);
                    let mut acc = T::zero();
                    if s == 1 {
                        let shift = lo + tap - g.pad;
                        for (&d, &v) in dy[lo..hi].iter().zip(&src[shift..shift + hi - lo]) {
                            acc += d * v;
                        }
                    } else {
                        for l in lo..hi {
                            acc += dy[l] * src[l * s + tap - g.pad];
                        }
                    }
                    dw[wi + tap] += acc;
                    if let Some(dx) = dx.as_deref_mut() {
                        let wk = w[wi + tap];
                        let row = &mut dx[(b * g.c_in + c) * g.l_in..(b * g.c_in + c + 1) * g.l_in];
                        if s == 1 {
                            let shift = lo + tap - g.pad;
                            for (r, &d) in row[shift..shift + hi - lo].iter_mut().zip(&dy[lo..hi]) {
                                *r += wk * d;
                            }
                        } else {
                            for l in lo..hi {
                                row[l * s + tap - g.pad] += wk * dy[l];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel normalization constants used by one batch-norm application.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BnStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Biased batch variance (train mode only).
    pub batch_var: Vec<T>,
    pub count: usize,
}

/// Mean and biased variance of each channel over samples and positions.
pub(crate) fn batch_moments<T: Scalar>(x: View<'_, T>) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize_lossy(x.n * x.len);
    let mut mean = vec![T::zero(); x.channels];
    let mut var = vec![T::zero(); x.channels];
    for c in 0..x.channels {
        let mut s = T::zero();
        for b in 0..x.n {
            s += x.row(b, c).iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..x.n {
            v += x.row(b, c).iter().map(|&e| (e - m) * (e - m)).sum::<T>();
        }
        mean[c] = m;
        var[c] = v / count;
    }
    (mean, var)
}

/// `y = relu(gamma * (x - mean) * inv_std + beta)` into dense `out`.
pub(crate) fn bn_relu_forward<T: Scalar>(x: View<'_, T>, stats: &BnStats<T>, gamma: &[T], beta: &[T], out: &mut [T]) {
    for b in 0..x.n {
        for c in 0..x.channels {
            let (m, is, g, be) = (stats.mean[c], stats.inv_std[c], gamma[c], beta[c]);
            let dst = &mut out[(b * x.channels + c) * x.len..(b * x.channels + c + 1) * x.len];
            for (d, &v) in dst.iter_mut().zip(x.row(b, c)) {
                *d = (g * (v - m) * is + be).max(T::zero());
            }
        }
    }
}

/// Backward through `relu(bn(x))`. `dy` is the gradient at the ReLU output
/// and `y` the ReLU output (both dense). Adds `dx` into `dx_out`, which has
/// `dx_channels` channels per sample. Train mode differentiates through the
/// batch statistics; eval mode treats them as constants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_relu_backward<T: Scalar>(
    x: View<'_, T>,
    y: &[T],
    dy: &[T],
    stats: &BnStats<T>,
    gamma: &[T],
    train: bool,
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx_out: &mut [T],
    dx_channels: usize,
) {
    let (n, len, ch) = (x.n, x.len, x.channels);
    let count = T::from_usize_lossy(n * len);
    let mut dz = vec![T::zero(); len];
    for c in 0..ch {
        let (m, is, g) = (stats.mean[c], stats.inv_std[c], gamma[c]);
        // sums of dz and dz * x_hat over the channel
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for b in 0..n {
            let o = (b * ch + c) * len;
            for ((&yy, &d), &v) in y[o..o + len].iter().zip(&dy[o..o + len]).zip(x.row(b, c)) {
                let dzz = if yy > T::zero() { d } else { T::zero() };
                s1 += dzz;
                s2 += dzz * (v - m) * is;
            }
        }
        dgamma[c] += s2;
        dbeta[c] += s1;
        for b in 0..n {
            let o = (b * ch + c) * len;
            for ((z, &yy), &d) in dz.iter_mut().zip(&y[o..o + len]).zip(&dy[o..o + len]) {
                *z = if yy > T::zero() { d } else { T::zero() };
            }
            let dst_o = (b * dx_channels + c) * len;
            let dst = &mut dx_out[dst_o..dst_o + len];
            if train {
                let k = g * is / count;
                for ((d, &z), &v) in dst.iter_mut().zip(&dz).zip(x.row(b, c)) {
                    let xh = (v - m) * is;
                    *d += k * (count * z - s1 - xh * s2);
                }
            } else {
                let k = g * is;
                for (d, &z) in dst.iter_mut().zip(&dz) {
                    *d += k * z;
                }
            }
        }
    }
}

/// Max pooling; returns outputs and the flat input index of each winner.
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &[T],
    n: usize,
    ch: usize,
    l_in: usize,
    k: usize,
    s: usize,
    p: usize,
    l_out: usize,
) -> (Vec<T>, Vec<usize>) {
    let mut out = vec![T::zero(); n * ch * l_out];
    let mut arg = vec![0usize; n * ch * l_out];
    for row in 0..n * ch {
        let src = &x[row * l_in..(row + 1) * l_in];
        for l in 0..l_out {
            let start = (l * s).saturating_sub(p);
            let end = (l * s + k - p).min(l_in);
            let mut best = start;
            for i in start + 1..end {
                if src[i] > src[best] {
                    best = i;
                }
            }
            out[row * l_out + l] = src[best];
            arg[row * l_out + l] = row * l_in + best;
        }
    }
    (out, arg)
}

/// Non-overlapping average pooling of width 2 (a trailing odd sample is
/// dropped).
pub(crate) fn avgpool2_forward<T: Scalar>(x: &[T], rows: usize, l_in: usize) -> Vec<T> {
    let l_out = l_in / 2;
    let half = T::lit(0.5);
    let mut out = vec![T::zero(); rows * l_out];
    for r in 0..rows {
        for l in 0..l_out {
            out[r * l_out + l] = half * (x[r * l_in + 2 * l] + x[r * l_in + 2 * l + 1]);
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Scalar>(dy: &[T], rows: usize, l_in: usize) -> Vec<T> {
    let l_out = l_in / 2;
    let half = T::lit(0.5);
    let mut dx = vec![T::zero(); rows * l_in];
    for r in 0..rows {
        for l in 0..l_out {
            let g = half * dy[r * l_out + l];
            dx[r * l_in + 2 * l] = g;
            dx[r * l_in + 2 * l + 1] = g;
        }
    }
    dx
}
