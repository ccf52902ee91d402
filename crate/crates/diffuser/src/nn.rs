//! Layers with hand-written forward and backward passes.
//!
//! Activations are channel-major (`C x H x W`). Every layer owns a slice
//! of one flat parameter vector, addressed by offsets, and accumulates its
//! gradients into a vector of the same layout.

use crate::scalar::{matmul, Scalar};

pub const GN_EPS: f64 = 1e-5;

/// 3x3 convolution, zero padding 1, stride 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Conv3x3 {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    /// Output columns `lo..hi` whose input column `ox * stride + kx - 1`
    /// falls inside `0..w`.
    fn valid_cols(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let lo = if kx == 0 { 1 } else { 0 };
        let hi = if kx > w {
            0
        } else {
            ((w - kx) / self.stride + 1).min(wo)
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, x: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = self.out_dims(h, w);
        let plane = ho * wo;
        let s = self.stride;
        let mut col = vec![T::zero(); self.cin * 9 * plane];
        for ci in 0..self.cin {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    let row = &mut col[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                    for oy in 0..ho {
                        let iy = oy * s + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let src_row = &src[(iy - 1) * w..][..w];
                        let dst = &mut row[oy * wo..][..wo];
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&src_row[lo + kx - 1..hi + kx - 1]);
                        } else {
                            for ox in lo..hi {
                                dst[ox] = src_row[ox * s + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, col: &[T], h: usize, w: usize) -> Vec<T> {
        let (ho, wo) = self.out_dims(h, w);
        let plane = ho * wo;
        let s = self.stride;
        let mut x = vec![T::zero(); self.cin * h * w];
        for ci in 0..self.cin {
            let dst = &mut x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    let row = &col[((ci * 9) + ky * 3 + kx) * plane..][..plane];
                    for oy in 0..ho {
                        let iy = oy * s + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let dst_row = &mut dst[(iy - 1) * w..][..w];
                        let src = &row[oy * wo..][..wo];
                        if s == 1 {
                            for (d, v) in dst_row[lo + kx - 1..hi + kx - 1].iter_mut().zip(&src[lo..hi]) {
                                *d += *v;
                            }
                        } else {
                            for ox in lo..hi {
                                dst_row[ox * s + kx - 1] += src[ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(x.len(), self.cin * h * w);
        let (ho, wo) = self.out_dims(h, w);
        let plane = ho * wo;
        let col = self.im2col(x, h, w);
        let mut y = vec![T::zero(); self.cout * plane];
        for (co, chunk) in y.chunks_exact_mut(plane).enumerate() {
            chunk.fill(params[self.b_off + co]);
        }
        let wts = &params[self.w_off..self.w_off + self.weight_len()];
        matmul(self.cout, self.cin * 9, plane, wts, false, &col, false, &mut y, true);
        (y, col)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        col: &[T],
        dy: &[T],
        h: usize,
        w: usize,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let (ho, wo) = self.out_dims(h, w);
        let plane = ho * wo;
        let k = self.cin * 9;
        matmul(
            self.cout,
            plane,
            k,
            dy,
            false,
            col,
            true,
            &mut grads[self.w_off..self.w_off + self.weight_len()],
            true,
        );
        for (co, chunk) in dy.chunks_exact(plane).enumerate() {
            let mut s = T::zero();
            for v in chunk {
                s += *v;
            }
            grads[self.b_off + co] += s;
        }
        if !need_dx {
            return None;
        }
        let mut dcol = vec![T::zero(); k * plane];
        let wts = &params[self.w_off..self.w_off + self.weight_len()];
        matmul(k, self.cout, plane, wts, true, dy, false, &mut dcol, false);
        Some(self.col2im(&dcol, h, w))
    }
}

/// Group normalisation with per-channel affine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub g_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl GroupNorm {
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], hw: usize) -> (Vec<T>, GroupNormCache<T>) {
        let per = self.channels / self.groups;
        let n = per * hw;
        let nt = T::of(n as f64);
        let eps = T::of(GN_EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let xs = &x[g * n..(g + 1) * n];
            let mut mean = T::zero();
            for v in xs {
                mean += *v;
            }
            mean = mean / nt;
            let mut var = T::zero();
            for v in xs {
                let d = *v - mean;
                var += d * d;
            }
            var = var / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for c in g * per..(g + 1) * per {
                let (gamma, beta) = (params[self.g_off + c], params[self.b_off + c]);
                for i in c * hw..(c + 1) * hw {
                    let xh = (x[i] - mean) * is;
                    xhat[i] = xh;
                    y[i] = gamma * xh + beta;
                }
            }
        }
        (y, GroupNormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        grads: &mut [T],
        cache: &GroupNormCache<T>,
        dy: &[T],
        hw: usize,
    ) -> Vec<T> {
        let per = self.channels / self.groups;
        let n = per * hw;
        let nt = T::of(n as f64);
        let mut dx = vec![T::zero(); dy.len()];
        let mut sums = vec![(T::zero(), T::zero()); self.channels];
        for (c, (sd, sdx)) in sums.iter_mut().enumerate() {
            for i in c * hw..(c + 1) * hw {
                *sd += dy[i];
                *sdx += dy[i] * cache.xhat[i];
            }
            grads[self.g_off + c] += *sdx;
            grads[self.b_off + c] += *sd;
        }
        for g in 0..self.groups {
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for c in g * per..(g + 1) * per {
                let gamma = params[self.g_off + c];
                mean_d += gamma * sums[c].0;
                mean_dx += gamma * sums[c].1;
            }
            mean_d = mean_d / nt;
            mean_dx = mean_dx / nt;
            let is = cache.inv_std[g];
            for c in g * per..(g + 1) * per {
                let gamma = params[self.g_off + c];
                for i in c * hw..(c + 1) * hw {
                    dx[i] = is * (dy[i] * gamma - mean_d - cache.xhat[i] * mean_dx);
                }
            }
        }
        dx
    }
}

/// `y = W x + b` with `W` stored `out x inp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T]) -> Vec<T> {
        let mut y = params[self.b_off..self.b_off + self.out].to_vec();
        matmul(
            self.out,
            self.inp,
            1,
            &params[self.w_off..],
            false,
            x,
            false,
            &mut y,
            true,
        );
        y
    }

    pub fn backward<T: Scalar>(&self, params: &[T], grads: &mut [T], x: &[T], dy: &[T]) -> Vec<T> {
        matmul(
            self.out,
            1,
            self.inp,
            dy,
            false,
            x,
            false,
            &mut grads[self.w_off..self.w_off + self.out * self.inp],
            true,
        );
        for (g, d) in grads[self.b_off..self.b_off + self.out].iter_mut().zip(dy) {
            *g += *d;
        }
        let mut dx = vec![T::zero(); self.inp];
        matmul(
            self.inp,
            self.out,
            1,
            &params[self.w_off..],
            true,
            dy,
            false,
            &mut dx,
            false,
        );
        dx
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|v| *v * sigmoid(*v)).collect()
}

/// Gradient through `silu`, given its input.
pub fn silu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(v, d)| {
            let s = sigmoid(*v);
            *d * s * (T::one() + *v * (T::one() - s))
        })
        .collect()
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h * 2, w * 2);
    let mut y = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for yy in 0..h2 {
            for xx in 0..w2 {
                y[ch * h2 * w2 + yy * w2 + xx] = x[ch * h * w + (yy / 2) * w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h * 2, w * 2);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for yy in 0..h2 {
            for xx in 0..w2 {
                dx[ch * h * w + (yy / 2) * w + xx / 2] += dy[ch * h2 * w2 + yy * w2 + xx];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of a diffusion step, half sines then half cosines.
pub fn timestep_embedding<T: Scalar>(k: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let a = k as f64 * freq;
        out[i] = T::of(a.sin());
        out[half + i] = T::of(a.cos());
    }
    out
}
