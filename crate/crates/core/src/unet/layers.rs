//! Batched NCHW kernels: same-padded convolution, batch norm, ReLU,
//! 2x2 max-pool and 2x2 stride-2 transposed convolution, each with its
//! backward pass.

use crate::scalar::Real;

/// Dense `N x C x H x W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let o = (n * self.c + c) * p;
        &self.data[o..o + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let o = (n * self.c + c) * p;
        &mut self.data[o..o + p]
    }

    /// Channel concatenation `[a, b]` per batch item.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        debug_assert!(a.n == b.n && a.h == b.h && a.w == b.w);
        let mut out = Self::zeros(a.n, a.c + b.c, a.h, a.w);
        let p = a.plane_len();
        for n in 0..a.n {
            let dst = &mut out.data[n * (a.c + b.c) * p..(n + 1) * (a.c + b.c) * p];
            dst[..a.c * p].copy_from_slice(&a.data[n * a.c * p..(n + 1) * a.c * p]);
            dst[a.c * p..].copy_from_slice(&b.data[n * b.c * p..(n + 1) * b.c * p]);
        }
        out
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let p = self.plane_len();
        let second = self.c - first;
        let mut a = Self::zeros(self.n, first, self.h, self.w);
        let mut b = Self::zeros(self.n, second, self.h, self.w);
        for n in 0..self.n {
            let src = &self.data[n * self.c * p..(n + 1) * self.c * p];
            a.data[n * first * p..(n + 1) * first * p].copy_from_slice(&src[..first * p]);
            b.data[n * second * p..(n + 1) * second * p].copy_from_slice(&src[first * p..]);
        }
        (a, b)
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Valid output range along one axis for kernel tap `t` with padding `pad`.
#[inline]
fn tap_range(len: usize, t: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t);
    let hi = (len + pad).saturating_sub(t).min(len);
    (lo, hi.max(lo))
}

/// Square `k x k` convolution, stride 1, zero padding `k / 2`.
/// Weights are `[cout][cin][k][k]`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Tensor<T> {
    let (cin, h, w) = (x.c, x.h, x.w);
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let pad = k / 2;
    let mut y = Tensor::zeros(x.n, cout, h, w);
    for n in 0..x.n {
        for co in 0..cout {
            let out = y.plane_mut(n, co);
            out.fill(bias[co]);
            for ci in 0..cin {
                let inp = x.plane(n, ci);
                for ky in 0..k {
                    let (y0, y1) = tap_range(h, ky, pad);
                    for kx in 0..k {
                        let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                        let (x0, x1) = tap_range(w, kx, pad);
                        if x0 >= x1 {
                            continue;
                        }
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let ix0 = x0 + kx - pad;
                            axpy(
                                wv,
                                &inp[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                                &mut out[oy * w + x0..oy * w + x1],
                            );
                        }
                    }
                }
            }
        }
    }
    y
}

/// Backward of [`conv_forward`]: returns `dx` and accumulates into `dw`, `db`.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (cin, h, w) = (x.c, x.h, x.w);
    let cout = dy.c;
    let pad = k / 2;
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, cin, h, w));
    for n in 0..x.n {
        for co in 0..cout {
            let g = dy.plane(n, co);
            db[co] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let inp = x.plane(n, ci);
                for ky in 0..k {
                    let (y0, y1) = tap_range(h, ky, pad);
                    for kx in 0..k {
                        let widx = ((co * cin + ci) * k + ky) * k + kx;
                        let (x0, x1) = tap_range(w, kx, pad);
                        if x0 >= x1 {
                            continue;
                        }
                        let ix0 = x0 + kx - pad;
                        let len = x1 - x0;
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            acc += dot(&g[oy * w + x0..oy * w + x1], &inp[iy * w + ix0..iy * w + ix0 + len]);
                        }
                        dw[widx] += acc;
                        if let Some(dx) = dx.as_mut() {
                            let wv = weight[widx];
                            let d = dx.plane_mut(n, ci);
                            for oy in y0..y1 {
                                let iy = oy + ky - pad;
                                axpy(
                                    wv,
                                    &g[oy * w + x0..oy * w + x1],
                                    &mut d[iy * w + ix0..iy * w + ix0 + len],
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Per-batch statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Training-mode batch norm using batch statistics over `N x H x W`.
pub fn bn_forward_train<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T]) -> (Tensor<T>, BnCache<T>) {
    let count = T::from_usize_lossy(x.n * x.plane_len());
    let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut x_hat = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut inv_std = vec![T::zero(); x.c];
    let mut means = vec![T::zero(); x.c];
    let mut vars = vec![T::zero(); x.c];
    for c in 0..x.c {
        let mut s = T::zero();
        for n in 0..x.n {
            s += x.plane(n, c).iter().copied().sum::<T>();
        }
        let mean = s / count;
        let mut v = T::zero();
        for n in 0..x.n {
            v += x.plane(n, c).iter().map(|&a| (a - mean) * (a - mean)).sum::<T>();
        }
        let var = v / count;
        let is = T::one() / (var + T::lit(BN_EPS)).sqrt();
        for n in 0..x.n {
            let src = x.plane(n, c);
            let xh = x_hat.plane_mut(n, c);
            for (o, &a) in xh.iter_mut().zip(src) {
                *o = (a - mean) * is;
            }
            let xh = x_hat.plane(n, c).to_vec();
            for (o, a) in y.plane_mut(n, c).iter_mut().zip(xh) {
                *o = gamma[c] * a + beta[c];
            }
        }
        inv_std[c] = is;
        means[c] = mean;
        vars[c] = var;
    }
    (
        y,
        BnCache {
            x_hat,
            inv_std,
            mean: means,
            var: vars,
        },
    )
}

/// Inference-mode batch norm with running statistics.
pub fn bn_forward_eval<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], mean: &[T], var: &[T]) -> Tensor<T> {
    let mut y = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            let is = T::one() / (var[c] + T::lit(BN_EPS)).sqrt();
            let (g, b, m) = (gamma[c] * is, beta[c], mean[c]);
            for v in y.plane_mut(n, c) {
                *v = g * (*v - m) + b;
            }
        }
    }
    y
}

pub fn bn_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let count = dy.n * dy.plane_len();
    let m = T::from_usize_lossy(count);
    let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
    for c in 0..dy.c {
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for n in 0..dy.n {
            let g = dy.plane(n, c);
            sg += g.iter().copied().sum::<T>();
            sgx += dot(g, cache.x_hat.plane(n, c));
        }
        dgamma[c] += sgx;
        dbeta[c] += sg;
        let k = gamma[c] * cache.inv_std[c] / m;
        for n in 0..dy.n {
            let g = dy.plane(n, c).to_vec();
            let xh = cache.x_hat.plane(n, c).to_vec();
            for ((o, gv), xv) in dx.plane_mut(n, c).iter_mut().zip(g).zip(xh) {
                *o = k * (m * gv - sg - xv * sgx);
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero the gradient where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(dy: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool, stride 2; returns the winning tap (0..4) per output.
pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, h2, w2);
    let mut arg = vec![0u8; y.data.len()];
    let mut o = 0;
    for n in 0..x.n {
        for c in 0..x.c {
            let p = x.plane(n, c);
            for i in 0..h2 {
                for j in 0..w2 {
                    let taps = [
                        p[2 * i * x.w + 2 * j],
                        p[2 * i * x.w + 2 * j + 1],
                        p[(2 * i + 1) * x.w + 2 * j],
                        p[(2 * i + 1) * x.w + 2 * j + 1],
                    ];
                    let mut best = 0;
                    for t in 1..4 {
                        if taps[t] > taps[best] {
                            best = t;
                        }
                    }
                    y.data[o] = taps[best];
                    arg[o] = best as u8;
                    o += 1;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Real>(dy: &Tensor<T>, arg: &[u8], h: usize, w: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    let mut o = 0;
    for n in 0..dy.n {
        for c in 0..dy.c {
            let d = dx.plane_mut(n, c);
            for i in 0..dy.h {
                for j in 0..dy.w {
                    let t = arg[o] as usize;
                    d[(2 * i + t / 2) * w + 2 * j + t % 2] += dy.data[o];
                    o += 1;
                }
            }
        }
    }
    dx
}

/// 2x2 stride-2 transposed convolution; weights are `[cin][cout][2][2]`.
pub fn upconv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Tensor<T> {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut y = Tensor::zeros(x.n, cout, h2, w2);
    let mut row = vec![T::zero(); x.w];
    for n in 0..x.n {
        for co in 0..cout {
            let out = y.plane_mut(n, co);
            out.fill(bias[co]);
            for ci in 0..x.c {
                let inp = x.plane(n, ci);
                for a in 0..2 {
                    for b in 0..2 {
                        let wv = weight[((ci * cout + co) * 2 + a) * 2 + b];
                        for i in 0..x.h {
                            for (r, &v) in row.iter_mut().zip(&inp[i * x.w..(i + 1) * x.w]) {
                                *r = wv * v;
                            }
                            let dst = &mut out[(2 * i + a) * w2..(2 * i + a + 1) * w2];
                            for (j, &r) in row.iter().enumerate() {
                                dst[2 * j + b] += r;
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn upconv_backward<T: Real>(x: &Tensor<T>, weight: &[T], dy: &Tensor<T>, dw: &mut [T], db: &mut [T]) -> Tensor<T> {
    let cout = dy.c;
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    let mut gsub = vec![T::zero(); x.plane_len()];
    for n in 0..x.n {
        for co in 0..cout {
            let g = dy.plane(n, co);
            db[co] += g.iter().copied().sum::<T>();
            for a in 0..2 {
                for b in 0..2 {
                    for i in 0..x.h {
                        for j in 0..x.w {
                            gsub[i * x.w + j] = g[(2 * i + a) * dy.w + 2 * j + b];
                        }
                    }
                    for ci in 0..x.c {
                        let widx = ((ci * cout + co) * 2 + a) * 2 + b;
                        dw[widx] += dot(&gsub, x.plane(n, ci));
                        axpy(weight[widx], &gsub, dx.plane_mut(n, ci));
                    }
                }
            }
        }
    }
    dx
}
