use super::{normal_vec, Act, ParamStore, Scalar};

/// Square-kernel 2-D convolution with zero padding `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

/// Saved input (as an `im2col` matrix or a zero-padded copy) plus input
/// geometry for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<S> {
    col: Vec<S>,
    n: usize,
    h: usize,
    w: usize,
}

/// Zero-padded channel-major layout used by stride-1 convolutions: each
/// channel holds `n` padded images plus a margin on both ends, so every
/// kernel tap is a constant offset into the buffer.
#[derive(Debug, Clone, Copy)]
struct PaddedGeom {
    pad: usize,
    hp: usize,
    wp: usize,
    /// Padded positions per channel (`n * hp * wp`).
    plane: usize,
    margin: usize,
    /// Channel stride including margins.
    stride: usize,
}

impl PaddedGeom {
    fn new(n: usize, h: usize, w: usize, pad: usize) -> Self {
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let plane = n * hp * wp;
        let margin = pad * wp + pad;
        Self {
            pad,
            hp,
            wp,
            plane,
            margin,
            stride: plane + 2 * margin,
        }
    }

    /// Position of interior pixel `(ni, y, x)` within a padded plane.
    fn pos(&self, ni: usize, y: usize, x: usize) -> usize {
        (ni * self.hp + y + self.pad) * self.wp + x + self.pad
    }

    fn tap_start(&self, ky: usize, kx: usize) -> usize {
        // margin + (ky - pad) * wp + (kx - pad), never negative.
        self.margin + ky * self.wp + kx - self.pad * self.wp - self.pad
    }

    fn pad_input<S: Scalar>(&self, x: &Act<S>) -> Vec<S> {
        let mut out = vec![S::zero(); x.c * self.stride];
        for c in 0..x.c {
            let base = c * self.stride + self.margin;
            for ni in 0..x.n {
                for y in 0..x.h {
                    let src = x.idx(c, ni, y, 0);
                    let dst = base + self.pos(ni, y, 0);
                    out[dst..dst + x.w].copy_from_slice(&x.data[src..src + x.w]);
                }
            }
        }
        out
    }
}

impl Conv2d {
    /// Registers weights `[cout][cin*k*k]` drawn from `N(0, gain² / fan_in)`.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let std = gain / (fan_in as f64).sqrt();
        let weight = store.push(format!("{name}.weight"), vec![cout, cin, k, k], normal_vec(rng, cout * fan_in, std));
        let bias = store.push(format!("{name}.bias"), vec![cout], vec![S::zero(); cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
        }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.k) / self.stride + 1, (w + 2 * p - self.k) / self.stride + 1)
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col<S: Scalar>(&self, x: &Act<S>, ho: usize, wo: usize) -> Vec<S> {
        let p = x.n * ho * wo;
        let mut col = vec![S::zero(); self.rows() * p];
        let pad = self.pad() as isize;
        let s = self.stride as isize;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &mut col[r * p..(r + 1) * p];
                    for ni in 0..x.n {
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky as isize - pad;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src = x.idx(ci, ni, iy as usize, 0);
                            let dst = (ni * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = ox as isize * s + kx as isize - pad;
                                if ix >= 0 && ix < x.w as isize {
                                    row[dst + ox] = x.data[src + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<S: Scalar>(&self, dcol: &[S], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Act<S> {
        let mut dx = Act::zeros(self.cin, n, h, w);
        let p = n * ho * wo;
        let pad = self.pad() as isize;
        let s = self.stride as isize;
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &dcol[r * p..(r + 1) * p];
                    for ni in 0..n {
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = dx.idx(ci, ni, iy as usize, 0);
                            let src = (ni * ho + oy) * wo;
                            for ox in 0..wo {
                                let ix = ox as isize * s + kx as isize - pad;
                                if ix >= 0 && ix < w as isize {
                                    let v = &mut dx.data[dst + ix as usize];
                                    *v = *v + row[src + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Stride-1 spatial kernels skip `im2col`: one GEMM per kernel tap on
    /// shifted views of a padded input.
    fn uses_shifted_gemm(&self) -> bool {
        self.stride == 1 && self.k > 1
    }

    fn forward_shifted<S: Scalar>(&self, params: &ParamStore<S>, x: &Act<S>, train: bool) -> (Act<S>, Option<ConvCache<S>>) {
        let g = PaddedGeom::new(x.n, x.h, x.w, self.pad());
        let xpad = g.pad_input(x);
        let w = &params.values[self.weight];
        let kk = self.k * self.k;
        let mut outpad = vec![S::zero(); self.cout * g.plane];
        for ky in 0..self.k {
            for kx in 0..self.k {
                let tap = ky * self.k + kx;
                S::gemm(
                    self.cout,
                    self.cin,
                    g.plane,
                    S::one(),
                    &w[tap..],
                    self.rows() as isize,
                    kk as isize,
                    &xpad[g.tap_start(ky, kx)..],
                    g.stride as isize,
                    1,
                    S::one(),
                    &mut outpad,
                    g.plane as isize,
                    1,
                );
            }
        }
        let b = &params.values[self.bias];
        let mut out = Act::zeros(self.cout, x.n, x.h, x.w);
        for co in 0..self.cout {
            for ni in 0..x.n {
                for y in 0..x.h {
                    let src = co * g.plane + g.pos(ni, y, 0);
                    let dst = out.idx(co, ni, y, 0);
                    for (o, &v) in out.data[dst..dst + x.w].iter_mut().zip(&outpad[src..src + x.w]) {
                        *o = v + b[co];
                    }
                }
            }
        }
        let cache = train.then_some(ConvCache {
            col: xpad,
            n: x.n,
            h: x.h,
            w: x.w,
        });
        (out, cache)
    }

    fn backward_shifted<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        cache: &ConvCache<S>,
        dy: &Act<S>,
        grads: &mut [Vec<S>],
        need_dx: bool,
    ) -> Option<Act<S>> {
        let (n, h, w) = (cache.n, cache.h, cache.w);
        let g = PaddedGeom::new(n, h, w, self.pad());
        let kk = self.k * self.k;
        let mut dypad = vec![S::zero(); self.cout * g.plane];
        let db = &mut grads[self.bias];
        for co in 0..self.cout {
            let mut s = S::zero();
            for ni in 0..n {
                for y in 0..h {
                    let src = dy.idx(co, ni, y, 0);
                    let dst = co * g.plane + g.pos(ni, y, 0);
                    dypad[dst..dst + w].copy_from_slice(&dy.data[src..src + w]);
                    s = s + dy.data[src..src + w].iter().copied().sum();
                }
            }
            db[co] = db[co] + s;
        }
        for ky in 0..self.k {
            for kx in 0..self.k {
                let tap = ky * self.k + kx;
                S::gemm(
                    self.cout,
                    g.plane,
                    self.cin,
                    S::one(),
                    &dypad,
                    g.plane as isize,
                    1,
                    &cache.col[g.tap_start(ky, kx)..],
                    1,
                    g.stride as isize,
                    S::one(),
                    &mut grads[self.weight][tap..],
                    self.rows() as isize,
                    kk as isize,
                );
            }
        }
        if !need_dx {
            return None;
        }
        let wt = &params.values[self.weight];
        let mut dxpad = vec![S::zero(); self.cin * g.stride];
        for ky in 0..self.k {
            for kx in 0..self.k {
                let tap = ky * self.k + kx;
                S::gemm(
                    self.cin,
                    self.cout,
                    g.plane,
                    S::one(),
                    &wt[tap..],
                    kk as isize,
                    self.rows() as isize,
                    &dypad,
                    g.plane as isize,
                    1,
                    S::one(),
                    &mut dxpad[g.tap_start(ky, kx)..],
                    g.stride as isize,
                    1,
                );
            }
        }
        let mut dx = Act::zeros(self.cin, n, h, w);
        for ci in 0..self.cin {
            for ni in 0..n {
                for y in 0..h {
                    let src = ci * g.stride + g.margin + g.pos(ni, y, 0);
                    let dst = dx.idx(ci, ni, y, 0);
                    dx.data[dst..dst + w].copy_from_slice(&dxpad[src..src + w]);
                }
            }
        }
        Some(dx)
    }

    /// Forward pass; the cache is only built when `train` is set.
    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, x: &Act<S>, train: bool) -> (Act<S>, Option<ConvCache<S>>) {
        assert_eq!(x.c, self.cin, "conv input channels");
        if self.uses_shifted_gemm() {
            return self.forward_shifted(params, x, train);
        }
        let (ho, wo) = self.out_dims(x.h, x.w);
        let p = x.n * ho * wo;
        let col = if self.k == 1 && self.stride == 1 {
            x.data.clone()
        } else {
            self.im2col(x, ho, wo)
        };
        let mut out = Act::zeros(self.cout, x.n, ho, wo);
        let w = &params.values[self.weight];
        S::gemm(
            self.cout,
            self.rows(),
            p,
            S::one(),
            w,
            self.rows() as isize,
            1,
            &col,
            p as isize,
            1,
            S::zero(),
            &mut out.data,
            p as isize,
            1,
        );
        let b = &params.values[self.bias];
        for co in 0..self.cout {
            let bc = b[co];
            for v in out.channel_mut(co) {
                *v = *v + bc;
            }
        }
        let cache = train.then_some(ConvCache { col, n: x.n, h: x.h, w: x.w });
        (out, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamStore<S>,
        cache: &ConvCache<S>,
        dy: &Act<S>,
        grads: &mut [Vec<S>],
        need_dx: bool,
    ) -> Option<Act<S>> {
        if self.uses_shifted_gemm() {
            return self.backward_shifted(params, cache, dy, grads, need_dx);
        }
        let (ho, wo) = self.out_dims(cache.h, cache.w);
        let p = cache.n * ho * wo;
        let r = self.rows();
        assert_eq!(dy.data.len(), self.cout * p);
        S::gemm(
            self.cout,
            p,
            r,
            S::one(),
            &dy.data,
            p as isize,
            1,
            &cache.col,
            1,
            p as isize,
            S::one(),
            &mut grads[self.weight],
            r as isize,
            1,
        );
        let db = &mut grads[self.bias];
        for co in 0..self.cout {
            let s: S = dy.channel(co).iter().copied().sum();
            db[co] = db[co] + s;
        }
        if !need_dx {
            return None;
        }
        let mut dcol = vec![S::zero(); r * p];
        S::gemm(
            r,
            self.cout,
            p,
            S::one(),
            &params.values[self.weight],
            1,
            r as isize,
            &dy.data,
            p as isize,
            1,
            S::zero(),
            &mut dcol,
            p as isize,
            1,
        );
        if self.k == 1 && self.stride == 1 {
            return Some(Act::from_data(self.cin, cache.n, cache.h, cache.w, dcol));
        }
        Some(self.col2im(&dcol, cache.n, cache.h, cache.w, ho, wo))
    }
}

/// Dense layer on row-major `[n][din]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, din: usize, dout: usize, gain: f64, rng: &mut impl rand::Rng) -> Self {
        let std = gain / (din as f64).sqrt();
        let weight = store.push(format!("{name}.weight"), vec![dout, din], normal_vec(rng, dout * din, std));
        let bias = store.push(format!("{name}.bias"), vec![dout], vec![S::zero(); dout]);
        Self { weight, bias, din, dout }
    }

    pub fn forward<S: Scalar>(&self, params: &ParamStore<S>, x: &[S], n: usize) -> Vec<S> {
        assert_eq!(x.len(), n * self.din);
        let mut y = vec![S::zero(); n * self.dout];
        let b = &params.values[self.bias];
        for ni in 0..n {
            y[ni * self.dout..(ni + 1) * self.dout].copy_from_slice(b);
        }
        S::gemm(
            n,
            self.din,
            self.dout,
            S::one(),
            x,
            self.din as isize,
            1,
            &params.values[self.weight],
            1,
            self.din as isize,
            S::one(),
            &mut y,
            self.dout as isize,
            1,
        );
        y
    }

    pub fn backward<S: Scalar>(&self, params: &ParamStore<S>, x: &[S], dy: &[S], n: usize, grads: &mut [Vec<S>]) -> Vec<S> {
        S::gemm(
            self.dout,
            n,
            self.din,
            S::one(),
            dy,
            1,
            self.dout as isize,
            x,
            self.din as isize,
            1,
            S::one(),
            &mut grads[self.weight],
            self.din as isize,
            1,
        );
        let db = &mut grads[self.bias];
        for ni in 0..n {
            for o in 0..self.dout {
                db[o] = db[o] + dy[ni * self.dout + o];
            }
        }
        let mut dx = vec![S::zero(); n * self.din];
        S::gemm(
            n,
            self.dout,
            self.din,
            S::one(),
            dy,
            self.dout as isize,
            1,
            &params.values[self.weight],
            self.din as isize,
            1,
            S::zero(),
            &mut dx,
            self.din as isize,
            1,
        );
        dx
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// `x * sigmoid(x)` elementwise.
pub fn silu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Gradient of [`silu`] given its input `x`.
pub fn silu_backward<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (S::one() + v * (S::one() - s))
        })
        .collect()
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2x<S: Scalar>(x: &Act<S>) -> Act<S> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Act::zeros(x.c, x.n, h2, w2);
    for c in 0..x.c {
        for n in 0..x.n {
            for y in 0..h2 {
                let src = x.idx(c, n, y / 2, 0);
                let dst = out.idx(c, n, y, 0);
                for xx in 0..w2 {
                    out.data[dst + xx] = x.data[src + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward<S: Scalar>(dy: &Act<S>) -> Act<S> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Act::zeros(dy.c, dy.n, h, w);
    for c in 0..dy.c {
        for n in 0..dy.n {
            for y in 0..dy.h {
                let src = dy.idx(c, n, y, 0);
                let dst = dx.idx(c, n, y / 2, 0);
                for xx in 0..dy.w {
                    let v = &mut dx.data[dst + xx / 2];
                    *v = *v + dy.data[src + xx];
                }
            }
        }
    }
    dx
}

/// 2x2 average pooling (even input dims).
pub fn avgpool2x<S: Scalar>(x: &Act<S>) -> Act<S> {
    assert!(x.h.is_multiple_of(2) && x.w.is_multiple_of(2), "avgpool needs even dims");
    let (h2, w2) = (x.h / 2, x.w / 2);
    let quarter = S::lit(0.25);
    let mut out = Act::zeros(x.c, x.n, h2, w2);
    for c in 0..x.c {
        for n in 0..x.n {
            for y in 0..h2 {
                let r0 = x.idx(c, n, 2 * y, 0);
                let r1 = r0 + x.w;
                let dst = out.idx(c, n, y, 0);
                for xx in 0..w2 {
                    let s = x.data[r0 + 2 * xx] + x.data[r0 + 2 * xx + 1] + x.data[r1 + 2 * xx] + x.data[r1 + 2 * xx + 1];
                    out.data[dst + xx] = s * quarter;
                }
            }
        }
    }
    out
}

pub fn avgpool2x_backward<S: Scalar>(dy: &Act<S>) -> Act<S> {
    let quarter = S::lit(0.25);
    let mut dx = upsample2x(dy);
    dx.data.iter_mut().for_each(|v| *v = *v * quarter);
    dx
}

pub fn concat_channels<S: Scalar>(a: &Act<S>, b: &Act<S>) -> Act<S> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat geometry");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Act::from_data(a.c + b.c, a.n, a.h, a.w, data)
}

pub fn split_channels<S: Scalar>(x: &Act<S>, first: usize) -> (Act<S>, Act<S>) {
    let cut = first * x.plane();
    (
        Act::from_data(first, x.n, x.h, x.w, x.data[..cut].to_vec()),
        Act::from_data(x.c - first, x.n, x.h, x.w, x.data[cut..].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn naive_conv(conv: &Conv2d, p: &ParamStore<f64>, x: &Act<f64>) -> Act<f64> {
        let (ho, wo) = conv.out_dims(x.h, x.w);
        let mut out = Act::zeros(conv.cout, x.n, ho, wo);
        let w = &p.values[conv.weight];
        let b = &p.values[conv.bias];
        let pad = (conv.k / 2) as isize;
        for co in 0..conv.cout {
            for n in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..conv.cin {
                            for ky in 0..conv.k {
                                for kx in 0..conv.k {
                                    let iy = (oy * conv.stride) as isize + ky as isize - pad;
                                    let ix = (ox * conv.stride) as isize + kx as isize - pad;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += w[((co * conv.cin + ci) * conv.k + ky) * conv.k + kx] * x.data[x.idx(ci, n, iy as usize, ix as usize)];
                                    }
                                }
                            }
                        }
                        let i = out.idx(co, n, oy, ox);
                        out.data[i] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = rng_from_seed(1);
        for &(k, stride) in &[(3, 1), (3, 2), (1, 1), (5, 1)] {
            let mut p = ParamStore::<f64>::default();
            let conv = Conv2d::new(&mut p, "c", 2, 3, k, stride, 1.0, &mut rng);
            p.values[conv.bias] = vec![0.1, -0.2, 0.3];
            let x = Act::from_data(2, 2, 6, 6, normal_vec(&mut rng, 2 * 2 * 36, 1.0));
            let (y, _) = conv.forward(&p, &x, false);
            let want = naive_conv(&conv, &p, &x);
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = rng_from_seed(2);
        for &(k, stride) in &[(3, 1), (3, 2), (1, 1), (5, 1)] {
            let mut p = ParamStore::<f64>::default();
            let conv = Conv2d::new(&mut p, "c", 2, 2, k, stride, 1.0, &mut rng);
            let x = Act::from_data(2, 1, 4, 4, normal_vec(&mut rng, 32, 1.0));
            let (y, cache) = conv.forward(&p, &x, true);
            // loss = sum(y * r) for a fixed random r
            let r: Vec<f64> = normal_vec(&mut rng, y.data.len(), 1.0);
            let dy = Act::from_data(y.c, y.n, y.h, y.w, r.clone());
            let mut grads = p.zeros_like();
            let dx = conv.backward(&p, cache.as_ref().unwrap(), &dy, &mut grads, true).unwrap();
            let loss = |p: &ParamStore<f64>, x: &Act<f64>| -> f64 { conv.forward(p, x, false).0.data.iter().zip(&r).map(|(a, b)| a * b).sum() };
            let eps = 1e-6;
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let mut xm = x.clone();
                xm.data[i] -= eps;
                let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * eps);
                assert!((fd - dx.data[i]).abs() < 1e-6, "dx[{i}] {fd} vs {}", dx.data[i]);
            }
            for t in [conv.weight, conv.bias] {
                for i in 0..p.values[t].len() {
                    let mut pp = p.clone();
                    pp.values[t][i] += eps;
                    let mut pm = p.clone();
                    pm.values[t][i] -= eps;
                    let fd = (loss(&pp, &x) - loss(&pm, &x)) / (2.0 * eps);
                    assert!((fd - grads[t][i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let mut p = ParamStore::<f64>::default();
        let lin = Linear::new(&mut p, "l", 3, 2, 1.0, &mut rng);
        let x: Vec<f64> = normal_vec(&mut rng, 6, 1.0);
        let r: Vec<f64> = normal_vec(&mut rng, 4, 1.0);
        let mut grads = p.zeros_like();
        let dx = lin.backward(&p, &x, &r, 2, &mut grads);
        let loss = |p: &ParamStore<f64>, x: &[f64]| -> f64 { lin.forward(p, x, 2).iter().zip(&r).map(|(a, b)| a * b).sum() };
        let eps = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            assert!(((loss(&p, &xp) - loss(&p, &xm)) / (2.0 * eps) - dx[i]).abs() < 1e-6);
        }
        for i in 0..6 {
            let mut pp = p.clone();
            pp.values[lin.weight][i] += eps;
            let mut pm = p.clone();
            pm.values[lin.weight][i] -= eps;
            assert!(((loss(&pp, &x) - loss(&pm, &x)) / (2.0 * eps) - grads[lin.weight][i]).abs() < 1e-6);
        }
    }

    #[test]
    fn silu_gradient() {
        let x = [-3.0f64, -0.5, 0.0, 0.7, 4.0];
        let g = silu_backward(&x, &[1.0; 5]);
        for (i, &xi) in x.iter().enumerate() {
            let eps = 1e-6;
            let fd = (silu(&[xi + eps])[0] - silu(&[xi - eps])[0]) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn upsample_and_concat() {
        let x = Act::from_data(1, 1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let u = upsample2x(&x);
        assert_eq!(u.data[..4], [1.0, 1.0, 2.0, 2.0]);
        let d = upsample2x_backward(&u);
        assert_eq!(d.data, vec![4.0, 8.0, 12.0, 16.0]);
        let c = concat_channels(&x, &x);
        let (a, b) = split_channels(&c, 1);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn avgpool_and_adjoint() {
        let x = Act::from_data(1, 1, 2, 4, vec![1.0f64, 3.0, 5.0, 7.0, 1.0, 3.0, 5.0, 7.0]);
        let p = avgpool2x(&x);
        assert_eq!(p.data, vec![2.0, 6.0]);
        // <pool(x), r> = <x, pool^T(r)>
        let r = Act::from_data(1, 1, 1, 2, vec![0.5, -2.0]);
        let lhs: f64 = p.data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
        let back = avgpool2x_backward(&r);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
