//! Small convolutional network toolkit with hand-written gradients.
//!
//! Activations use a channel-major batch layout `[C][N][H][W]`, which turns
//! every 2-D convolution over a whole batch into one GEMM after `im2col`.

mod adam;
mod layers;
pub(crate) mod params;

pub use adam::{cosine_lr, Adam, AdamConfig};
pub use layers::{
    avgpool2x, avgpool2x_backward, concat_channels, silu, silu_backward, split_channels, upsample2x, upsample2x_backward, Conv2d, ConvCache, Linear,
};
pub use params::{ParamEntry, ParamStore};

use num_traits::Float;

/// Floating point element usable by the network code.
pub trait Scalar: Float + Default + std::fmt::Debug + Send + Sync + std::iter::Sum + 'static {
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn lit(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand extent was checked against its slice above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Batch of feature maps in `[C][N][H][W]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<S> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Act<S> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![S::zero(); c * n * h * w],
        }
    }

    pub fn from_data(c: usize, n: usize, h: usize, w: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), c * n * h * w);
        Self { c, n, h, w, data }
    }

    /// Elements per channel across the batch.
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn idx(&self, c: usize, n: usize, y: usize, x: usize) -> usize {
        ((c * self.n + n) * self.h + y) * self.w + x
    }

    pub fn channel(&self, c: usize) -> &[S] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Add a per-(channel, sample) bias `bias[n][c]`.
    pub fn add_sample_bias(&mut self, bias: &[S]) {
        let hw = self.h * self.w;
        assert_eq!(bias.len(), self.n * self.c);
        for c in 0..self.c {
            for n in 0..self.n {
                let b = bias[n * self.c + c];
                let start = (c * self.n + n) * hw;
                for v in &mut self.data[start..start + hw] {
                    *v = *v + b;
                }
            }
        }
    }

    /// Gradient of [`Self::add_sample_bias`]: sums over space, `[n][c]`.
    pub fn sample_bias_grad(&self) -> Vec<S> {
        let hw = self.h * self.w;
        let mut out = vec![S::zero(); self.n * self.c];
        for c in 0..self.c {
            for n in 0..self.n {
                let start = (c * self.n + n) * hw;
                out[n * self.c + c] = self.data[start..start + hw].iter().copied().sum();
            }
        }
        out
    }

    /// Per-sample flattened features `[n][c*h*w]`.
    pub fn flatten(&self) -> Vec<S> {
        let hw = self.h * self.w;
        let per = self.c * hw;
        let mut out = vec![S::zero(); self.n * per];
        for c in 0..self.c {
            for n in 0..self.n {
                let src = (c * self.n + n) * hw;
                let dst = n * per + c * hw;
                out[dst..dst + hw].copy_from_slice(&self.data[src..src + hw]);
            }
        }
        out
    }

    pub fn unflatten(c: usize, n: usize, h: usize, w: usize, flat: &[S]) -> Self {
        let hw = h * w;
        let per = c * hw;
        let mut out = Self::zeros(c, n, h, w);
        for ci in 0..c {
            for ni in 0..n {
                let dst = (ci * n + ni) * hw;
                let src = ni * per + ci * hw;
                out.data[dst..dst + hw].copy_from_slice(&flat[src..src + hw]);
            }
        }
        out
    }
}

/// Deterministic standard-normal draws for weight initialisation.
pub(crate) fn normal_vec<S: Scalar>(rng: &mut impl rand::Rng, len: usize, std: f64) -> Vec<S> {
    use rand_distr::{Distribution, StandardNormal};
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            S::lit(z * std)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| i as f64).collect();
        let a = Act::from_data(2, 3, 2, 2, data);
        let flat = a.flatten();
        // sample 1, channel 0 starts at 1 * 8.
        assert_eq!(flat[8], a.data[a.idx(0, 1, 0, 0)]);
        assert_eq!(Act::unflatten(2, 3, 2, 2, &flat), a);
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|i| i as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        f64::gemm(2, 3, 4, 1.0, &a, 3, 1, &b, 4, 1, 0.0, &mut c, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }

    #[test]
    fn sample_bias_grad_sums_space() {
        let mut a = Act::<f64>::zeros(2, 2, 2, 2);
        a.add_sample_bias(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.data[a.idx(1, 0, 1, 1)], 2.0);
        assert_eq!(a.data[a.idx(0, 1, 0, 0)], 3.0);
        assert_eq!(a.sample_bias_grad(), vec![4.0, 8.0, 12.0, 16.0]);
    }
}
