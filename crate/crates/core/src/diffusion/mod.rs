//! Conditional DDPM outpainter: noise schedule, forward noising restricted
//! to the unknown region, the U-net denoiser, training, and ancestral
//! sampling with the known region pinned to its clean values.

mod train;
mod unet;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use train::{evaluate_loss, train_denoiser, DenoiserHyperParams, DenoiserSample, Precision, TrainedDenoiser};
pub use unet::{gradient_check, timestep_embedding, DenoiserHeader, DenoiserParams, GradientProbe, DENOISER_MAGIC, INPUT_CHANNELS};

use crate::error::{Error, Result};
use crate::imagecore::{ensure_same_dims, BinaryMask, NormalizedSlice};
use crate::nn::Act;
use crate::rng::{child_seed, rng_from_seed};

/// Linear beta schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
}

impl Default for ScheduleConfig {
    /// Desk schedule: `T = 250`, `beta` in `[1e-4, 0.04]` (`alpha_bar_T ≈ 0.0065`).
    fn default() -> Self {
        Self {
            steps: 250,
            beta_lo: 1e-4,
            beta_hi: 0.04,
        }
    }
}

/// Largest admissible `alpha_bar_T` for a usable schedule: the terminal
/// marginal must be close to pure noise.
pub const MAX_TERMINAL_ALPHA_BAR: f64 = 0.01;

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_lo, self.beta_hi)
    }

    /// Build and additionally require `alpha_bar_T < 0.01`.
    pub fn build_for_sampling(&self) -> Result<DiffusionSchedule> {
        let s = self.build()?;
        if s.alpha_bar(s.steps()) >= MAX_TERMINAL_ALPHA_BAR {
            return Err(Error::Config(format!(
                "schedule T={} beta=[{}, {}] ends at alpha_bar {:.4}, not below {MAX_TERMINAL_ALPHA_BAR}",
                self.steps,
                self.beta_lo,
                self.beta_hi,
                s.alpha_bar(s.steps())
            )));
        }
        Ok(s)
    }
}

/// `beta_t`, `alpha_t = 1 - beta_t` and `alpha_bar_t = prod_{s<=t} alpha_s`
/// for `t = 1..=T` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly spaced betas from `beta_lo` (t = 1) to `beta_hi` (t = T).
pub fn make_schedule(steps: usize, beta_lo: f64, beta_hi: f64) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::Config(format!("beta range [{beta_lo}, {beta_hi}] must satisfy 0 < lo <= hi < 1")));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_lo + (beta_hi - beta_lo) * i as f64 / (steps - 1) as f64)
        .collect();
    Ok(DiffusionSchedule::from_betas(beta))
}

impl DiffusionSchedule {
    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Self { beta, alpha, alpha_bar }
    }

    /// A schedule with arbitrary `alpha_bar`, bypassing construction checks.
    /// Only used to exercise invariant checks.
    pub(crate) fn from_raw_parts(beta: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        let alpha = beta.iter().map(|b| 1.0 - b).collect();
        Self { beta, alpha, alpha_bar }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index { index: t, max: self.steps() });
        }
        Ok(())
    }

    /// `beta_t`, 1-based. Panics outside `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Posterior variance `beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean `c_x0 x0 + c_xt x_t`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        (
            ab_prev.sqrt() * self.beta(t) / (1.0 - ab),
            self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
        )
    }

    /// Check `0 < beta < 1`, strictly decreasing `alpha_bar`, and the
    /// telescoping identity; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut prev = 1.0;
        for t in 1..=self.steps() {
            let b = self.beta(t);
            if !(b > 0.0 && b < 1.0) {
                return Err(format!("beta_{t} = {b} outside (0, 1)"));
            }
            let ab = self.alpha_bar(t);
            if !(ab < prev) {
                return Err(format!("alpha_bar not strictly decreasing at t = {t}"));
            }
            let expect = prev * self.alpha(t);
            if (ab - expect).abs() > 1e-12 * expect.abs().max(1e-300) * t as f64 {
                return Err(format!("alpha_bar_{t} != alpha_bar_{} * alpha_{t}", t - 1));
            }
            prev = ab;
        }
        Ok(())
    }
}

/// Forward-noise the unknown region:
/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps` where `mask` is
/// true, `x0` unchanged elsewhere. The result may leave `[-1, 1]`.
pub fn q_sample(x0: &NormalizedSlice, mask: &BinaryMask, t: usize, eps: &[f32], schedule: &DiffusionSchedule) -> Result<Vec<f32>> {
    ensure_same_dims(x0.dims(), mask.dims())?;
    schedule.check_t(t)?;
    if eps.len() != x0.values().len() {
        return Err(Error::Shape {
            expected: x0.dims(),
            actual: (eps.len(), 1),
        });
    }
    Ok(q_sample_raw(x0.values(), mask.bits(), eps, schedule.alpha_bar(t)))
}

pub(crate) fn q_sample_raw(x0: &[f32], mask: &[bool], eps: &[f32], alpha_bar: f64) -> Vec<f32> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter()
        .zip(mask)
        .zip(eps)
        .map(|((&x, &m), &e)| if m { (a * x as f64 + s * e as f64) as f32 } else { x })
        .collect()
}

/// A sampling job: the zoomed, truncated slice and the region to fill.
#[derive(Debug, Clone, PartialEq)]
pub struct OutpaintRequest {
    pub slice: NormalizedSlice,
    pub mask: BinaryMask,
    pub rng_seed: u64,
}

impl OutpaintRequest {
    pub fn new(slice: NormalizedSlice, mask: BinaryMask, rng_seed: u64) -> Result<Self> {
        ensure_same_dims(slice.dims(), mask.dims())?;
        if mask.is_empty() {
            return Err(Error::Config("outpaint mask is empty".into()));
        }
        Ok(Self { slice, mask, rng_seed })
    }
}

/// Conditioning channel: the known image with the unknown region blanked
/// to the out-of-FOV sentinel.
pub(crate) fn condition_values(slice: &[f32], mask: &[bool]) -> Vec<f32> {
    slice
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { crate::fovsim::FOV_SENTINEL } else { v })
        .collect()
}

/// Assemble `[x_t * mask, condition, mask]` for a batch.
pub(crate) fn assemble_input(xt: &[Vec<f32>], cond: &[Vec<f32>], masks: &[&[bool]], res: usize) -> Act<f32> {
    let n = xt.len();
    let hw = res * res;
    let mut input = Act::zeros(INPUT_CHANNELS, n, res, res);
    for i in 0..n {
        for p in 0..hw {
            let m = masks[i][p];
            input.data[i * hw + p] = if m { xt[i][p] } else { 0.0 };
            input.data[(n + i) * hw + p] = cond[i][p];
            input.data[(2 * n + i) * hw + p] = if m { 1.0 } else { 0.0 };
        }
    }
    input
}

/// One candidate to sample: conditioning slice, unknown mask, seed.
#[derive(Debug, Clone, Copy)]
pub struct SampleJob<'a> {
    pub slice: &'a NormalizedSlice,
    pub mask: &'a BinaryMask,
    pub seed: u64,
}

/// Largest number of candidates pushed through the network at once.
pub const MAX_SAMPLING_BATCH: usize = 16;

/// Run ancestral sampling for several independent jobs, batching network
/// evaluations. Each job draws its noise from its own seeded stream, so
/// results do not depend on how jobs are grouped.
pub fn sample_jobs(params: &DenoiserParams, schedule: &DiffusionSchedule, jobs: &[SampleJob<'_>]) -> Result<Vec<NormalizedSlice>> {
    let res = params.header.resolution;
    for job in jobs {
        ensure_same_dims(job.slice.dims(), job.mask.dims())?;
        ensure_same_dims((res, res), job.slice.dims())?;
        if job.mask.is_empty() {
            return Err(Error::Config("outpaint mask is empty".into()));
        }
    }
    let chunks = jobs
        .par_chunks(MAX_SAMPLING_BATCH)
        .map(|chunk| sample_chunk(params, schedule, chunk))
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn sample_chunk(params: &DenoiserParams, schedule: &DiffusionSchedule, jobs: &[SampleJob<'_>]) -> Result<Vec<NormalizedSlice>> {
    let res = params.header.resolution;
    let hw = res * res;
    let n = jobs.len();
    let masks: Vec<&[bool]> = jobs.iter().map(|j| j.mask.bits()).collect();
    let cond: Vec<Vec<f32>> = jobs.iter().map(|j| condition_values(j.slice.values(), j.mask.bits())).collect();
    let mut rngs: Vec<_> = jobs.iter().map(|j| rng_from_seed(j.seed)).collect();
    let draw = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };
    let mut xt: Vec<Vec<f32>> = jobs
        .iter()
        .zip(rngs.iter_mut())
        .map(|(j, rng)| {
            j.slice
                .values()
                .iter()
                .zip(j.mask.bits())
                .map(|(&v, &m)| if m { draw(rng) as f32 } else { v })
                .collect()
        })
        .collect();
    for t in (1..=schedule.steps()).rev() {
        let input = assemble_input(&xt, &cond, &masks, res);
        let eps = params.predict_eps(&input, &vec![t; n]);
        let ab = schedule.alpha_bar(t);
        let (c0, ct) = schedule.posterior_mean_coefs(t);
        let sigma = if t > 1 { schedule.posterior_variance(t).sqrt() } else { 0.0 };
        for i in 0..n {
            let x = &mut xt[i];
            let e = &eps.data[i * hw..(i + 1) * hw];
            for p in 0..hw {
                if !masks[i][p] {
                    continue;
                }
                let xv = x[p] as f64;
                let ev = e[p] as f64;
                if !ev.is_finite() {
                    return Err(Error::Numeric(format!("denoiser output at t = {t}")));
                }
                let x0 = ((xv - (1.0 - ab).sqrt() * ev) / ab.sqrt()).clamp(-1.0, 1.0);
                let mut next = c0 * x0 + ct * xv;
                if t > 1 {
                    next += sigma * draw(&mut rngs[i]);
                }
                x[p] = next as f32;
            }
            // Known pixels are re-imposed from the clean slice every step.
            for (p, v) in jobs[i].slice.values().iter().enumerate() {
                if !masks[i][p] {
                    x[p] = *v;
                }
            }
        }
    }
    jobs.iter()
        .zip(xt)
        .map(|(j, x)| NormalizedSlice::from_clamped(res, res, x, j.slice.spacing()))
        .collect()
}

/// Sample one outpainted slice.
pub fn outpaint(params: &DenoiserParams, schedule: &DiffusionSchedule, request: &OutpaintRequest) -> Result<NormalizedSlice> {
    Ok(outpaint_n(params, schedule, request, 1)?.remove(0))
}

/// `n` independent candidates; candidate `i` uses `child_seed(seed, i)`,
/// so candidate 0 equals [`outpaint`] with the same seed.
pub fn outpaint_n(params: &DenoiserParams, schedule: &DiffusionSchedule, request: &OutpaintRequest, n: usize) -> Result<Vec<NormalizedSlice>> {
    if n == 0 {
        return Err(Error::Config("outpaint_n needs n >= 1".into()));
    }
    let jobs: Vec<SampleJob<'_>> = (0..n)
        .map(|i| SampleJob {
            slice: &request.slice,
            mask: &request.mask,
            seed: child_seed(request.rng_seed, i as u64),
        })
        .collect();
    sample_jobs(params, schedule, &jobs)
}
