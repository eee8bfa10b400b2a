use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::unet::DenoiserBatch;
use super::{condition_values, q_sample_raw, DenoiserHeader, DenoiserParams, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::fovsim::TruncationSample;
use crate::imagecore::{ensure_same_dims, BinaryMask, NormalizedSlice};
use crate::nn::{cosine_lr, Act, Adam, AdamConfig, ParamStore, Scalar};
use crate::rng::{rng_from_seed, stream_seed, Rng};

/// Arithmetic used for the optimisation itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserHyperParams {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak Adam step size; decays along a cosine to zero.
    pub lr: f64,
    /// Exponential moving average of the weights (0 disables it).
    pub ema_decay: f64,
    pub precision: Precision,
    pub header: DenoiserHeader,
}

impl Default for DenoiserHyperParams {
    fn default() -> Self {
        Self {
            steps: 8000,
            batch_size: 16,
            lr: 1e-3,
            ema_decay: 0.995,
            precision: Precision::F32,
            header: DenoiserHeader::default(),
        }
    }
}

/// A training triple: ground-truth slice, the known (conditioning) slice and
/// the region the model has to fill.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserSample {
    pub target: NormalizedSlice,
    pub condition: NormalizedSlice,
    pub mask: BinaryMask,
}

impl DenoiserSample {
    pub fn new(target: NormalizedSlice, condition: NormalizedSlice, mask: BinaryMask) -> Result<Self> {
        ensure_same_dims(target.dims(), condition.dims())?;
        ensure_same_dims(target.dims(), mask.dims())?;
        Ok(Self { target, condition, mask })
    }

    /// The zoomed untruncated/truncated pair and small mask of a simulated sample.
    pub fn from_truncation(s: &TruncationSample) -> Self {
        Self {
            target: s.untruncated.clone(),
            condition: s.truncated.clone(),
            mask: s.small_mask.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    /// Published weights (the moving average when enabled).
    pub params: DenoiserParams,
    /// Masked MSE of every optimisation step.
    pub losses: Vec<f64>,
}

impl TrainedDenoiser {
    /// Mean loss over the last `window` steps.
    pub fn recent_loss(&self, window: usize) -> f64 {
        let k = window.clamp(1, self.losses.len().max(1));
        let tail = &self.losses[self.losses.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Draw one random batch: sample index, `t ~ U{1..T}`, Gaussian noise.
pub(crate) fn draw_batch<S: Scalar>(samples: &[DenoiserSample], schedule: &DiffusionSchedule, batch_size: usize, rng: &mut Rng) -> DenoiserBatch<S> {
    let (w, h) = samples[0].target.dims();
    let hw = w * h;
    let n = batch_size;
    let mut input = Act::zeros(super::INPUT_CHANNELS, n, h, w);
    let mut eps_act = Act::zeros(1, n, h, w);
    let mut mask_act = Act::zeros(1, n, h, w);
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let s = &samples[rng.random_range(0..samples.len())];
        let ti = rng.random_range(1..=schedule.steps());
        let eps: Vec<f32> = (0..hw)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z as f32
            })
            .collect();
        let bits = s.mask.bits();
        let xt = q_sample_raw(s.target.values(), bits, &eps, schedule.alpha_bar(ti));
        let cond = condition_values(s.condition.values(), bits);
        for p in 0..hw {
            let m = bits[p];
            input.data[i * hw + p] = S::lit(if m { xt[p] as f64 } else { 0.0 });
            input.data[(n + i) * hw + p] = S::lit(cond[p] as f64);
            input.data[(2 * n + i) * hw + p] = if m { S::one() } else { S::zero() };
            eps_act.data[i * hw + p] = S::lit(eps[p] as f64);
            mask_act.data[i * hw + p] = input.data[(2 * n + i) * hw + p];
        }
        t.push(ti);
    }
    DenoiserBatch {
        input,
        t,
        eps: eps_act,
        mask: mask_act,
    }
}

/// Minimise the masked noise-prediction MSE with Adam.
pub fn train_denoiser(samples: &[DenoiserSample], schedule: &DiffusionSchedule, hp: &DenoiserHyperParams, seed: u64) -> Result<TrainedDenoiser> {
    let usable: Vec<DenoiserSample> = samples.iter().filter(|s| !s.mask.is_empty()).cloned().collect();
    if usable.is_empty() {
        return Err(Error::Config("denoiser training set has no sample with a non-empty mask".into()));
    }
    if hp.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..1.0).contains(&hp.ema_decay) {
        return Err(Error::Config(format!("EMA decay {} outside [0, 1)", hp.ema_decay)));
    }
    let res = hp.header.resolution;
    if let Some(bad) = usable.iter().find(|s| s.target.dims() != (res, res)) {
        return Err(Error::Shape {
            expected: (res, res),
            actual: bad.target.dims(),
        });
    }
    let model = DenoiserParams::init(hp.header.clone(), seed)?;
    match hp.precision {
        Precision::F32 => run::<f32>(model, &usable, schedule, hp, seed),
        Precision::F64 => run::<f64>(model, &usable, schedule, hp, seed),
    }
}

fn run<S: Scalar>(
    mut model: DenoiserParams,
    samples: &[DenoiserSample],
    schedule: &DiffusionSchedule,
    hp: &DenoiserHyperParams,
    seed: u64,
) -> Result<TrainedDenoiser> {
    let mut params: ParamStore<S> = model.params.cast();
    let mut ema: Vec<Vec<f64>> = params.values.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect();
    let mut opt = Adam::new(
        AdamConfig {
            lr: hp.lr,
            ..Default::default()
        },
        &params,
    );
    let mut rng = rng_from_seed(stream_seed(seed, 2));
    let mut losses = Vec::with_capacity(hp.steps);
    for step in 0..hp.steps {
        let batch = draw_batch::<S>(samples, schedule, hp.batch_size, &mut rng);
        let (loss, grads) = model.loss_and_grads(&params, &batch);
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        opt.config.lr = cosine_lr(hp.lr, step, hp.steps);
        opt.step(&mut params, &grads);
        if hp.ema_decay > 0.0 {
            // Warm-up so early averages are not dominated by the initial weights.
            let d = hp.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64));
            for (e, p) in ema.iter_mut().zip(&params.values) {
                for (ei, pi) in e.iter_mut().zip(p) {
                    *ei = d * *ei + (1.0 - d) * pi.as_f64();
                }
            }
        }
        if step % 100 == 0 || step + 1 == hp.steps {
            log::info!("denoiser step {step}: loss {loss:.4}");
        }
    }
    let published: ParamStore<S> = if hp.ema_decay > 0.0 {
        let mut p = params.clone();
        for (dst, src) in p.values.iter_mut().zip(&ema) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = S::lit(*s);
            }
        }
        p
    } else {
        params
    };
    model.params = published.cast();
    if !model.params.all_finite() {
        return Err(Error::Divergence {
            step: hp.steps,
            loss: f64::NAN,
        });
    }
    Ok(TrainedDenoiser { params: model, losses })
}

/// Average masked MSE of `params` over `batches` random batches.
pub fn evaluate_loss(
    params: &DenoiserParams,
    samples: &[DenoiserSample],
    schedule: &DiffusionSchedule,
    batch_size: usize,
    batches: usize,
    seed: u64,
) -> f64 {
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..batches {
        let batch = draw_batch::<f32>(samples, schedule, batch_size, &mut rng);
        total += params.loss_and_grads(&params.params, &batch).0;
    }
    total / batches.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleConfig;
    use crate::imagecore::PixelSpacing;

    fn tiny_header() -> DenoiserHeader {
        DenoiserHeader {
            resolution: 16,
            channels: vec![8, 16],
            time_dim: 8,
            embed_dim: 16,
            schedule: ScheduleConfig {
                steps: 50,
                beta_lo: 1e-3,
                beta_hi: 0.2,
            },
        }
    }

    fn ring_sample() -> DenoiserSample {
        let sp = PixelSpacing::isotropic(6.0);
        let target = NormalizedSlice::new(
            16,
            16,
            (0..256)
                .map(|i| {
                    let (x, y) = ((i % 16) as f32 - 7.5, (i / 16) as f32 - 7.5);
                    if (x * x + y * y).sqrt() < 6.0 {
                        0.3
                    } else {
                        -1.0
                    }
                })
                .collect(),
            sp,
        )
        .unwrap();
        let mask = BinaryMask::from_fn(16, 16, |x, _| x >= 11);
        let condition = NormalizedSlice::new(
            16,
            16,
            target
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask.bits()[i] { -1.0 } else { v })
                .collect(),
            sp,
        )
        .unwrap();
        DenoiserSample::new(target, condition, mask).unwrap()
    }

    #[test]
    fn untrained_loss_is_noise_variance() {
        let header = tiny_header();
        let schedule = header.schedule.build().unwrap();
        let model = DenoiserParams::init(header, 1).unwrap();
        let loss = evaluate_loss(&model, &[ring_sample()], &schedule, 16, 8, 3);
        assert!((loss - 1.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn empty_and_divergent_training() {
        let header = tiny_header();
        let schedule = header.schedule.build().unwrap();
        let hp = DenoiserHyperParams {
            steps: 5,
            batch_size: 2,
            header: header.clone(),
            ..Default::default()
        };
        assert!(matches!(train_denoiser(&[], &schedule, &hp, 1), Err(Error::Config(_))));
        let mut empty_mask = ring_sample();
        empty_mask.mask = BinaryMask::filled(16, 16, false);
        assert!(matches!(train_denoiser(&[empty_mask], &schedule, &hp, 1), Err(Error::Config(_))));
        let wild = DenoiserHyperParams {
            steps: 60,
            lr: 1e30,
            ema_decay: 0.0,
            ..hp
        };
        match train_denoiser(&[ring_sample()], &schedule, &wild, 1) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_precision_modes_run() {
        let header = tiny_header();
        let schedule = header.schedule.build().unwrap();
        let hp = DenoiserHyperParams {
            steps: 4,
            batch_size: 2,
            header,
            ..Default::default()
        };
        let a = train_denoiser(&[ring_sample()], &schedule, &hp, 7).unwrap();
        let b = train_denoiser(&[ring_sample()], &schedule, &hp, 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
        let c = train_denoiser(
            &[ring_sample()],
            &schedule,
            &DenoiserHyperParams {
                precision: Precision::F64,
                ..hp
            },
            7,
        )
        .unwrap();
        assert_eq!(c.losses.len(), 4);
    }

    #[test]
    fn single_sample_overfit() {
        let header = tiny_header();
        let schedule = header.schedule.build().unwrap();
        let hp = DenoiserHyperParams {
            steps: 1500,
            batch_size: 8,
            lr: 3e-3,
            ema_decay: 0.0,
            precision: Precision::F32,
            header,
        };
        let trained = train_denoiser(&[ring_sample()], &schedule, &hp, 2).unwrap();
        let loss = evaluate_loss(&trained.params, &[ring_sample()], &schedule, 16, 8, 99);
        assert!(loss < 0.1, "masked MSE {loss}");
    }
}
