use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScheduleConfig;
use crate::error::{Error, Result};
use crate::nn::{
    avgpool2x, avgpool2x_backward, concat_channels, silu, silu_backward, split_channels, upsample2x, upsample2x_backward, Act, Conv2d, ConvCache,
    Linear, ParamStore, Scalar,
};
use crate::rng::rng_from_seed;

pub const DENOISER_MAGIC: &[u8; 4] = b"DN01";

/// Input channels: noisy unknown region, clean condition, mask.
pub const INPUT_CHANNELS: usize = 3;

/// Architecture plus the schedule the weights were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserHeader {
    pub resolution: usize,
    /// Feature channels per U-net level, finest first.
    pub channels: Vec<usize>,
    /// Width of the sinusoidal timestep encoding.
    pub time_dim: usize,
    /// Width of the timestep MLP output.
    pub embed_dim: usize,
    pub schedule: ScheduleConfig,
}

impl Default for DenoiserHeader {
    fn default() -> Self {
        Self {
            resolution: 64,
            channels: vec![16, 32, 64],
            time_dim: 32,
            embed_dim: 64,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl DenoiserHeader {
    pub fn validate(&self) -> Result<()> {
        let levels = self.channels.len();
        if levels == 0 || self.channels.contains(&0) {
            return Err(Error::Config("denoiser needs at least one non-empty level".into()));
        }
        let factor = 1usize << (levels - 1);
        if self.resolution < 8 || !self.resolution.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution,
                levels - 1
            )));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) || self.embed_dim == 0 {
            return Err(Error::Config("timestep embedding widths must be positive and even".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Level {
    conv_a: Conv2d,
    conv_b: Conv2d,
    time: Linear,
}

#[derive(Debug, Clone)]
struct Net {
    embed1: Linear,
    embed2: Linear,
    enc: Vec<Level>,
    /// `reduce[l]` maps level `l + 1` features to `channels[l]` before upsampling.
    reduce: Vec<Conv2d>,
    /// `dec[l]` merges the upsampled, reduced level `l + 1` output with skip `l`.
    dec: Vec<Conv2d>,
    out: Conv2d,
}

fn build_net<S: Scalar>(header: &DenoiserHeader, store: &mut ParamStore<S>, seed: u64) -> Net {
    let mut rng = rng_from_seed(seed);
    let ch = &header.channels;
    let embed1 = Linear::new(store, "time.embed1", header.time_dim, header.embed_dim, 1.0, &mut rng);
    let embed2 = Linear::new(store, "time.embed2", header.embed_dim, header.embed_dim, 1.4, &mut rng);
    let mut enc = Vec::with_capacity(ch.len());
    for (l, &c) in ch.iter().enumerate() {
        let cin = if l == 0 { INPUT_CHANNELS } else { ch[l - 1] };
        enc.push(Level {
            conv_a: Conv2d::new(store, &format!("enc{l}.conv_a"), cin, c, 3, 1, 1.4, &mut rng),
            conv_b: Conv2d::new(store, &format!("enc{l}.conv_b"), c, c, 3, 1, 1.4, &mut rng),
            time: Linear::new(store, &format!("enc{l}.time"), header.embed_dim, c, 0.5, &mut rng),
        });
    }
    let mut reduce = Vec::new();
    let mut dec = Vec::new();
    for l in 0..ch.len().saturating_sub(1) {
        reduce.push(Conv2d::new(store, &format!("dec{l}.reduce"), ch[l + 1], ch[l], 1, 1, 1.0, &mut rng));
        dec.push(Conv2d::new(store, &format!("dec{l}.conv"), 2 * ch[l], ch[l], 3, 1, 1.4, &mut rng));
    }
    let out = Conv2d::new(store, "out.conv", ch[0], 1, 1, 1, 1.0, &mut rng);
    // Zero-initialised output: the untrained model predicts eps = 0.
    store.values[out.weight].iter_mut().for_each(|v| *v = S::zero());
    Net {
        embed1,
        embed2,
        enc,
        reduce,
        dec,
        out,
    }
}

/// Sinusoidal encoding `[sin(t f_k), cos(t f_k)]`, `f_k = 10000^(-k / half)`.
pub fn timestep_embedding<S: Scalar>(t: &[usize], dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &ti in t {
        let tf = ti as f64;
        for k in 0..half {
            let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            out.push(S::lit((tf * f).sin()));
        }
        for k in 0..half {
            let f = (-(10000f64.ln()) * k as f64 / half as f64).exp();
            out.push(S::lit((tf * f).cos()));
        }
    }
    out
}

/// Denoiser weights. Inference runs in `f32`; gradient checks cast to `f64`.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub header: DenoiserHeader,
    pub params: ParamStore<f32>,
    net: Net,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.params == other.params
    }
}

impl DenoiserParams {
    pub fn init(header: DenoiserHeader, seed: u64) -> Result<Self> {
        header.validate()?;
        let mut params = ParamStore::default();
        let net = build_net(&header, &mut params, seed);
        Ok(Self { header, params, net })
    }

    /// Index of the output convolution's weight tensor.
    pub fn output_weight_index(&self) -> usize {
        self.net.out.weight
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.to_bytes(DENOISER_MAGIC, &self.header)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, params): (DenoiserHeader, ParamStore<f32>) = ParamStore::from_bytes(bytes, DENOISER_MAGIC, path)?;
        let fresh = Self::init(header.clone(), 0).map_err(|e| Error::format(path, e.to_string()))?;
        if fresh.params.entries != params.entries {
            return Err(Error::format(path, "tensor layout does not match header"));
        }
        if !params.all_finite() {
            return Err(Error::format(path, "non-finite weights"));
        }
        Ok(Self {
            header,
            params,
            net: fresh.net,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::params::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Predicted noise for a `[3][N][H][W]` input at per-sample steps `t`.
    pub fn predict_eps(&self, input: &Act<f32>, t: &[usize]) -> Act<f32> {
        forward(&self.net, &self.header, &self.params, input, t, false).0
    }

    pub(crate) fn loss_and_grads<S: Scalar>(&self, params: &ParamStore<S>, batch: &DenoiserBatch<S>) -> (f64, Vec<Vec<S>>) {
        loss_and_grads(&self.net, &self.header, params, batch)
    }
}

struct EncCache<S> {
    ca: ConvCache<S>,
    pa: Act<S>,
    cb: ConvCache<S>,
    pb: Act<S>,
}

struct DecCache<S> {
    rc: ConvCache<S>,
    c: ConvCache<S>,
    p: Act<S>,
}

struct Cache<S> {
    emb: Vec<S>,
    e1: Vec<S>,
    a1: Vec<S>,
    e2: Vec<S>,
    a2: Vec<S>,
    enc: Vec<EncCache<S>>,
    dec: Vec<Option<DecCache<S>>>,
    out: ConvCache<S>,
}

fn silu_act<S: Scalar>(pre: &Act<S>) -> Act<S> {
    Act::from_data(pre.c, pre.n, pre.h, pre.w, silu(&pre.data))
}

fn silu_act_backward<S: Scalar>(pre: &Act<S>, dy: &Act<S>) -> Act<S> {
    Act::from_data(pre.c, pre.n, pre.h, pre.w, silu_backward(&pre.data, &dy.data))
}

fn forward<S: Scalar>(
    net: &Net,
    header: &DenoiserHeader,
    params: &ParamStore<S>,
    x: &Act<S>,
    t: &[usize],
    train: bool,
) -> (Act<S>, Option<Cache<S>>) {
    assert_eq!(x.c, INPUT_CHANNELS, "denoiser input channels");
    assert_eq!(t.len(), x.n, "one timestep per sample");
    let n = x.n;
    let emb = timestep_embedding::<S>(t, header.time_dim);
    let e1 = net.embed1.forward(params, &emb, n);
    let a1 = silu(&e1);
    let e2 = net.embed2.forward(params, &a1, n);
    let a2 = silu(&e2);

    let levels = net.enc.len();
    let mut h = x.clone();
    let mut skips = Vec::with_capacity(levels);
    let mut enc_caches = Vec::new();
    for (l, level) in net.enc.iter().enumerate() {
        if l > 0 {
            h = avgpool2x(&h);
        }
        let (mut pa, ca) = level.conv_a.forward(params, &h, train);
        pa.add_sample_bias(&level.time.forward(params, &a2, n));
        let ha = silu_act(&pa);
        let (pb, cb) = level.conv_b.forward(params, &ha, train);
        h = silu_act(&pb);
        if l + 1 < levels {
            skips.push(h.clone());
        }
        if train {
            enc_caches.push(EncCache {
                ca: ca.unwrap(),
                pa,
                cb: cb.unwrap(),
                pb,
            });
        }
    }
    let mut dec_caches: Vec<Option<DecCache<S>>> = (0..net.dec.len()).map(|_| None).collect();
    for l in (0..net.dec.len()).rev() {
        let (r, rc) = net.reduce[l].forward(params, &h, train);
        let cat = concat_channels(&upsample2x(&r), &skips[l]);
        let (p, c) = net.dec[l].forward(params, &cat, train);
        h = silu_act(&p);
        if train {
            dec_caches[l] = Some(DecCache {
                rc: rc.unwrap(),
                c: c.unwrap(),
                p,
            });
        }
    }
    let (out, co) = net.out.forward(params, &h, train);
    let cache = train.then(|| Cache {
        emb,
        e1,
        a1,
        e2,
        a2,
        enc: enc_caches,
        dec: dec_caches,
        out: co.unwrap(),
    });
    (out, cache)
}

fn backward<S: Scalar>(net: &Net, header: &DenoiserHeader, params: &ParamStore<S>, cache: &Cache<S>, dout: &Act<S>) -> Vec<Vec<S>> {
    let n = dout.n;
    let mut grads = params.zeros_like();
    let mut dh = net.out.backward(params, &cache.out, dout, &mut grads, true).unwrap();
    let mut dskips = Vec::with_capacity(net.dec.len());
    for (l, conv) in net.dec.iter().enumerate() {
        let dc = cache.dec[l].as_ref().unwrap();
        let dp = silu_act_backward(&dc.p, &dh);
        let dcat = conv.backward(params, &dc.c, &dp, &mut grads, true).unwrap();
        let (dup, dskip) = split_channels(&dcat, header.channels[l]);
        dskips.push(dskip);
        let dr = upsample2x_backward(&dup);
        dh = net.reduce[l].backward(params, &dc.rc, &dr, &mut grads, true).unwrap();
    }
    let mut da2 = vec![S::zero(); n * header.embed_dim];
    for l in (0..net.enc.len()).rev() {
        if let Some(ds) = dskips.get(l) {
            for (a, &b) in dh.data.iter_mut().zip(&ds.data) {
                *a = *a + b;
            }
        }
        let level = &net.enc[l];
        let ec = &cache.enc[l];
        let dpb = silu_act_backward(&ec.pb, &dh);
        let dha = level.conv_b.backward(params, &ec.cb, &dpb, &mut grads, true).unwrap();
        let dpa = silu_act_backward(&ec.pa, &dha);
        let dtb = dpa.sample_bias_grad();
        let d = level.time.backward(params, &cache.a2, &dtb, n, &mut grads);
        for (a, b) in da2.iter_mut().zip(d) {
            *a = *a + b;
        }
        match level.conv_a.backward(params, &ec.ca, &dpa, &mut grads, l > 0) {
            Some(dx) => dh = avgpool2x_backward(&dx),
            None => break,
        }
    }
    let de2 = silu_backward(&cache.e2, &da2);
    let da1 = net.embed2.backward(params, &cache.a1, &de2, n, &mut grads);
    let de1 = silu_backward(&cache.e1, &da1);
    net.embed1.backward(params, &cache.emb, &de1, n, &mut grads);
    grads
}

/// One training batch: network input, timesteps, target noise and the
/// per-pixel loss mask, all in `[C][N][H][W]` layout.
#[derive(Debug, Clone)]
pub(crate) struct DenoiserBatch<S> {
    pub input: Act<S>,
    pub t: Vec<usize>,
    pub eps: Act<S>,
    pub mask: Act<S>,
}

/// Mean squared noise-prediction error over mask-true pixels.
fn loss_and_grads<S: Scalar>(net: &Net, header: &DenoiserHeader, params: &ParamStore<S>, batch: &DenoiserBatch<S>) -> (f64, Vec<Vec<S>>) {
    let (pred, cache) = forward(net, header, params, &batch.input, &batch.t, true);
    let count: f64 = batch.mask.data.iter().map(|m| m.as_f64()).sum();
    let mut dout = Act::zeros(1, pred.n, pred.h, pred.w);
    if count == 0.0 {
        return (0.0, params.zeros_like());
    }
    let mut loss = 0.0;
    for i in 0..pred.data.len() {
        let m = batch.mask.data[i].as_f64();
        if m == 0.0 {
            continue;
        }
        let r = pred.data[i].as_f64() - batch.eps.data[i].as_f64();
        loss += m * r * r;
        dout.data[i] = S::lit(2.0 * m * r / count);
    }
    let grads = backward(net, header, params, cache.as_ref().unwrap(), &dout);
    (loss / count, grads)
}

/// One probed coordinate of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientProbe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    /// |fd − analytic| / max(|fd|, |analytic|, 1e-6).
    pub relative_error: f64,
}

/// Compare the analytic loss gradient with central differences in 64-bit
/// arithmetic at `per_tensor` random coordinates of every tensor. Weights
/// are re-drawn at fan-in scale (biases from U(−0.1, 0.1)) so no path,
/// including the zero-initialised output layer, is trivially zero.
pub fn gradient_check(header: &DenoiserHeader, batch_size: usize, per_tensor: usize, seed: u64) -> Result<Vec<GradientProbe>> {
    use crate::nn::normal_vec;
    use rand::Rng;
    let m = DenoiserParams::init(header.clone(), seed)?;
    let mut rng = rng_from_seed(crate::rng::stream_seed(seed, 1));
    let mut params: ParamStore<f64> = m.params.cast();
    for (entry, v) in params.entries.iter().zip(params.values.iter_mut()) {
        // Unit-variance-preserving scale keeps the loss O(1) at any width, so
        // its rounding error stays far below the finite-difference signal.
        let fan_in: usize = entry.shape.iter().skip(1).product();
        let a = if entry.shape.len() > 1 { (3.0 / fan_in as f64).sqrt() } else { 0.1 };
        for x in v.iter_mut() {
            *x = rng.random_range(-a..a);
        }
    }
    let (res, n) = (header.resolution, batch_size);
    let plane = n * res * res;
    let batch = DenoiserBatch {
        input: Act::from_data(INPUT_CHANNELS, n, res, res, normal_vec(&mut rng, INPUT_CHANNELS * plane, 1.0)),
        t: (0..n).map(|_| rng.random_range(1..=header.schedule.steps)).collect(),
        eps: Act::from_data(1, n, res, res, normal_vec(&mut rng, plane, 1.0)),
        mask: Act::from_data(
            1,
            n,
            res,
            res,
            (0..plane).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect(),
        ),
    };
    let (_, grads) = m.loss_and_grads(&params, &batch);
    let h = 1e-6;
    let mut probes = Vec::new();
    for tensor in 0..params.values.len() {
        for _ in 0..per_tensor {
            let index = rng.random_range(0..params.values[tensor].len());
            let mut p = params.clone();
            p.values[tensor][index] += h;
            let lp = m.loss_and_grads(&p, &batch).0;
            p.values[tensor][index] -= 2.0 * h;
            let lm = m.loss_and_grads(&p, &batch).0;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[tensor][index];
            probes.push(GradientProbe {
                tensor: params.entries[tensor].name.clone(),
                index,
                analytic: an,
                finite_difference: fd,
                relative_error: (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6),
            });
        }
    }
    Ok(probes)
}
