use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BoundingBox, NormalizedSlice};
use crate::nn::{cosine_lr, silu, silu_backward, Act, Adam, AdamConfig, Conv2d, ConvCache, Linear, ParamStore, Scalar};
use crate::rng::rng_from_seed;

pub const BBOX_MAGIC: &[u8; 4] = b"BB01";

/// Architecture and coordinate normalization stored with the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorHeader {
    pub input_resolution: usize,
    pub channels: [usize; 3],
    /// Network output `u` in `[0, 1]` maps to crop-relative position
    /// `coord_lo + u * (coord_hi - coord_lo)` in units of the crop side.
    pub coord_lo: f64,
    pub coord_hi: f64,
}

impl Default for RegressorHeader {
    fn default() -> Self {
        Self {
            input_resolution: 32,
            channels: [8, 16, 32],
            coord_lo: -0.5,
            coord_hi: 1.5,
        }
    }
}

impl RegressorHeader {
    fn validate(&self) -> Result<()> {
        if self.input_resolution < 8 || !self.input_resolution.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "regressor input resolution {} must be a multiple of 8",
                self.input_resolution
            )));
        }
        if self.channels.contains(&0) || !(self.coord_lo < self.coord_hi) {
            return Err(Error::Config("invalid regressor header".into()));
        }
        Ok(())
    }

    fn feature_len(&self) -> usize {
        let s = self.input_resolution / 8;
        self.channels[2] * s * s
    }
}

/// Where a DFOV crop sits in the full slice: `[x0, x0 + side) x [y0, y0 + side)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropGeometry {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl CropGeometry {
    pub fn full(width: usize, height: usize) -> Self {
        debug_assert_eq!(width, height);
        Self {
            x0: 0.0,
            y0: 0.0,
            side: width as f64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    convs: [Conv2d; 3],
    head: Linear,
}

fn build_layers<S: Scalar>(header: &RegressorHeader, store: &mut ParamStore<S>, seed: u64) -> Layers {
    let mut rng = rng_from_seed(seed);
    let [c1, c2, c3] = header.channels;
    let convs = [
        Conv2d::new(store, "conv1", 1, c1, 3, 2, 1.4, &mut rng),
        Conv2d::new(store, "conv2", c1, c2, 3, 2, 1.4, &mut rng),
        Conv2d::new(store, "conv3", c2, c3, 3, 2, 1.4, &mut rng),
    ];
    let head = Linear::new(store, "head", header.feature_len(), 4, 0.5, &mut rng);
    // Start near the middle of the coordinate range.
    store.values[head.bias] = vec![S::lit(0.35), S::lit(0.35), S::lit(0.65), S::lit(0.65)];
    Layers { convs, head }
}

/// Trained (or freshly initialised) regressor weights.
#[derive(Debug, Clone)]
pub struct BboxRegressorParams {
    pub header: RegressorHeader,
    pub params: ParamStore<f32>,
    layers: Layers,
}

impl PartialEq for BboxRegressorParams {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.params == other.params
    }
}

impl BboxRegressorParams {
    pub fn init(header: RegressorHeader, seed: u64) -> Result<Self> {
        header.validate()?;
        let mut params = ParamStore::default();
        let layers = build_layers(&header, &mut params, seed);
        Ok(Self { header, params, layers })
    }

    /// Index of the 4-unit output bias tensor.
    pub fn head_bias_index(&self) -> usize {
        self.layers.head.bias
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.to_bytes(BBOX_MAGIC, &self.header)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, params): (RegressorHeader, ParamStore<f32>) = ParamStore::from_bytes(bytes, BBOX_MAGIC, path)?;
        let fresh = Self::init(header, 0).map_err(|e| Error::format(path, e.to_string()))?;
        if fresh.params.entries != params.entries {
            return Err(Error::format(path, "tensor layout does not match header"));
        }
        Ok(Self {
            header,
            params,
            layers: fresh.layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::params::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct ForwardCache<S> {
    convs: Vec<(ConvCache<S>, Act<S>)>,
    features: Vec<S>,
    last_shape: (usize, usize, usize),
}

fn forward<S: Scalar>(layers: &Layers, params: &ParamStore<S>, input: &Act<S>, train: bool) -> (Vec<S>, Option<ForwardCache<S>>) {
    let mut x = input.clone();
    let mut caches = Vec::new();
    for conv in &layers.convs {
        let (pre, cache) = conv.forward(params, &x, train);
        let act = Act::from_data(pre.c, pre.n, pre.h, pre.w, silu(&pre.data));
        if let Some(c) = cache {
            caches.push((c, pre));
        }
        x = act;
    }
    let features = x.flatten();
    let out = layers.head.forward(params, &features, x.n);
    let cache = train.then_some(ForwardCache {
        convs: caches,
        features,
        last_shape: (x.c, x.h, x.w),
    });
    (out, cache)
}

fn backward<S: Scalar>(layers: &Layers, params: &ParamStore<S>, cache: &ForwardCache<S>, n: usize, dout: &[S]) -> Vec<Vec<S>> {
    let mut grads = params.zeros_like();
    let dfeat = layers.head.backward(params, &cache.features, dout, n, &mut grads);
    let (c, h, w) = cache.last_shape;
    let mut d = Act::unflatten(c, n, h, w, &dfeat);
    for (i, conv) in layers.convs.iter().enumerate().rev() {
        let (cc, pre) = &cache.convs[i];
        let dpre = Act::from_data(pre.c, pre.n, pre.h, pre.w, silu_backward(&pre.data, &d.data));
        match conv.backward(params, cc, &dpre, &mut grads, i > 0) {
            Some(dx) => d = dx,
            None => break,
        }
    }
    grads
}

fn stack_inputs<S: Scalar>(crops: &[&NormalizedSlice]) -> Act<S> {
    let (w, h) = crops[0].dims();
    let mut data = Vec::with_capacity(crops.len() * w * h);
    for c in crops {
        assert_eq!(c.dims(), (w, h), "crops must share a resolution");
        data.extend(c.values().iter().map(|&v| S::lit(v as f64)));
    }
    Act::from_data(1, crops.len(), h, w, data)
}

/// Mean absolute error over the 4 normalized coordinates, with gradients.
pub fn regressor_loss_and_grads<S: Scalar>(
    model: &BboxRegressorParams,
    params: &ParamStore<S>,
    crops: &[&NormalizedSlice],
    targets: &[[f64; 4]],
) -> (f64, Vec<Vec<S>>) {
    let n = crops.len();
    let input = stack_inputs::<S>(crops);
    let (out, cache) = forward(&model.layers, params, &input, true);
    let scale = 1.0 / (4 * n) as f64;
    let mut loss = 0.0;
    let mut dout = vec![S::zero(); out.len()];
    for i in 0..n {
        for j in 0..4 {
            let r = out[i * 4 + j].as_f64() - targets[i][j];
            loss += r.abs() * scale;
            dout[i * 4 + j] = S::lit(r.signum() * scale);
        }
    }
    let grads = backward(&model.layers, params, cache.as_ref().unwrap(), n, &dout);
    (loss, grads)
}

/// Raw (unsquashed) network outputs for a batch of crops.
pub fn predict_bbox_raw(model: &BboxRegressorParams, crops: &[&NormalizedSlice]) -> Vec<[f64; 4]> {
    let input = stack_inputs::<f32>(crops);
    let (out, _) = forward(&model.layers, &model.params, &input, false);
    out.chunks_exact(4)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64])
        .collect()
}

/// Map clamped network outputs into full-slice pixel coordinates.
fn decode(header: &RegressorHeader, raw: [f64; 4], geom: &CropGeometry) -> Result<BoundingBox> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("bbox regressor produced {raw:?}")));
    }
    let span = header.coord_hi - header.coord_lo;
    let to_px = |u: f64, origin: f64| origin + (header.coord_lo + u.clamp(0.0, 1.0) * span) * geom.side;
    let xa = to_px(raw[0], geom.x0);
    let ya = to_px(raw[1], geom.y0);
    let xb = to_px(raw[2], geom.x0);
    let yb = to_px(raw[3], geom.y0);
    let (x_min, x_max) = (xa.min(xb), xa.max(xb));
    let (y_min, y_max) = (ya.min(yb), ya.max(yb));
    // Collapsed axes are widened to one pixel.
    let x_max = if x_max > x_min { x_max } else { x_min + 1.0 };
    let y_max = if y_max > y_min { y_max } else { y_min + 1.0 };
    BoundingBox::new(x_min, y_min, x_max, y_max)
}

/// Inverse of [`decode`] for training targets.
pub(crate) fn encode_target(header: &RegressorHeader, bbox: &BoundingBox, geom: &CropGeometry) -> [f64; 4] {
    let span = header.coord_hi - header.coord_lo;
    let u = |px: f64, origin: f64| ((px - origin) / geom.side - header.coord_lo) / span;
    [
        u(bbox.x_min, geom.x0),
        u(bbox.y_min, geom.y0),
        u(bbox.x_max, geom.x0),
        u(bbox.y_max, geom.y0),
    ]
}

/// Estimate the untruncated body box from a DFOV crop.
pub fn predict_bbox(model: &BboxRegressorParams, dfov_crop: &NormalizedSlice, geom: &CropGeometry) -> Result<BoundingBox> {
    let r = model.header.input_resolution;
    if dfov_crop.dims() != (r, r) {
        return Err(Error::Shape {
            expected: (r, r),
            actual: dfov_crop.dims(),
        });
    }
    let raw = predict_bbox_raw(model, &[dfov_crop])[0];
    decode(&model.header, raw, geom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BboxHyperParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub header: RegressorHeader,
}

impl Default for BboxHyperParams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr: 2e-3,
            header: RegressorHeader::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BboxTrainingSample {
    pub crop: NormalizedSlice,
    pub geometry: CropGeometry,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub params: BboxRegressorParams,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn dataset_loss(model: &BboxRegressorParams, crops: &[&NormalizedSlice], targets: &[[f64; 4]]) -> f64 {
    let mut total = 0.0;
    for (chunk, tchunk) in crops.chunks(64).zip(targets.chunks(64)) {
        let raw = predict_bbox_raw(model, chunk);
        for (r, t) in raw.iter().zip(tchunk) {
            total += (0..4).map(|j| (r[j] - t[j]).abs()).sum::<f64>();
        }
    }
    total / (4 * crops.len()) as f64
}

/// Fit the regressor by minibatch descent on the mean absolute coordinate
/// error. The optimizer is Adam with `beta1 = 0` and a cosine-decayed step.
pub fn train_bbox_regressor(samples: &[BboxTrainingSample], hp: &BboxHyperParams, seed: u64) -> Result<TrainedRegressor> {
    if samples.is_empty() {
        return Err(Error::Config("bbox training set is empty".into()));
    }
    if hp.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = BboxRegressorParams::init(hp.header, seed)?;
    let crops: Vec<&NormalizedSlice> = samples.iter().map(|s| &s.crop).collect();
    let targets: Vec<[f64; 4]> = samples.iter().map(|s| encode_target(&hp.header, &s.bbox, &s.geometry)).collect();
    let initial_loss = dataset_loss(&model, &crops, &targets);
    let mut opt = Adam::new(
        AdamConfig {
            lr: hp.lr,
            beta1: 0.0,
            ..Default::default()
        },
        &model.params,
    );
    let mut rng = rng_from_seed(crate::rng::stream_seed(seed, 1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let total_steps = hp.epochs * samples.len().div_ceil(hp.batch_size);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let bc: Vec<&NormalizedSlice> = batch.iter().map(|&i| crops[i]).collect();
            let bt: Vec<[f64; 4]> = batch.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = regressor_loss_and_grads(&model, &model.params, &bc, &bt);
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: opt.steps_taken() as usize,
                    loss,
                });
            }
            opt.config.lr = cosine_lr(hp.lr, opt.steps_taken() as usize, total_steps);
            opt.step(&mut model.params, &grads);
        }
        log::debug!("bbox epoch {epoch}: done");
    }
    let final_loss = dataset_loss(&model, &crops, &targets);
    log::info!("bbox regressor: loss {initial_loss:.4} -> {final_loss:.4}");
    Ok(TrainedRegressor {
        params: model,
        initial_loss,
        final_loss,
    })
}
