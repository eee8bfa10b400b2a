//! Simulated field-of-view truncation.
//!
//! A FOV is the intersection of a centered reconstruction circle and an
//! offset display square. Truncated slices, the reduced "small" outpainting
//! masks, and DFOV crops for the box regressor are all derived here.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodydetect::{identify_body_mask, BboxTrainingSample, CropGeometry, BODY_THRESHOLD};
use crate::error::{Error, Result, StageContext};
use crate::imagecore::{
    ensure_same_dims, image_center, resample_bilinear, window_and_normalize, zoom_out, BinaryMask, BoundingBox, HuSlice, NormalizedSlice,
    ZoomTransform, AIR, SOFT_TISSUE_WINDOW,
};
use crate::io;
use crate::phantom::{LevelClass, PhantomManifestRow};
use crate::rng::{child_seed, rng_from_seed, stream_seed};

/// Out-of-FOV marker in normalized units (windowed air).
pub const FOV_SENTINEL: f32 = -1.0;

pub const DEFAULT_RFOV_RANGE: (f64, f64) = (0.5, 0.7);
pub const DEFAULT_DFOV_RANGE: (f64, f64) = (0.65, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub r_rfov: f64,
    pub r_dfov: f64,
    pub dx: f64,
    pub dy: f64,
    /// Slice resolution in pixels.
    pub d: usize,
}

impl FovSpec {
    /// Admissible offset range `D = d * (1 - r_dfov)`.
    pub fn offset_range(&self) -> f64 {
        self.d as f64 * (1.0 - self.r_dfov)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_ratio = |r: f64| r > 0.0 && r <= 1.0;
        if !ok_ratio(self.r_rfov) || !ok_ratio(self.r_dfov) {
            return Err(Error::Config(format!("FOV ratios out of (0, 1]: {self:?}")));
        }
        let half = self.offset_range() / 2.0 + 1e-9;
        if self.dx.abs() > half || self.dy.abs() > half {
            return Err(Error::Config(format!("DFOV offset exceeds D/2: {self:?}")));
        }
        Ok(())
    }

    pub fn rfov_radius(&self) -> f64 {
        self.r_rfov * self.d as f64 / 2.0
    }

    pub fn dfov_side(&self) -> f64 {
        self.r_dfov * self.d as f64
    }

    /// DFOV side rounded half-up to whole pixels.
    pub fn dfov_side_px(&self) -> usize {
        (self.dfov_side() + 0.5).floor() as usize
    }

    /// Pixel-aligned DFOV crop window in slice coordinates.
    pub fn crop_geometry(&self) -> CropGeometry {
        let (cx, cy) = image_center(self.d, self.d);
        let side = self.dfov_side_px() as f64;
        CropGeometry {
            x0: (cx + self.dx - side / 2.0 + 0.5).floor(),
            y0: (cy + self.dy - side / 2.0 + 0.5).floor(),
            side,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
        return Err(Error::Config(format!("{name} range {lo}:{hi} must satisfy 0 < lo <= hi <= 1")));
    }
    Ok(())
}

/// Draw a FOV description: both ratios uniform in their ranges, offsets
/// uniform in `[-D/2, D/2]`.
pub fn sample_fov_spec(d: usize, rng_seed: u64, rfov_range: (f64, f64), dfov_range: (f64, f64)) -> Result<FovSpec> {
    check_range("rfov", rfov_range)?;
    check_range("dfov", dfov_range)?;
    let mut rng = rng_from_seed(rng_seed);
    let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let r_rfov = draw(rfov_range);
    let r_dfov = draw(dfov_range);
    let half = d as f64 * (1.0 - r_dfov) / 2.0;
    let dx = draw((-half, half));
    let dy = draw((-half, half));
    Ok(FovSpec { r_rfov, r_dfov, dx, dy, d })
}

pub fn rasterize_rfov_circle(spec: &FovSpec) -> BinaryMask {
    let (cx, cy) = image_center(spec.d, spec.d);
    let r = spec.rfov_radius();
    BinaryMask::from_fn(spec.d, spec.d, |x, y| {
        let (u, v) = (x as f64 - cx, y as f64 - cy);
        (u * u + v * v).sqrt() <= r
    })
}

pub fn rasterize_dfov_square(spec: &FovSpec) -> BinaryMask {
    let (cx, cy) = image_center(spec.d, spec.d);
    let half = spec.dfov_side() / 2.0;
    BinaryMask::from_fn(spec.d, spec.d, |x, y| {
        (x as f64 - cx - spec.dx).abs() <= half && (y as f64 - cy - spec.dy).abs() <= half
    })
}

/// Pixels inside both the reconstruction circle and the display square.
pub fn rasterize_fov_mask(spec: &FovSpec) -> BinaryMask {
    rasterize_rfov_circle(spec).and(&rasterize_dfov_square(spec)).expect("same dims")
}

/// Replace everything outside the FOV with `sentinel`.
pub fn truncate(slice: &NormalizedSlice, fov_mask: &BinaryMask, sentinel: f32) -> Result<NormalizedSlice> {
    ensure_same_dims(slice.dims(), fov_mask.dims())?;
    let values = slice
        .values()
        .iter()
        .zip(fov_mask.bits())
        .map(|(&v, &inside)| if inside { v } else { sentinel })
        .collect();
    NormalizedSlice::from_clamped(slice.width(), slice.height(), values, slice.spacing())
}

/// Unknown region for the outpainter: the box minus the body pixels that are
/// actually visible (`body_mask ∧ fov_mask`). At inference the FOV is not
/// known separately, so callers pass an all-true `fov_mask` with the body
/// found on the truncated slice.
pub fn build_small_mask(scaled_bbox: &BoundingBox, body_mask: &BinaryMask, fov_mask: &BinaryMask) -> Result<BinaryMask> {
    ensure_same_dims(body_mask.dims(), fov_mask.dims())?;
    let (w, h) = body_mask.dims();
    if !scaled_bbox.fits_within(w, h, 0.0) {
        return Err(Error::InvalidBbox(format!("box {scaled_bbox:?} leaves the {w}x{h} image")));
    }
    Ok(BinaryMask::from_fn(w, h, |x, y| {
        scaled_bbox.contains_pixel(x, y) && !(body_mask.get(x, y) && fov_mask.get(x, y))
    }))
}

/// Cut the DFOV square out of `slice` and resample it to `out_res`.
/// Parts of the window beyond the image are filled with the sentinel.
pub fn crop_dfov(slice: &NormalizedSlice, spec: &FovSpec, out_res: usize) -> Result<(NormalizedSlice, CropGeometry)> {
    let geom = spec.crop_geometry();
    Ok((crop_window(slice, &geom, out_res)?, geom))
}

/// Cut an arbitrary pixel-aligned square window out of `slice` and resample
/// it to `out_res`, filling parts beyond the image with the sentinel.
pub fn crop_window(slice: &NormalizedSlice, geom: &CropGeometry, out_res: usize) -> Result<NormalizedSlice> {
    if geom.x0.fract() != 0.0 || geom.y0.fract() != 0.0 || geom.side.fract() != 0.0 {
        return Err(Error::Geometry(format!("DFOV window {geom:?} is not pixel aligned")));
    }
    let side = geom.side.max(0.0) as usize;
    let (w, h) = slice.dims();
    let (x0, y0) = (geom.x0 as isize, geom.y0 as isize);
    let overlaps = x0 < w as isize && y0 < h as isize && x0 + side as isize > 0 && y0 + side as isize > 0;
    if side == 0 || !overlaps {
        return Err(Error::Geometry(format!("DFOV window {geom:?} misses the {w}x{h} image")));
    }
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side as isize {
        for x in 0..side as isize {
            let (sx, sy) = (x0 + x, y0 + y);
            if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                values.push(slice.get(sx as usize, sy as usize));
            } else {
                values.push(FOV_SENTINEL);
            }
        }
    }
    let crop = NormalizedSlice::new(side, side, values, slice.spacing())?;
    let crop = if side == out_res {
        crop
    } else {
        resample_bilinear(&crop, out_res, out_res)?
    };
    Ok(crop)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub rfov_range: (f64, f64),
    pub dfov_range: (f64, f64),
    pub margin: usize,
    pub body_threshold: f32,
    pub detector_resolution: usize,
    pub window: (f64, f64),
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            rfov_range: DEFAULT_RFOV_RANGE,
            dfov_range: DEFAULT_DFOV_RANGE,
            margin: 4,
            body_threshold: BODY_THRESHOLD,
            detector_resolution: 32,
            window: SOFT_TISSUE_WINDOW,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("rfov", self.rfov_range)?;
        check_range("dfov", self.dfov_range)
    }
}

/// One simulated training/evaluation example. The first six fields live in
/// the zoomed-out model frame; `source_*` keep the original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSample {
    pub id: String,
    pub level_class: LevelClass,
    pub untruncated: NormalizedSlice,
    pub truncated: NormalizedSlice,
    pub fov_mask: BinaryMask,
    pub small_mask: BinaryMask,
    pub dfov_crop: NormalizedSlice,
    pub gt_bbox: BoundingBox,
    pub fov_spec: FovSpec,
    pub crop_geometry: CropGeometry,
    pub zoom: ZoomTransform,
    pub source_untruncated: NormalizedSlice,
    pub source_truncated: NormalizedSlice,
    pub source_fov_mask: BinaryMask,
}

/// Run the full simulation chain for one windowed slice.
pub fn simulate_sample(
    id: impl Into<String>,
    level_class: LevelClass,
    untruncated: &NormalizedSlice,
    fov_seed: u64,
    config: &SimulationConfig,
) -> Result<TruncationSample> {
    let (w, h) = untruncated.dims();
    if w != h {
        return Err(Error::InvalidDimension {
            width: w,
            height: h,
            reason: "FOV simulation needs square slices",
        });
    }
    let fov_spec = sample_fov_spec(w, fov_seed, config.rfov_range, config.dfov_range)?;
    let fov = rasterize_fov_mask(&fov_spec);
    let truncated = truncate(untruncated, &fov, FOV_SENTINEL)?;
    let body = identify_body_mask(untruncated, config.body_threshold).stage("body mask")?;
    let gt_bbox = crate::bodydetect::bbox_from_mask(&body)?;
    let zoomed = zoom_out(untruncated, &gt_bbox, config.margin, AIR).stage("zoom out")?;
    let zoom = zoomed.transform;
    let z_fov = zoom.apply_to_mask(&fov, false);
    // The known body is found exactly as at inference: on the truncated slice.
    let known = identify_body_mask(&truncated, config.body_threshold).stage("known body mask")?;
    let z_known = zoom.apply_to_mask(&known, false);
    let z_truncated = truncate(&zoomed.slice, &z_fov, FOV_SENTINEL)?;
    let small_mask = build_small_mask(&zoomed.scaled_bbox, &z_known, &z_fov)?;
    let (dfov_crop, crop_geometry) = crop_dfov(&truncated, &fov_spec, config.detector_resolution)?;
    Ok(TruncationSample {
        id: id.into(),
        level_class,
        untruncated: zoomed.slice,
        truncated: z_truncated,
        fov_mask: z_fov,
        small_mask,
        dfov_crop,
        gt_bbox,
        fov_spec,
        crop_geometry,
        zoom,
        source_untruncated: untruncated.clone(),
        source_truncated: truncated,
        source_fov_mask: fov,
    })
}

/// A source slice ready for simulation.
#[derive(Debug, Clone)]
pub struct SourceSlice {
    pub id: String,
    pub level_class: LevelClass,
    pub hu: HuSlice,
}

/// Simulate `count` samples, cycling through `sources`. Sample `i` uses
/// FOV seed `child_seed(seed, i)`; the result does not depend on threading.
pub fn build_dataset_in_memory(sources: &[SourceSlice], count: usize, seed: u64, config: &SimulationConfig) -> Result<Vec<TruncationSample>> {
    config.validate()?;
    if count > 0 && sources.is_empty() {
        return Err(Error::Config("no source slices to simulate from".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let src = &sources[i % sources.len()];
            let norm = window_and_normalize(&src.hu, config.window.0, config.window.1)?;
            let id = format!("{}_t{i:05}", src.id);
            simulate_sample(id, src.level_class, &norm, stream_seed(child_seed(seed, i as u64), 7), config)
        })
        .collect()
}

/// One JSON line of the simulated-dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub id: String,
    pub level_class: LevelClass,
    pub untruncated: String,
    pub truncated: String,
    pub fov_mask: String,
    pub small_mask: String,
    pub dfov_crop: String,
    pub gt_bbox: [f64; 4],
    pub fov_spec: FovSpecRow,
    pub crop_geometry: CropGeometry,
    pub zoom: ZoomTransform,
    pub source_untruncated: String,
    pub source_truncated: String,
    pub source_fov_mask: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpecRow {
    pub r_rfov: f64,
    pub r_dfov: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Write every sample under `out_dir` and return the manifest rows.
pub fn write_dataset(samples: &[TruncationSample], out_dir: &Path) -> Result<Vec<DatasetRow>> {
    samples
        .par_iter()
        .map(|s| {
            let rel = |suffix: &str| format!("{}/{}_{suffix}.fg01", s.id, s.id);
            let full = |rel: &str| out_dir.join(rel);
            let sp = s.untruncated.spacing();
            let row = DatasetRow {
                id: s.id.clone(),
                level_class: s.level_class,
                untruncated: rel("untruncated"),
                truncated: rel("truncated"),
                fov_mask: rel("fov_mask"),
                small_mask: rel("small_mask"),
                dfov_crop: rel("dfov_crop"),
                gt_bbox: s.gt_bbox.as_array(),
                fov_spec: FovSpecRow {
                    r_rfov: s.fov_spec.r_rfov,
                    r_dfov: s.fov_spec.r_dfov,
                    dx: s.fov_spec.dx,
                    dy: s.fov_spec.dy,
                },
                crop_geometry: s.crop_geometry,
                zoom: s.zoom,
                source_untruncated: rel("source_untruncated"),
                source_truncated: rel("source_truncated"),
                source_fov_mask: rel("source_fov_mask"),
            };
            io::write_normalized(&full(&row.untruncated), &s.untruncated)?;
            io::write_normalized(&full(&row.truncated), &s.truncated)?;
            io::write_mask(&full(&row.fov_mask), &s.fov_mask, sp)?;
            io::write_mask(&full(&row.small_mask), &s.small_mask, sp)?;
            io::write_normalized(&full(&row.dfov_crop), &s.dfov_crop)?;
            io::write_normalized(&full(&row.source_untruncated), &s.source_untruncated)?;
            io::write_normalized(&full(&row.source_truncated), &s.source_truncated)?;
            io::write_mask(&full(&row.source_fov_mask), &s.source_fov_mask, s.source_untruncated.spacing())?;
            Ok(row)
        })
        .collect()
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.jsonl")
}

/// Read a phantom manifest, simulate `count` samples and write them with a
/// manifest to `out_dir`.
pub fn build_dataset(phantom_manifest: &Path, out_dir: &Path, count: usize, seed: u64, config: &SimulationConfig) -> Result<Vec<DatasetRow>> {
    let rows: Vec<PhantomManifestRow> = io::read_jsonl(phantom_manifest)?;
    let sources = rows
        .iter()
        .map(|r| {
            Ok(SourceSlice {
                id: r.id.clone(),
                level_class: r.level_class,
                hu: io::read_hu(&io::resolve(phantom_manifest, &r.hu_path))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = build_dataset_in_memory(&sources, count, seed, config)?;
    let out = write_dataset(&samples, out_dir)?;
    io::write_jsonl(&manifest_path(out_dir), &out)?;
    Ok(out)
}

/// Load a simulated dataset written by [`build_dataset`].
pub fn load_dataset(manifest: &Path) -> Result<Vec<TruncationSample>> {
    let rows: Vec<DatasetRow> = io::read_jsonl(manifest)?;
    rows.par_iter()
        .map(|r| {
            let p = |rel: &str| io::resolve(manifest, rel);
            let fov_spec = FovSpec {
                r_rfov: r.fov_spec.r_rfov,
                r_dfov: r.fov_spec.r_dfov,
                dx: r.fov_spec.dx,
                dy: r.fov_spec.dy,
                d: 0,
            };
            let source_untruncated = io::read_normalized(&p(&r.source_untruncated))?;
            let [x0, y0, x1, y1] = r.gt_bbox;
            Ok(TruncationSample {
                id: r.id.clone(),
                level_class: r.level_class,
                untruncated: io::read_normalized(&p(&r.untruncated))?,
                truncated: io::read_normalized(&p(&r.truncated))?,
                fov_mask: io::read_mask(&p(&r.fov_mask))?,
                small_mask: io::read_mask(&p(&r.small_mask))?,
                dfov_crop: io::read_normalized(&p(&r.dfov_crop))?,
                gt_bbox: BoundingBox::new(x0, y0, x1, y1)?,
                fov_spec: FovSpec {
                    d: source_untruncated.width(),
                    ..fov_spec
                },
                crop_geometry: r.crop_geometry,
                zoom: r.zoom,
                source_truncated: io::read_normalized(&p(&r.source_truncated))?,
                source_fov_mask: io::read_mask(&p(&r.source_fov_mask))?,
                source_untruncated,
            })
        })
        .collect()
}

impl TruncationSample {
    /// Ground-truth box mapped into the zoomed model frame.
    pub fn gt_bbox_in_model_frame(&self) -> BoundingBox {
        self.zoom.apply_to_bbox(&self.gt_bbox)
    }

    /// Regressor example: DFOV crop, its window, and the original-frame box.
    pub fn bbox_training_sample(&self) -> BboxTrainingSample {
        BboxTrainingSample {
            crop: self.dfov_crop.clone(),
            geometry: self.crop_geometry,
            bbox: self.gt_bbox,
        }
    }
}
