//! Muscle/SAT segmentation by HU thresholds, area measurement, and the
//! multiple-inference median selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodydetect::{identify_body_mask, predict_bbox, BboxRegressorParams, CropGeometry, BODY_THRESHOLD};
use crate::diffusion::{sample_jobs, DenoiserParams, DiffusionSchedule, SampleJob};
use crate::error::{Error, Result, StageContext};
use crate::fovsim::{build_small_mask, crop_window};
use crate::imagecore::{
    denormalize_value, ensure_same_dims, resample_bilinear, zoom_out, BinaryMask, BoundingBox, NormalizedSlice, PixelSpacing, ZoomTransform, AIR,
    SOFT_TISSUE_WINDOW,
};
use crate::rng::child_seed;

/// Inclusive HU ranges for each tissue plus the display window the slices
/// were normalized with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueThresholds {
    pub sat: (f64, f64),
    pub muscle: (f64, f64),
    pub window: (f64, f64),
}

impl Default for TissueThresholds {
    fn default() -> Self {
        Self {
            sat: (-190.0, -30.0),
            muscle: (-29.0, 150.0),
            window: SOFT_TISSUE_WINDOW,
        }
    }
}

/// Recovered HU values closer than this to an integer are snapped to it, so
/// the float round trip through the window cannot move a boundary value.
const HU_SNAP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tissue {
    Other,
    Muscle,
    Sat,
}

impl TissueThresholds {
    /// Class of one normalized value inside the body. Values saturated at the
    /// window edges carry no exact HU and count as other.
    pub fn classify(&self, v: f32) -> Tissue {
        if v <= -1.0 || v >= 1.0 {
            return Tissue::Other;
        }
        let mut hu = denormalize_value(v, self.window.0, self.window.1);
        if (hu - hu.round()).abs() < HU_SNAP {
            hu = hu.round();
        }
        if hu >= self.sat.0 && hu <= self.sat.1 {
            Tissue::Sat
        } else if hu >= self.muscle.0 && hu <= self.muscle.1 {
            Tissue::Muscle
        } else {
            Tissue::Other
        }
    }
}

/// Per-pixel tissue classes for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMap {
    width: usize,
    height: usize,
    labels: Vec<Tissue>,
}

impl TissueMap {
    pub fn from_labels(width: usize, height: usize, labels: Vec<Tissue>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape {
                expected: (width, height),
                actual: (labels.len(), 1),
            });
        }
        Ok(Self { width, height, labels })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[Tissue] {
        &self.labels
    }

    pub fn count(&self, t: Tissue) -> usize {
        self.labels.iter().filter(|&&l| l == t).count()
    }

    pub fn mask_of(&self, t: Tissue) -> BinaryMask {
        BinaryMask::new(self.width, self.height, self.labels.iter().map(|&l| l == t).collect()).expect("dims match")
    }
}

/// Threshold segmentation restricted to `body_mask`.
pub fn segment_tissues(slice: &NormalizedSlice, body_mask: &BinaryMask, thresholds: &TissueThresholds) -> Result<TissueMap> {
    ensure_same_dims(slice.dims(), body_mask.dims())?;
    let labels = slice
        .values()
        .iter()
        .zip(body_mask.bits())
        .map(|(&v, &inside)| if inside { thresholds.classify(v) } else { Tissue::Other })
        .collect();
    Ok(TissueMap {
        width: slice.width(),
        height: slice.height(),
        labels,
    })
}

/// Muscle and SAT areas in cm².
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyCompMeasurement {
    pub muscle_area: f64,
    pub sat_area: f64,
}

/// Areas from pixel counts: `count * sx * sy / 100` (mm² to cm²).
pub fn measure(map: &TissueMap, spacing: PixelSpacing) -> BodyCompMeasurement {
    let px = spacing.sx * spacing.sy / 100.0;
    BodyCompMeasurement {
        muscle_area: map.count(Tissue::Muscle) as f64 * px,
        sat_area: map.count(Tissue::Sat) as f64 * px,
    }
}

/// Body mask, tissue map and areas of one slice.
pub fn analyze(slice: &NormalizedSlice, body_threshold: f32, thresholds: &TissueThresholds) -> Result<(TissueMap, BodyCompMeasurement)> {
    let body = identify_body_mask(slice, body_threshold)?;
    let map = segment_tissues(slice, &body, thresholds)?;
    let m = measure(&map, slice.spacing());
    Ok((map, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected_index: usize,
    pub distances: Vec<f64>,
    /// `(median muscle, median SAT)`.
    pub medians: (f64, f64),
}

/// Median with the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Pick the candidate whose (muscle, SAT) areas are L1-closest to the
/// per-tissue medians; ties go to the lowest index.
pub fn select_representative(candidates: &[BodyCompMeasurement]) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidates to select from".into()));
    }
    let mm = median(&candidates.iter().map(|c| c.muscle_area).collect::<Vec<_>>());
    let ms = median(&candidates.iter().map(|c| c.sat_area).collect::<Vec<_>>());
    let distances: Vec<f64> = candidates.iter().map(|c| (c.muscle_area - mm).abs() + (c.sat_area - ms).abs()).collect();
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[best] {
            best = i;
        }
    }
    Ok(SelectionResult {
        selected_index: best,
        distances,
        medians: (mm, ms),
    })
}

/// Everything the recovery pipeline needs besides the trained models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub margin: usize,
    pub body_threshold: f32,
    pub thresholds: TissueThresholds,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            margin: 4,
            body_threshold: BODY_THRESHOLD,
            thresholds: TissueThresholds::default(),
        }
    }
}

/// The two trained models plus the sampling schedule.
#[derive(Debug, Clone)]
pub struct Models {
    pub bbox: BboxRegressorParams,
    pub denoiser: DenoiserParams,
    pub schedule: DiffusionSchedule,
}

impl Models {
    /// Pair the models, using the schedule stored with the denoiser.
    pub fn new(bbox: BboxRegressorParams, denoiser: DenoiserParams) -> Result<Self> {
        let schedule = denoiser.header.schedule.build()?;
        Ok(Self { bbox, denoiser, schedule })
    }
}

/// Model-frame inputs for the outpainter, derived from a truncated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecovery {
    pub predicted_bbox: BoundingBox,
    pub transform: ZoomTransform,
    pub zoomed: NormalizedSlice,
    pub small_mask: BinaryMask,
}

/// Body mask → box prediction on the DFOV crop → zoom-out → small mask.
pub fn prepare_recovery(models: &Models, truncated: &NormalizedSlice, dfov: &CropGeometry, config: &RecoveryConfig) -> Result<PreparedRecovery> {
    let crop = crop_window(truncated, dfov, models.bbox.header.input_resolution).stage("DFOV crop")?;
    let predicted_bbox = predict_bbox(&models.bbox, &crop, dfov).stage("bbox prediction")?;
    prepare_with_bbox(truncated, predicted_bbox, config)
}

/// Zoom-out and small mask for a given body box (in the slice frame).
pub fn prepare_with_bbox(truncated: &NormalizedSlice, predicted_bbox: BoundingBox, config: &RecoveryConfig) -> Result<PreparedRecovery> {
    let body = identify_body_mask(truncated, config.body_threshold).stage("body mask")?;
    let z = zoom_out(truncated, &predicted_bbox, config.margin, AIR).stage("zoom out")?;
    let body_z = z.transform.apply_to_mask(&body, false);
    let all = BinaryMask::filled(truncated.width(), truncated.height(), true);
    let small_mask = build_small_mask(&z.scaled_bbox, &body_z, &all).stage("small mask")?;
    Ok(PreparedRecovery {
        predicted_bbox,
        transform: z.transform,
        zoomed: z.slice,
        small_mask,
    })
}

/// Outcome of the full recovery pipeline for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub prepared: PreparedRecovery,
    /// All outpainted candidates in the zoomed model frame.
    pub candidates: Vec<NormalizedSlice>,
    pub measurements: Vec<BodyCompMeasurement>,
    pub selection: SelectionResult,
}

impl Recovery {
    pub fn selected(&self) -> &NormalizedSlice {
        &self.candidates[self.selection.selected_index]
    }
}

/// Measure candidates and apply the median selection.
pub fn finish_recovery(prepared: PreparedRecovery, candidates: Vec<NormalizedSlice>, config: &RecoveryConfig) -> Result<Recovery> {
    let measurements = candidates
        .par_iter()
        .map(|c| analyze(c, config.body_threshold, &config.thresholds).map(|(_, m)| m))
        .collect::<Result<Vec<_>>>()
        .stage("candidate measurement")?;
    let selection = select_representative(&measurements)?;
    Ok(Recovery {
        prepared,
        candidates,
        measurements,
        selection,
    })
}

/// Sampling jobs for `n` candidates of a prepared slice; none when the
/// small mask is empty (nothing to outpaint).
pub fn candidate_jobs(prepared: &PreparedRecovery, n: usize, seed: u64) -> Vec<SampleJob<'_>> {
    if prepared.small_mask.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|i| SampleJob {
            slice: &prepared.zoomed,
            mask: &prepared.small_mask,
            seed: child_seed(seed, i as u64),
        })
        .collect()
}

/// Full pipeline on one truncated slice: `n` outpainted candidates and the
/// one closest to the median areas.
pub fn recover_slice(
    models: &Models,
    truncated: &NormalizedSlice,
    dfov: &CropGeometry,
    n: usize,
    seed: u64,
    config: &RecoveryConfig,
) -> Result<Recovery> {
    if n == 0 {
        return Err(Error::Config("recovery needs n >= 1".into()));
    }
    let prepared = prepare_recovery(models, truncated, dfov, config)?;
    let jobs = candidate_jobs(&prepared, n, seed);
    let candidates = if jobs.is_empty() {
        vec![prepared.zoomed.clone(); n]
    } else {
        sample_jobs(&models.denoiser, &models.schedule, &jobs).stage("outpainting")?
    };
    finish_recovery(prepared, candidates, config)
}

/// Resample a slice to the detector resolution without cropping.
pub fn detector_view(slice: &NormalizedSlice, res: usize) -> Result<NormalizedSlice> {
    if slice.dims() == (res, res) {
        Ok(slice.clone())
    } else {
        resample_bilinear(slice, res, res)
    }
}
