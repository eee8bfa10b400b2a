//! Synthetic chest-like phantoms with ground-truth tissue labels.
//!
//! A phantom is a set of nested ellipses: a subcutaneous fat ring around a
//! muscle ring around an organ interior holding two lungs and a spine disk.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BoundingBox, HuSlice, PixelSpacing};
use crate::rng::rng_from_seed;

pub const DESK_RESOLUTION: usize = 64;
pub const DESK_SPACING_MM: f64 = 6.0;
pub const DEFAULT_NOISE_HU: f64 = 10.0;
pub const MAX_NOISE_HU: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LevelClass {
    L5,
    L8,
    L10,
}

impl LevelClass {
    pub const ALL: [LevelClass; 3] = [LevelClass::L5, LevelClass::L8, LevelClass::L10];

    pub fn name(self) -> &'static str {
        match self {
            LevelClass::L5 => "L5",
            LevelClass::L8 => "L8",
            LevelClass::L10 => "L10",
        }
    }

    /// Round-robin assignment used when building datasets.
    pub fn for_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    // (semi-axis a range, b/a aspect range, lung width fraction, lung height fraction)
    fn ranges(self) -> ClassRanges {
        match self {
            LevelClass::L5 => ClassRanges {
                a: (25.0, 29.0),
                aspect: (0.70, 0.80),
                lung_w: (0.30, 0.36),
                lung_h: (0.50, 0.62),
            },
            LevelClass::L8 => ClassRanges {
                a: (24.0, 28.0),
                aspect: (0.76, 0.86),
                lung_w: (0.27, 0.33),
                lung_h: (0.45, 0.56),
            },
            LevelClass::L10 => ClassRanges {
                a: (23.0, 27.0),
                aspect: (0.82, 0.94),
                lung_w: (0.22, 0.28),
                lung_h: (0.38, 0.48),
            },
        }
    }
}

impl fmt::Display for LevelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LevelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L5" => Ok(LevelClass::L5),
            "L8" => Ok(LevelClass::L8),
            "L10" => Ok(LevelClass::L10),
            other => Err(Error::Config(format!("unknown level class {other:?}"))),
        }
    }
}

struct ClassRanges {
    a: (f64, f64),
    aspect: (f64, f64),
    lung_w: (f64, f64),
    lung_h: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TissueLabel {
    Air = 0,
    Lung = 1,
    Sat = 2,
    Muscle = 3,
    Organ = 4,
    Bone = 5,
}

impl TissueLabel {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TissueLabel::Air,
            1 => TissueLabel::Lung,
            2 => TissueLabel::Sat,
            3 => TissueLabel::Muscle,
            4 => TissueLabel::Organ,
            5 => TissueLabel::Bone,
            _ => return None,
        })
    }

    /// Nominal attenuation. Organ sits above the muscle threshold range so
    /// threshold segmentation separates the two.
    pub fn hu(self) -> f64 {
        match self {
            TissueLabel::Air => -1000.0,
            TissueLabel::Lung => -800.0,
            TissueLabel::Sat => -100.0,
            TissueLabel::Muscle => 40.0,
            TissueLabel::Organ => 180.0,
            TissueLabel::Bone => 700.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<TissueLabel>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<TissueLabel>) -> Result<Self> {
        if width * height != labels.len() {
            return Err(Error::InvalidDimension {
                width,
                height,
                reason: "label count does not match width * height",
            });
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[TissueLabel] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> TissueLabel {
        self.labels[y * self.width + x]
    }

    pub fn count(&self, label: TissueLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn mask_of(&self, label: TissueLabel) -> crate::imagecore::BinaryMask {
        crate::imagecore::BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }

    pub fn body_mask(&self) -> crate::imagecore::BinaryMask {
        crate::imagecore::BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) != TissueLabel::Air)
    }
}

/// Parametric description of one phantom. Lengths are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub level_class: LevelClass,
    pub body_axes: (f64, f64),
    pub body_center: (f64, f64),
    pub sat_thickness: f64,
    pub muscle_thickness: f64,
    pub lung_axes: (f64, f64),
    /// Lung centers relative to the body center: `(±dx, dy)`.
    pub lung_offsets: (f64, f64),
    pub spine_radius: f64,
    pub noise_hu: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        if self.a <= 0.0 || self.b <= 0.0 {
            return false;
        }
        let u = (x - self.cx) / self.a;
        let v = (y - self.cy) / self.b;
        u * u + v * v <= 1.0
    }

    /// Whether this ellipse lies within `outer` (boundary sampled densely).
    fn inside(&self, outer: &Ellipse) -> bool {
        (0..360).all(|k| {
            let th = (k as f64).to_radians();
            outer.contains(self.cx + self.a * th.cos(), self.cy + self.b * th.sin())
        })
    }
}

impl PhantomSpec {
    fn body(&self) -> Ellipse {
        Ellipse {
            cx: self.body_center.0,
            cy: self.body_center.1,
            a: self.body_axes.0,
            b: self.body_axes.1,
        }
    }

    fn muscle_outer(&self) -> Ellipse {
        let mut e = self.body();
        e.a -= self.sat_thickness;
        e.b -= self.sat_thickness;
        e
    }

    fn organ(&self) -> Ellipse {
        let mut e = self.muscle_outer();
        e.a -= self.muscle_thickness;
        e.b -= self.muscle_thickness;
        e
    }

    fn lungs(&self) -> [Ellipse; 2] {
        let (dx, dy) = self.lung_offsets;
        let (la, lb) = self.lung_axes;
        let (cx, cy) = self.body_center;
        [
            Ellipse {
                cx: cx - dx,
                cy: cy + dy,
                a: la,
                b: lb,
            },
            Ellipse {
                cx: cx + dx,
                cy: cy + dy,
                a: la,
                b: lb,
            },
        ]
    }

    fn spine(&self) -> Ellipse {
        let organ = self.organ();
        Ellipse {
            cx: organ.cx,
            cy: organ.cy + organ.b - self.spine_radius - 1.0,
            a: self.spine_radius,
            b: self.spine_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.body_axes;
        let geometric = [a, b, self.muscle_thickness, self.lung_axes.0, self.lung_axes.1, self.spine_radius];
        if geometric.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.sat_thickness < 0.0 {
            return Err(Error::Config(format!("non-positive phantom geometry: {self:?}")));
        }
        let rings = self.sat_thickness + self.muscle_thickness;
        if a <= rings || b <= rings {
            return Err(Error::Config(format!("body axes ({a}, {b}) must exceed ring thickness {rings}")));
        }
        if !(0.0..=MAX_NOISE_HU).contains(&self.noise_hu) {
            return Err(Error::Config(format!("noise amplitude {} outside [0, 20] HU", self.noise_hu)));
        }
        let organ = self.organ();
        for lung in self.lungs() {
            if !lung.inside(&organ) {
                return Err(Error::Config("lung extends past the muscle boundary".into()));
            }
        }
        if !self.spine().inside(&organ) {
            return Err(Error::Config("spine extends past the muscle boundary".into()));
        }
        Ok(())
    }

    fn label_at(&self, x: f64, y: f64) -> TissueLabel {
        if !self.body().contains(x, y) {
            return TissueLabel::Air;
        }
        if !self.muscle_outer().contains(x, y) {
            return TissueLabel::Sat;
        }
        if !self.organ().contains(x, y) {
            return TissueLabel::Muscle;
        }
        if self.spine().contains(x, y) {
            return TissueLabel::Bone;
        }
        if self.lungs().iter().any(|l| l.contains(x, y)) {
            return TissueLabel::Lung;
        }
        TissueLabel::Organ
    }

    /// Analytic area (px²) of the subcutaneous fat ring.
    pub fn analytic_sat_area(&self) -> f64 {
        let (b, m) = (self.body(), self.muscle_outer());
        std::f64::consts::PI * (b.a * b.b - m.a * m.b)
    }

    /// Analytic area (px²) of the muscle ring.
    pub fn analytic_muscle_area(&self) -> f64 {
        let (m, o) = (self.muscle_outer(), self.organ());
        std::f64::consts::PI * (m.a * m.b - o.a * o.b)
    }
}

fn uniform(rng: &mut impl rand::Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draw a phantom description for `level_class`, deterministic in `rng_seed`.
pub fn sample_phantom_spec(level_class: LevelClass, rng_seed: u64) -> PhantomSpec {
    let mut rng = rng_from_seed(rng_seed);
    let r = level_class.ranges();
    let center = (DESK_RESOLUTION as f64 - 1.0) * 0.5;
    let a = uniform(&mut rng, r.a);
    let b = a * uniform(&mut rng, r.aspect);
    let sat = uniform(&mut rng, (2.0, 4.5));
    let muscle = uniform(&mut rng, (2.5, 4.5));
    let body_center = (center + uniform(&mut rng, (-2.0, 2.0)), center + uniform(&mut rng, (-2.0, 2.0)));
    let inner_a = a - sat - muscle;
    let inner_b = b - sat - muscle;
    let lung_a = inner_a * uniform(&mut rng, r.lung_w);
    let lung_b = inner_b * uniform(&mut rng, r.lung_h);
    let lung_dx = inner_a * uniform(&mut rng, (0.42, 0.50));
    let lung_dy = -inner_b * uniform(&mut rng, (0.05, 0.15));
    let spine_radius = uniform(&mut rng, (2.0, 3.0));
    let spec = PhantomSpec {
        level_class,
        body_axes: (a, b),
        body_center,
        sat_thickness: sat,
        muscle_thickness: muscle,
        lung_axes: (lung_a, lung_b),
        lung_offsets: (lung_dx, lung_dy),
        spine_radius,
        noise_hu: DEFAULT_NOISE_HU,
        rng_seed: rng.random(),
    };
    debug_assert!(spec.validate().is_ok(), "sampled spec invalid: {spec:?}");
    spec
}

/// Render a phantom to HU values plus its label map.
pub fn rasterize_phantom(spec: &PhantomSpec, width: usize, height: usize, spacing: PixelSpacing) -> Result<(HuSlice, LabelMap)> {
    spec.validate()?;
    let body = spec.body();
    if body.cx - body.a < -0.5 || body.cy - body.b < -0.5 || body.cx + body.a > width as f64 - 0.5 || body.cy + body.b > height as f64 - 0.5 {
        return Err(Error::Geometry(format!(
            "body ellipse centered at {:?} with axes {:?} exceeds the {width}x{height} canvas",
            spec.body_center, spec.body_axes
        )));
    }
    let mut rng = rng_from_seed(spec.rng_seed);
    let mut labels = Vec::with_capacity(width * height);
    let mut values = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let label = spec.label_at(x as f64, y as f64);
            let noise = if spec.noise_hu > 0.0 {
                rng.random_range(-spec.noise_hu..=spec.noise_hu)
            } else {
                0.0
            };
            labels.push(label);
            values.push((label.hu() + noise) as f32);
        }
    }
    Ok((HuSlice::new(width, height, values, spacing)?, LabelMap::new(width, height, labels)?))
}

/// Tightest half-open box around every non-air pixel.
pub fn ground_truth_bbox(labels: &LabelMap) -> Result<BoundingBox> {
    crate::bodydetect::bbox_from_mask(&labels.body_mask())
}

/// One generated phantom: HU slice plus its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomRecord {
    pub id: String,
    pub level_class: LevelClass,
    pub seed: u64,
    pub hu: HuSlice,
    pub labels: LabelMap,
}

/// One JSON line of the phantom manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifestRow {
    pub id: String,
    pub level_class: LevelClass,
    pub seed: u64,
    pub hu_path: String,
    pub label_path: String,
}

/// Generate `count` desk-resolution phantoms. Phantom `i` gets level class
/// `LevelClass::for_index(i)` and seed `child_seed(seed, i)`.
pub fn generate_phantoms(count: usize, seed: u64, noise_hu: f64) -> Result<Vec<PhantomRecord>> {
    if !(0.0..=MAX_NOISE_HU).contains(&noise_hu) {
        return Err(Error::Config(format!("noise amplitude {noise_hu} HU outside [0, {MAX_NOISE_HU}]")));
    }
    (0..count)
        .map(|i| {
            let level_class = LevelClass::for_index(i);
            let s = crate::rng::child_seed(seed, i as u64);
            let mut spec = sample_phantom_spec(level_class, s);
            spec.noise_hu = noise_hu;
            let (hu, labels) = rasterize_phantom(&spec, DESK_RESOLUTION, DESK_RESOLUTION, PixelSpacing::isotropic(DESK_SPACING_MM))?;
            Ok(PhantomRecord {
                id: format!("ph{i:05}"),
                level_class,
                seed: s,
                hu,
                labels,
            })
        })
        .collect()
}

/// Write phantoms plus `manifest.jsonl` into `out_dir`; returns the manifest path.
pub fn write_phantoms(records: &[PhantomRecord], out_dir: &std::path::Path) -> Result<std::path::PathBuf> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let row = PhantomManifestRow {
            id: r.id.clone(),
            level_class: r.level_class,
            seed: r.seed,
            hu_path: format!("{}_hu.fg01", r.id),
            label_path: format!("{}_labels.fg01", r.id),
        };
        crate::io::write_hu(&out_dir.join(&row.hu_path), &r.hu)?;
        crate::io::write_labels(&out_dir.join(&row.label_path), &r.labels, r.hu.spacing())?;
        rows.push(row);
    }
    let manifest = out_dir.join("manifest.jsonl");
    crate::io::write_jsonl(&manifest, &rows)?;
    Ok(manifest)
}
