//! Grid image types, Hounsfield windowing, bilinear resampling and the
//! zoom-out transform that makes room for outpainting.
//!
//! Coordinates: `x` is the column index, `y` the row index, origin top-left,
//! pixel centers at integer coordinates. Boxes are half-open `[min, max)`;
//! a pixel belongs to a box when its center lies inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum edge length of a [`HuSlice`].
pub const MIN_SLICE_EDGE: usize = 8;

/// Soft-tissue window used throughout the pipeline, in HU.
pub const SOFT_TISSUE_WINDOW: (f64, f64) = (-160.0, 240.0);

/// Normalized value of air after windowing; also the zoom-out fill value.
pub const AIR: f32 = -1.0;

/// Physical pixel size in millimetres, `(sx, sy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelSpacing {
    pub sx: f64,
    pub sy: f64,
}

impl PixelSpacing {
    pub fn new(sx: f64, sy: f64) -> Result<Self> {
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(Error::Config(format!("pixel spacing must be positive, got ({sx}, {sy})")));
        }
        Ok(Self { sx, sy })
    }

    pub fn isotropic(s: f64) -> Self {
        Self { sx: s, sy: s }
    }

    /// Spacing after a uniform geometric scale of the image content by `scale`.
    pub fn divided_by(self, scale: f64) -> Self {
        Self {
            sx: self.sx / scale,
            sy: self.sy / scale,
        }
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidDimension {
            width,
            height,
            reason: "value count does not match width * height",
        });
    }
    Ok(())
}

/// A CT-like slice in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct HuSlice {
    width: usize,
    height: usize,
    values: Vec<f32>,
    spacing: PixelSpacing,
    /// Set once pixels outside the field of view carry a sentinel.
    pub out_of_fov_sentinel_applied: bool,
}

impl HuSlice {
    pub fn new(width: usize, height: usize, values: Vec<f32>, spacing: PixelSpacing) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if width < MIN_SLICE_EDGE || height < MIN_SLICE_EDGE {
            return Err(Error::InvalidDimension {
                width,
                height,
                reason: "slices must be at least 8x8",
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("HU value {v}")));
        }
        Ok(Self {
            width,
            height,
            values,
            spacing,
            out_of_fov_sentinel_applied: false,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn spacing(&self) -> PixelSpacing {
        self.spacing
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Windowed slice with every value in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSlice {
    width: usize,
    height: usize,
    values: Vec<f32>,
    spacing: PixelSpacing,
}

impl NormalizedSlice {
    /// Builds a slice, rejecting values outside `[-1, 1]`.
    pub fn new(width: usize, height: usize, values: Vec<f32>, spacing: PixelSpacing) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("normalized value {v} outside [-1, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
            spacing,
        })
    }

    /// Builds a slice, clamping every value into `[-1, 1]`. NaN is rejected.
    pub fn from_clamped(width: usize, height: usize, mut values: Vec<f32>, spacing: PixelSpacing) -> Result<Self> {
        for v in values.iter_mut() {
            if v.is_nan() {
                return Err(Error::Numeric("NaN in normalized slice".into()));
            }
            *v = v.clamp(-1.0, 1.0);
        }
        Self::new(width, height, values, spacing)
    }

    pub fn constant(width: usize, height: usize, value: f32, spacing: PixelSpacing) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], spacing)
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

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn spacing(&self) -> PixelSpacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: PixelSpacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Edge-clamped bilinear sample at continuous pixel coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let v00 = self.get(x0, y0) as f64;
        let v10 = self.get(x1, y0) as f64;
        let v01 = self.get(x0, y1) as f64;
        let v11 = self.get(x1, y1) as f64;
        let top = v00 * (1.0 - fx) + v10 * fx;
        let bottom = v01 * (1.0 - fx) + v11 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

pub(crate) fn ensure_same_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape { expected, actual });
    }
    Ok(())
}

/// Axis-aligned half-open box `[x_min, x_max) x [y_min, y_max)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidBbox(format!("non-finite coordinates {b:?}")));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBbox(format!("degenerate box {b:?}")));
        }
        Ok(b)
    }

    /// Builds a box from unordered corner coordinates, sorting each axis.
    pub fn from_unordered(xa: f64, ya: f64, xb: f64, yb: f64) -> Result<Self> {
        Self::new(xa.min(xb), ya.min(yb), xa.max(xb), ya.max(yb))
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Pixels whose centers lie inside the box.
    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_fn(width, height, |x, y| self.contains_pixel(x, y))
    }

    /// True when the box lies inside `[margin, W - margin] x [margin, H - margin]`.
    pub fn fits_within(&self, width: usize, height: usize, margin: f64) -> bool {
        const EPS: f64 = 1e-9;
        self.x_min >= margin - EPS
            && self.y_min >= margin - EPS
            && self.x_max <= width as f64 - margin + EPS
            && self.y_max <= height as f64 - margin + EPS
    }
}

/// Map HU into `[-1, 1]` through a clamped linear window.
pub fn window_and_normalize(slice: &HuSlice, window_lo: f64, window_hi: f64) -> Result<NormalizedSlice> {
    check_window(window_lo, window_hi)?;
    let span = window_hi - window_lo;
    let values = slice
        .values()
        .iter()
        .map(|&h| (2.0 * ((h as f64).clamp(window_lo, window_hi) - window_lo) / span - 1.0) as f32)
        .collect();
    NormalizedSlice::new(slice.width(), slice.height(), values, slice.spacing())
}

/// Inverse of the window map for a single in-window value.
pub fn denormalize_value(v: f32, window_lo: f64, window_hi: f64) -> f64 {
    window_lo + (v as f64 + 1.0) * 0.5 * (window_hi - window_lo)
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidWindow { lo, hi });
    }
    Ok(())
}

/// Edge-clamped bilinear resampling with pixel-center alignment.
pub fn resample_bilinear(slice: &NormalizedSlice, new_width: usize, new_height: usize) -> Result<NormalizedSlice> {
    if new_width < 2 || new_height < 2 {
        return Err(Error::InvalidDimension {
            width: new_width,
            height: new_height,
            reason: "resampled dimensions must be at least 2",
        });
    }
    let rx = slice.width() as f64 / new_width as f64;
    let ry = slice.height() as f64 / new_height as f64;
    let mut values = Vec::with_capacity(new_width * new_height);
    for y in 0..new_height {
        let sy = (y as f64 + 0.5) * ry - 0.5;
        for x in 0..new_width {
            let sx = (x as f64 + 0.5) * rx - 0.5;
            values.push(slice.sample_bilinear(sx, sy));
        }
    }
    let spacing = PixelSpacing {
        sx: slice.spacing().sx * rx,
        sy: slice.spacing().sy * ry,
    };
    NormalizedSlice::from_clamped(new_width, new_height, values, spacing)
}

/// Uniform scale about the image center followed by a translation:
/// `out = scale * (in - center) + center + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomTransform {
    pub scale: f64,
    pub center: (f64, f64),
    pub shift: (f64, f64),
}

impl ZoomTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            scale: 1.0,
            center: image_center(width, height),
            shift: (0.0, 0.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.shift == (0.0, 0.0)
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.scale * (x - self.center.0) + self.center.0 + self.shift.0,
            self.scale * (y - self.center.1) + self.center.1 + self.shift.1,
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.center.0 - self.shift.0) / self.scale + self.center.0,
            (y - self.center.1 - self.shift.1) / self.scale + self.center.1,
        )
    }

    pub fn apply_to_bbox(&self, b: &BoundingBox) -> BoundingBox {
        let (x0, y0) = self.forward(b.x_min, b.y_min);
        let (x1, y1) = self.forward(b.x_max, b.y_max);
        BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        }
    }

    /// Resample `slice` into the zoomed frame; pixels with no source are `fill`.
    pub fn apply_to_slice(&self, slice: &NormalizedSlice, fill: f32) -> Result<NormalizedSlice> {
        if self.is_identity() {
            return Ok(slice.clone());
        }
        let (w, h) = slice.dims();
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.inverse(x as f64, y as f64);
                if in_source(sx, sy, w, h) {
                    values.push(slice.sample_bilinear(sx, sy));
                } else {
                    values.push(fill);
                }
            }
        }
        NormalizedSlice::from_clamped(w, h, values, slice.spacing().divided_by(self.scale))
    }

    /// Nearest-neighbour version of [`Self::apply_to_slice`] for masks.
    pub fn apply_to_mask(&self, mask: &BinaryMask, fill: bool) -> BinaryMask {
        if self.is_identity() {
            return mask.clone();
        }
        let (w, h) = mask.dims();
        BinaryMask::from_fn(w, h, |x, y| {
            let (sx, sy) = self.inverse(x as f64, y as f64);
            nearest(sx, sy, w, h).map_or(fill, |(ix, iy)| mask.get(ix, iy))
        })
    }

    /// Map a mask from the zoomed frame back to the original frame.
    pub fn invert_mask(&self, mask: &BinaryMask, fill: bool) -> BinaryMask {
        if self.is_identity() {
            return mask.clone();
        }
        let (w, h) = mask.dims();
        BinaryMask::from_fn(w, h, |x, y| {
            let (zx, zy) = self.forward(x as f64, y as f64);
            nearest(zx, zy, w, h).map_or(fill, |(ix, iy)| mask.get(ix, iy))
        })
    }
}

fn in_source(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= -0.5 && x < w as f64 - 0.5 && y >= -0.5 && y < h as f64 - 0.5
}

fn nearest(x: f64, y: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    if !in_source(x, y, w, h) {
        return None;
    }
    let ix = ((x + 0.5).floor() as usize).min(w - 1);
    let iy = ((y + 0.5).floor() as usize).min(h - 1);
    Some((ix, iy))
}

pub fn image_center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) * 0.5, (height as f64 - 1.0) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoomOutResult {
    pub slice: NormalizedSlice,
    pub scale: f64,
    pub scaled_bbox: BoundingBox,
    pub transform: ZoomTransform,
}

/// Shrink the image so that `bbox` fits inside the borders with `margin`.
///
/// The scale is `min(1, (W - 2m) / bw, (H - 2m) / bh)`. When the box has to
/// shrink it is re-centered in the image; otherwise it is moved by the
/// smallest whole-pixel shift that satisfies the margin (none if it already
/// does), which leaves pixel values untouched.
pub fn zoom_out(slice: &NormalizedSlice, bbox: &BoundingBox, margin: usize, fill: f32) -> Result<ZoomOutResult> {
    let bbox = BoundingBox::new(bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max)?;
    let (w, h) = slice.dims();
    let m = margin as f64;
    let avail_w = w as f64 - 2.0 * m;
    let avail_h = h as f64 - 2.0 * m;
    if avail_w <= 0.0 || avail_h <= 0.0 {
        return Err(Error::Geometry(format!("margin {margin} leaves no room in a {w}x{h} image")));
    }
    let scale = (avail_w / bbox.width()).min(avail_h / bbox.height()).min(1.0);
    let center = image_center(w, h);
    let transform = if scale < 1.0 {
        let unshifted = ZoomTransform {
            scale,
            center,
            shift: (0.0, 0.0),
        }
        .apply_to_bbox(&bbox);
        let (bx, by) = unshifted.center();
        let target = (w as f64 * 0.5, h as f64 * 0.5);
        ZoomTransform {
            scale,
            center,
            shift: (target.0 - bx, target.1 - by),
        }
    } else {
        let dx = min_shift(bbox.x_min, bbox.x_max, m, w as f64 - m);
        let dy = min_shift(bbox.y_min, bbox.y_max, m, h as f64 - m);
        ZoomTransform {
            scale: 1.0,
            center,
            shift: (dx, dy),
        }
    };
    let scaled_bbox = transform.apply_to_bbox(&bbox);
    Ok(ZoomOutResult {
        slice: transform.apply_to_slice(slice, fill)?,
        scale,
        scaled_bbox,
        transform,
    })
}

/// Smallest whole-pixel shift moving `[lo, hi)` inside `[min, max]`; falls
/// back to an exact sub-pixel shift when rounding would overshoot the other
/// side (only possible for non-integer box edges).
fn min_shift(lo: f64, hi: f64, min: f64, max: f64) -> f64 {
    let whole = if lo < min {
        (min - lo).ceil()
    } else if hi > max {
        -(hi - max).ceil()
    } else {
        return 0.0;
    };
    if lo + whole >= min && hi + whole <= max {
        whole
    } else if lo < min {
        min - lo
    } else {
        max - hi
    }
}

/// Overwrite masked pixels with `fill`.
pub fn apply_mask_fill(slice: &NormalizedSlice, mask: &BinaryMask, fill: f32) -> Result<NormalizedSlice> {
    ensure_same_dims(slice.dims(), mask.dims())?;
    let values = slice.values().iter().zip(mask.bits()).map(|(&v, &m)| if m { fill } else { v }).collect();
    NormalizedSlice::from_clamped(slice.width(), slice.height(), values, slice.spacing())
}
