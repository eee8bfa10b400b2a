//! Body mask identification, bounding boxes, and the learned bounding-box
//! regressor that estimates the untruncated body extent from a DFOV crop.

mod regressor;

use std::collections::VecDeque;

pub use crate::imagecore::BoundingBox;
pub use regressor::{
    predict_bbox, predict_bbox_raw, regressor_loss_and_grads, train_bbox_regressor, BboxHyperParams, BboxRegressorParams, BboxTrainingSample,
    CropGeometry, RegressorHeader, TrainedRegressor,
};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, NormalizedSlice};

/// Default body threshold in normalized units (about -140 HU).
pub const BODY_THRESHOLD: f32 = -0.9;

const NEIGHBORS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
    })
}

/// 4-connected component labels; returns `(labels, sizes)` with label 0 for
/// background and components numbered from 1 in raster order of first pixel.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            for (nx, ny) in neighbors(i % w, i / w, w, h) {
                let j = ny * w + nx;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// False pixels reachable from the image border through 4-connected false pixels.
pub fn border_reachable_background(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut reached = BinaryMask::filled(w, h, false);
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, reached: &mut BinaryMask, queue: &mut VecDeque<(usize, usize)>| {
        if !mask.get(x, y) && !reached.get(x, y) {
            reached.set(x, y, true);
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut reached, &mut queue);
        seed(x, h - 1, &mut reached, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut reached, &mut queue);
        seed(w - 1, y, &mut reached, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in neighbors(x, y, w, h) {
            if !mask.get(nx, ny) && !reached.get(nx, ny) {
                reached.set(nx, ny, true);
                queue.push_back((nx, ny));
            }
        }
    }
    reached
}

/// Fill every background region not connected to the border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    border_reachable_background(mask).not()
}

/// Keep only the largest 4-connected component (lowest label on ties).
pub fn largest_component(mask: &BinaryMask) -> Option<BinaryMask> {
    let (labels, sizes) = label_components(mask);
    let (best, _) = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold((0usize, 0usize), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    if best == 0 {
        return None;
    }
    let (w, h) = mask.dims();
    Some(BinaryMask::from_fn(w, h, |x, y| labels[y * w + x] == best as u32))
}

/// Body region: hole-filled largest 4-connected component above `threshold`.
pub fn identify_body_mask(slice: &NormalizedSlice, threshold: f32) -> Result<BinaryMask> {
    let (w, h) = slice.dims();
    let above = BinaryMask::from_fn(w, h, |x, y| slice.get(x, y) > threshold);
    let body = largest_component(&above).ok_or(Error::EmptyBody)?;
    Ok(fill_holes(&body))
}

/// Tightest half-open box around the true pixels.
pub fn bbox_from_mask(mask: &BinaryMask) -> Result<BoundingBox> {
    let (w, h) = mask.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::EmptyBody);
    }
    BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::{window_and_normalize, PixelSpacing, SOFT_TISSUE_WINDOW};
    use crate::phantom::{rasterize_phantom, sample_phantom_spec, LevelClass};
    use proptest::prelude::*;

    fn sp() -> PixelSpacing {
        PixelSpacing::isotropic(6.0)
    }

    #[test]
    fn zero_noise_phantom_body_matches_labels() {
        for seed in 0..20u64 {
            let mut spec = sample_phantom_spec(LevelClass::for_index(seed as usize), seed);
            spec.noise_hu = 0.0;
            let (hu, labels) = rasterize_phantom(&spec, 64, 64, sp()).unwrap();
            let n = window_and_normalize(&hu, SOFT_TISSUE_WINDOW.0, SOFT_TISSUE_WINDOW.1).unwrap();
            let mask = identify_body_mask(&n, BODY_THRESHOLD).unwrap();
            assert_eq!(mask, labels.body_mask(), "seed {seed}");
        }
    }

    #[test]
    fn constant_air_is_empty() {
        let s = NormalizedSlice::constant(16, 16, -1.0, sp()).unwrap();
        assert!(matches!(identify_body_mask(&s, BODY_THRESHOLD), Err(Error::EmptyBody)));
    }

    #[test]
    fn keeps_largest_blob() {
        let mut vals = vec![-1.0f32; 32 * 32];
        for y in 2..12 {
            for x in 2..12 {
                vals[y * 32 + x] = 0.0; // 100 px
            }
        }
        for x in 20..25 {
            vals[25 * 32 + x] = 0.0; // 5 px
        }
        let s = NormalizedSlice::new(32, 32, vals, sp()).unwrap();
        let m = identify_body_mask(&s, BODY_THRESHOLD).unwrap();
        assert_eq!(m.count(), 100);
        assert!(!m.get(22, 25));
    }

    #[test]
    fn bbox_from_empty_mask_fails() {
        assert!(matches!(bbox_from_mask(&BinaryMask::filled(4, 4, false)), Err(Error::EmptyBody)));
    }

    fn blob_strategy() -> impl Strategy<Value = Vec<bool>> {
        proptest::collection::vec(proptest::bool::weighted(0.45), 20 * 20)
    }

    proptest! {
        #[test]
        fn body_mask_single_component_without_holes(bits in blob_strategy()) {
            prop_assume!(bits.iter().any(|&b| b));
            let vals: Vec<f32> = bits.iter().map(|&b| if b { 0.5 } else { -1.0 }).collect();
            let s = NormalizedSlice::new(20, 20, vals, sp()).unwrap();
            let m = identify_body_mask(&s, BODY_THRESHOLD).unwrap();
            let (_, sizes) = label_components(&m);
            prop_assert_eq!(sizes.len(), 2);
            let outside = border_reachable_background(&m);
            prop_assert_eq!(outside.count() + m.count(), 400);
        }

        #[test]
        fn bbox_is_tight(bits in blob_strategy()) {
            let m = BinaryMask::new(20, 20, bits).unwrap();
            prop_assume!(!m.is_empty());
            let b = bbox_from_mask(&m).unwrap();
            for y in 0..20 {
                for x in 0..20 {
                    if m.get(x, y) {
                        prop_assert!(b.contains_pixel(x, y));
                    }
                }
            }
            let (x0, y0, x1, y1) = (b.x_min as usize, b.y_min as usize, b.x_max as usize, b.y_max as usize);
            prop_assert!((y0..y1).any(|y| m.get(x0, y)));
            prop_assert!((y0..y1).any(|y| m.get(x1 - 1, y)));
            prop_assert!((x0..x1).any(|x| m.get(x, y0)));
            prop_assert!((x0..x1).any(|x| m.get(x, y1 - 1)));
        }
    }
}
