//! Fast invariant suite run by `fovkit selftest`: mask geometry, schedule,
//! selection rule and metric oracles. Failures are reported, not thrown.

use rand::Rng as _;

use crate::bodycomp::{analyze, select_representative, BodyCompMeasurement, Tissue, TissueThresholds};
use crate::bodydetect::{bbox_from_mask, identify_body_mask, BODY_THRESHOLD};
use crate::diffusion::{q_sample, DiffusionSchedule, ScheduleConfig};
use crate::evalharness::{dice, rmse, summarize, wilcoxon_signed_rank};
use crate::fovsim::{
    build_small_mask, rasterize_dfov_square, rasterize_fov_mask, rasterize_rfov_circle, sample_fov_spec, simulate_sample, truncate, SimulationConfig,
    FOV_SENTINEL,
};
use crate::imagecore::{
    denormalize_value, window_and_normalize, zoom_out, BinaryMask, BoundingBox, HuSlice, NormalizedSlice, PixelSpacing, AIR, SOFT_TISSUE_WINDOW,
};
use crate::phantom::{rasterize_phantom, sample_phantom_spec, LevelClass, TissueLabel};
use crate::rng::rng_from_seed;

type Outcome = std::result::Result<(), String>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Faults that can be injected to prove the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelftestOptions {
    /// Replace the schedule under test with one whose `alpha_bar` rises.
    pub corrupt_schedule: bool,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

/// Desk schedule with `alpha_bar` made non-monotone half way.
pub fn corrupted_schedule() -> DiffusionSchedule {
    let good = ScheduleConfig::default().build().expect("default schedule is valid");
    let mut ab = good.alpha_bars().to_vec();
    let mid = ab.len() / 2;
    ab[mid] = ab[mid - 1] * 1.5;
    DiffusionSchedule::from_raw_parts(good.betas().to_vec(), ab)
}

fn phantom(seed: u64, noise: f64) -> NormalizedSlice {
    let mut spec = sample_phantom_spec(LevelClass::for_index(seed as usize), seed);
    spec.noise_hu = noise;
    let (hu, _) = rasterize_phantom(&spec, 64, 64, PixelSpacing::isotropic(6.0)).expect("phantom");
    window_and_normalize(&hu, SOFT_TISSUE_WINDOW.0, SOFT_TISSUE_WINDOW.1).expect("window")
}

fn check_fov_mask_composition() -> Outcome {
    for seed in 0..20 {
        let spec = sample_fov_spec(64, seed, (0.5, 0.7), (0.65, 0.9)).map_err(err)?;
        let both = rasterize_rfov_circle(&spec).and(&rasterize_dfov_square(&spec)).map_err(err)?;
        ensure(rasterize_fov_mask(&spec) == both, || format!("seed {seed}: FOV != circle ∧ square"))?;
        ensure(rasterize_fov_mask(&spec).get(32, 32) || spec.dx != 0.0 || spec.dy != 0.0, || {
            format!("seed {seed}: center outside a centered FOV")
        })?;
    }
    Ok(())
}

fn check_truncate() -> Outcome {
    let s = phantom(1, 10.0);
    let spec = sample_fov_spec(64, 3, (0.5, 0.7), (0.65, 0.9)).map_err(err)?;
    let fov = rasterize_fov_mask(&spec);
    let t = truncate(&s, &fov, FOV_SENTINEL).map_err(err)?;
    for (i, (&a, &b)) in s.values().iter().zip(t.values()).enumerate() {
        let want = if fov.bits()[i] { a } else { FOV_SENTINEL };
        ensure(b.to_bits() == want.to_bits(), || format!("pixel {i}: {b} != {want}"))?;
    }
    ensure(truncate(&t, &fov, FOV_SENTINEL).map_err(err)? == t, || {
        "truncate is not idempotent".into()
    })
}

fn check_small_mask() -> Outcome {
    let cfg = SimulationConfig::default();
    for seed in 0..10 {
        let s = simulate_sample("x", LevelClass::for_index(seed as usize), &phantom(seed, 10.0), seed, &cfg).map_err(err)?;
        let known = s
            .zoom
            .apply_to_mask(&identify_body_mask(&s.source_truncated, BODY_THRESHOLD).map_err(err)?, false);
        ensure(s.small_mask.and(&known).map_err(err)?.is_empty(), || {
            format!("seed {seed}: small mask overlaps known body")
        })?;
        let bbox = s.gt_bbox_in_model_frame().rasterize(64, 64);
        ensure(s.small_mask.and_not(&bbox).map_err(err)?.is_empty(), || {
            format!("seed {seed}: small mask leaves the box")
        })?;
        ensure(s.small_mask.count() < s.fov_mask.not().count(), || {
            format!("seed {seed}: small mask not smaller than the FOV mask")
        })?;
    }
    let b = BoundingBox::new(10.0, 10.0, 20.0, 20.0).map_err(err)?;
    let full = BinaryMask::filled(32, 32, true);
    ensure(build_small_mask(&b, &full, &full).map_err(err)?.is_empty(), || {
        "body filling the box must give an empty mask".into()
    })?;
    let none = BinaryMask::filled(32, 32, false);
    ensure(build_small_mask(&b, &none, &full).map_err(err)?.count() == 100, || {
        "empty body must give the full box".into()
    })
}

fn check_zoom_out() -> Outcome {
    let s = phantom(2, 0.0);
    for (b, margin) in [
        ((2.0, 3.0, 62.0, 60.0), 4usize),
        ((10.0, 10.0, 40.0, 40.0), 4),
        ((0.0, 0.0, 64.0, 64.0), 6),
    ] {
        let bbox = BoundingBox::new(b.0, b.1, b.2, b.3).map_err(err)?;
        let z = zoom_out(&s, &bbox, margin, AIR).map_err(err)?;
        ensure(z.scale <= 1.0 && z.scaled_bbox.fits_within(64, 64, margin as f64 - 1e-9), || {
            format!("box {b:?} does not fit after zoom-out: {:?}", z.scaled_bbox)
        })?;
    }
    let inside = BoundingBox::new(10.0, 10.0, 40.0, 40.0).map_err(err)?;
    ensure(zoom_out(&s, &inside, 4, AIR).map_err(err)?.slice == s, || {
        "a box already inside the margin must be a no-op".into()
    })
}

fn check_schedule(schedule: &DiffusionSchedule) -> Outcome {
    schedule.check_invariants()
}

fn check_alpha_bar_telescoping(schedule: &DiffusionSchedule) -> Outcome {
    let mut acc = 1.0f64;
    for t in 1..=schedule.steps() {
        acc *= 1.0 - schedule.beta(t);
        let ab = schedule.alpha_bar(t);
        ensure((ab - acc).abs() <= 1e-6 * acc, || format!("alpha_bar_{t} = {ab}, product = {acc}"))?;
    }
    Ok(())
}

fn check_q_sample(schedule: &DiffusionSchedule) -> Outcome {
    let x0 = phantom(3, 10.0);
    let mut rng = rng_from_seed(9);
    let eps: Vec<f32> = (0..64 * 64).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let mask = BinaryMask::from_fn(64, 64, |x, y| (x + y) % 3 == 0);
    let t = schedule.steps() / 3 + 1;
    let out = q_sample(&x0, &mask, t, &eps, schedule).map_err(err)?;
    let ab = schedule.alpha_bar(t);
    for i in 0..out.len() {
        let x = x0.values()[i] as f64;
        let want = if mask.bits()[i] {
            ab.sqrt() * x + (1.0 - ab).sqrt() * eps[i] as f64
        } else {
            x
        };
        ensure((out[i] as f64 - want).abs() <= 1e-6 * want.abs().max(1.0), || {
            format!("pixel {i}: {} vs {want}", out[i])
        })?;
    }
    Ok(())
}

fn check_selection_example() -> Outcome {
    let m = |a, b| BodyCompMeasurement { muscle_area: a, sat_area: b };
    let c = [m(50.0, 100.0), m(52.0, 104.0), m(48.0, 98.0), m(51.0, 101.0), m(49.0, 103.0)];
    let r = select_representative(&c).map_err(err)?;
    ensure(r.distances == vec![1.0, 5.0, 5.0, 1.0, 3.0] && r.selected_index == 0, || format!("{r:?}"))
}

fn check_selection_oracle() -> Outcome {
    let mut rng = rng_from_seed(17);
    for _ in 0..500 {
        let n = rng.random_range(1..=9);
        let c: Vec<BodyCompMeasurement> = (0..n)
            .map(|_| BodyCompMeasurement {
                muscle_area: rng.random_range(0..6) as f64,
                sat_area: rng.random_range(0..6) as f64,
            })
            .collect();
        let mut mus: Vec<f64> = c.iter().map(|x| x.muscle_area).collect();
        let mut sat: Vec<f64> = c.iter().map(|x| x.sat_area).collect();
        mus.sort_by(f64::total_cmp);
        sat.sort_by(f64::total_cmp);
        let med = |v: &[f64]| if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        let (mm, ms) = (med(&mus), med(&sat));
        let d: Vec<f64> = c.iter().map(|x| (x.muscle_area - mm).abs() + (x.sat_area - ms).abs()).collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let want = d.iter().position(|&x| x == best).unwrap_or(0);
        let got = select_representative(&c).map_err(err)?.selected_index;
        ensure(got == want, || format!("{c:?}: selected {got}, oracle {want}"))?;
    }
    Ok(())
}

fn check_metric_oracles() -> Outcome {
    let r = rmse(&[(3.0, 0.0), (0.0, 4.0)]).map_err(err)?;
    ensure((r - 12.5f64.sqrt()).abs() < 1e-9, || format!("rmse {r}"))?;
    let a = BinaryMask::new(6, 1, vec![true, true, true, true, false, false]).map_err(err)?;
    let b = BinaryMask::new(6, 1, vec![false, false, true, true, true, true]).map_err(err)?;
    let d = dice(&a, &b).map_err(err)?;
    ensure((d - 0.5).abs() < 1e-9, || format!("dice {d}"))?;
    let e = BinaryMask::filled(6, 1, false);
    ensure(dice(&e, &e).map_err(err)? == 1.0, || "dice of two empty masks must be 1".into())?;
    let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(err)?;
    ensure((s.median, s.q1, s.q3) == (3.0, 2.0, 4.0), || format!("{s:?}"))
}

fn check_wilcoxon() -> Outcome {
    let w = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).map_err(err)?;
    ensure(w.statistic == 0.0 && w.p_value == 0.03125, || format!("{w:?}"))?;
    let w = wilcoxon_signed_rank(&[-3.0, -1.0, 1.0, 3.0, 5.0, -5.0]).map_err(err)?;
    ensure(w.p_value >= 0.99, || format!("{w:?}"))?;
    ensure(wilcoxon_signed_rank(&[0.0; 6]).is_err(), || {
        "all-zero differences must be rejected".into()
    })
}

fn check_segmentation() -> Outcome {
    for seed in 0..6u64 {
        let mut spec = sample_phantom_spec(LevelClass::for_index(seed as usize), seed);
        spec.noise_hu = 0.0;
        let (hu, labels) = rasterize_phantom(&spec, 64, 64, PixelSpacing::isotropic(6.0)).map_err(err)?;
        let n = window_and_normalize(&hu, SOFT_TISSUE_WINDOW.0, SOFT_TISSUE_WINDOW.1).map_err(err)?;
        let (map, _) = analyze(&n, BODY_THRESHOLD, &TissueThresholds::default()).map_err(err)?;
        for (t, l) in [(Tissue::Muscle, TissueLabel::Muscle), (Tissue::Sat, TissueLabel::Sat)] {
            let d = dice(&map.mask_of(t), &labels.mask_of(l)).map_err(err)?;
            ensure(d == 1.0, || format!("seed {seed}: {t:?} Dice {d}"))?;
        }
    }
    Ok(())
}

fn check_window_round_trip() -> Outcome {
    let values: Vec<f32> = (-159..240).map(|v| v as f32).collect();
    // 399 values = 21 x 19.
    let s = HuSlice::new(21, 19, values.clone(), PixelSpacing::isotropic(1.0)).map_err(err)?;
    let w = window_and_normalize(&s, SOFT_TISSUE_WINDOW.0, SOFT_TISSUE_WINDOW.1).map_err(err)?;
    for (v, hu) in w.values().iter().zip(&values) {
        let back = denormalize_value(*v, SOFT_TISSUE_WINDOW.0, SOFT_TISSUE_WINDOW.1);
        ensure((back - *hu as f64).abs() < 1e-3, || format!("{hu} HU came back as {back}"))?;
    }
    Ok(())
}

fn check_body_bbox() -> Outcome {
    let mut m = BinaryMask::filled(16, 16, false);
    for y in 3..9 {
        for x in 2..12 {
            m.set(x, y, true);
        }
    }
    let b = bbox_from_mask(&m).map_err(err)?;
    ensure(b.as_array() == [2.0, 3.0, 12.0, 9.0], || format!("{b:?}"))?;
    ensure(bbox_from_mask(&BinaryMask::filled(4, 4, false)).is_err(), || {
        "empty mask must have no box".into()
    })
}

/// Run every check; the schedule checks use the desk schedule unless a
/// fault is injected.
pub fn run_selftest(options: SelftestOptions) -> Vec<CheckResult> {
    let schedule = if options.corrupt_schedule {
        corrupted_schedule()
    } else {
        match ScheduleConfig::default().build() {
            Ok(s) => s,
            Err(e) => {
                return vec![CheckResult {
                    name: "schedule_build",
                    passed: false,
                    detail: e.to_string(),
                }]
            }
        }
    };
    let checks: Vec<(&'static str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("fov_mask_is_circle_and_square", Box::new(check_fov_mask_composition)),
        ("truncate_keeps_fov_pixels", Box::new(check_truncate)),
        ("small_mask_geometry", Box::new(check_small_mask)),
        ("zoom_out_respects_margin", Box::new(check_zoom_out)),
        ("schedule_invariants", Box::new(|| check_schedule(&schedule))),
        ("alpha_bar_telescoping", Box::new(|| check_alpha_bar_telescoping(&schedule))),
        ("q_sample_formula", Box::new(|| check_q_sample(&schedule))),
        ("selection_example", Box::new(check_selection_example)),
        ("selection_matches_brute_force", Box::new(check_selection_oracle)),
        ("rmse_dice_quartile_oracles", Box::new(check_metric_oracles)),
        ("wilcoxon_exact_values", Box::new(check_wilcoxon)),
        ("zero_noise_segmentation", Box::new(check_segmentation)),
        ("window_round_trip", Box::new(check_window_round_trip)),
        ("body_bounding_box", Box::new(check_body_bbox)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(&f)).unwrap_or_else(|_| Err("check panicked".into()));
            CheckResult {
                name,
                passed: outcome.is_ok(),
                detail: outcome.err().unwrap_or_default(),
            }
        })
        .collect()
}
