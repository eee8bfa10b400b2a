//! Evaluation: area RMSE per level class, Dice, difference summaries and
//! the Wilcoxon signed-rank test, for the truncated baseline and the
//! single/multiple-inference recoveries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bodycomp::{
    analyze, candidate_jobs, finish_recovery, prepare_recovery, BodyCompMeasurement, Models, PreparedRecovery, RecoveryConfig, Tissue, TissueMap,
};
use crate::diffusion::sample_jobs;
use crate::error::{Error, Result, StageContext};
use crate::fovsim::TruncationSample;
use crate::imagecore::{ensure_same_dims, BinaryMask, NormalizedSlice, ZoomTransform};
use crate::phantom::LevelClass;
use crate::rng::child_seed;

/// Largest sample size for which the Wilcoxon p-value is exact.
pub const WILCOXON_EXACT_MAX_N: usize = 20;
/// Smallest sample size (after dropping zeros) the test accepts.
pub const WILCOXON_MIN_N: usize = 5;

/// `sqrt(mean((truth - pred)^2))` over `(truth, pred)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("rmse of an empty set".into()));
    }
    let ss: f64 = pairs.iter().map(|(t, p)| (t - p) * (t - p)).sum();
    Ok((ss / pairs.len() as f64).sqrt())
}

/// `2|A∩B| / (|A| + |B|)`, defined as 1 when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub mean: f64,
}

/// Median, quartiles and mean of signed differences.
pub fn summarize(differences: &[f64]) -> Result<SummaryStats> {
    if differences.is_empty() {
        return Err(Error::Config("cannot summarize an empty set".into()));
    }
    let mut v = differences.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    Ok(SummaryStats {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        mean: v.iter().sum::<f64>() / v.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueStats {
    pub muscle: SummaryStats,
    pub sat: SummaryStats,
}

/// Signed differences `truth - prediction` per tissue. Positive values mean
/// the prediction underestimates.
pub fn summarize_differences(records: &[EvalRecord]) -> Result<TissueStats> {
    Ok(TissueStats {
        muscle: summarize(&records.iter().map(|r| r.muscle_difference()).collect::<Vec<_>>())?,
        sat: summarize(&records.iter().map(|r| r.sat_difference()).collect::<Vec<_>>())?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Mid-ranks of `|d|` (1-based), in input order.
fn mid_ranks(abs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped, ties
/// get mid-ranks. For `n <= 20` the p-value is the exact fraction of the
/// `2^n` sign assignments whose `min(W+, W-)` is at most the observed one;
/// above that a tie-corrected normal approximation is used.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite difference".into()));
    }
    let d: Vec<f64> = differences.iter().copied().filter(|&x| x != 0.0).collect();
    if d.is_empty() {
        return Err(Error::DegenerateTest("all differences are zero".into()));
    }
    let n = d.len();
    if n < WILCOXON_MIN_N {
        return Err(Error::DegenerateTest(format!(
            "{n} non-zero differences; at least {WILCOXON_MIN_N} needed"
        )));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = mid_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p, exact) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_p(&ranks, statistic), true)
    } else {
        (normal_p(&abs, n, statistic), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic,
        p_value: p.min(1.0),
        exact,
    })
}

/// Count sign assignments by their doubled `W+` (mid-ranks are multiples of
/// one half, so doubled sums are integers and the counts are exact).
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w2 = (2.0 * statistic).round() as usize;
    let extreme: u64 = counts.iter().enumerate().filter(|&(s, _)| s <= w2 || s >= max - w2).map(|(_, c)| c).sum();
    extreme as f64 / (1u64 << ranks.len()) as f64
}

fn normal_p(abs: &[f64], n: usize, statistic: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (statistic - mean) / var.sqrt();
    let normal = Normal::standard();
    2.0 * normal.cdf(z)
}

/// Prediction methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "truncated")]
    Truncated,
    #[serde(rename = "SI")]
    Si,
    #[serde(rename = "MI")]
    Mi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Truncated, Method::Si, Method::Mi];

    pub fn name(self) -> &'static str {
        match self {
            Method::Truncated => "truncated",
            Method::Si => "SI",
            Method::Mi => "MI",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One (slice, method) row of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub level_class: LevelClass,
    pub method: Method,
    pub muscle_truth: f64,
    pub muscle_pred: f64,
    pub sat_truth: f64,
    pub sat_pred: f64,
    pub dice_muscle: f64,
    pub dice_sat: f64,
}

impl EvalRecord {
    pub fn muscle_difference(&self) -> f64 {
        self.muscle_truth - self.muscle_pred
    }

    pub fn sat_difference(&self) -> f64 {
        self.sat_truth - self.sat_pred
    }

    /// Mean of the muscle and SAT Dice.
    pub fn dice_mean(&self) -> f64 {
        (self.dice_muscle + self.dice_sat) / 2.0
    }
}

/// Ground truth of one slice in its original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub map: TissueMap,
    pub measurement: BodyCompMeasurement,
}

/// Compare a prediction with the truth. `map` must be in the truth frame;
/// `measurement` is taken as given (it may come from another frame).
pub fn score(
    id: &str,
    level_class: LevelClass,
    method: Method,
    truth: &Truth,
    map: &TissueMap,
    measurement: &BodyCompMeasurement,
) -> Result<EvalRecord> {
    Ok(EvalRecord {
        id: id.to_string(),
        level_class,
        method,
        muscle_truth: truth.measurement.muscle_area,
        muscle_pred: measurement.muscle_area,
        sat_truth: truth.measurement.sat_area,
        sat_pred: measurement.sat_area,
        dice_muscle: dice(&truth.map.mask_of(Tissue::Muscle), &map.mask_of(Tissue::Muscle))?,
        dice_sat: dice(&truth.map.mask_of(Tissue::Sat), &map.mask_of(Tissue::Sat))?,
    })
}

/// Bring a tissue map from the zoomed model frame back to the original frame
/// (nearest neighbour; pixels with no source are other).
pub fn map_to_source(map: &TissueMap, transform: &ZoomTransform) -> TissueMap {
    let muscle = transform.invert_mask(&map.mask_of(Tissue::Muscle), false);
    let sat = transform.invert_mask(&map.mask_of(Tissue::Sat), false);
    let labels = muscle
        .bits()
        .iter()
        .zip(sat.bits())
        .map(|(&m, &s)| {
            if m {
                Tissue::Muscle
            } else if s {
                Tissue::Sat
            } else {
                Tissue::Other
            }
        })
        .collect();
    let (w, h) = map.dims();
    TissueMap::from_labels(w, h, labels).expect("dims match")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Candidates per slice for multiple inference.
    pub n: usize,
    pub seed: u64,
    pub recovery: RecoveryConfig,
}

fn truth_of(sample: &TruncationSample, config: &RecoveryConfig) -> Result<Truth> {
    let (map, measurement) = analyze(&sample.source_untruncated, config.body_threshold, &config.thresholds)?;
    Ok(Truth { map, measurement })
}

/// Records for a prediction given directly as an original-frame slice; used
/// for oracle checks of the harness itself.
pub fn evaluate_slices(samples: &[TruncationSample], preds: &[NormalizedSlice], method: Method, config: &RecoveryConfig) -> Result<Vec<EvalRecord>> {
    if samples.len() != preds.len() {
        return Err(Error::Config(format!("{} samples but {} predictions", samples.len(), preds.len())));
    }
    samples
        .par_iter()
        .zip(preds)
        .map(|(s, p)| {
            let truth = truth_of(s, config)?;
            let (map, m) = analyze(p, config.body_threshold, &config.thresholds)?;
            score(&s.id, s.level_class, method, &truth, &map, &m)
        })
        .collect()
}

/// Run the truncated baseline, single inference (candidate 0) and multiple
/// inference (median selection over `n`) on every sample. Slice `i` uses
/// seed `child_seed(seed, i)`. Records are ordered by sample, then method.
pub fn evaluate_samples(samples: &[TruncationSample], models: &Models, config: &EvalConfig) -> Result<Vec<EvalRecord>> {
    if config.n == 0 {
        return Err(Error::Config("evaluation needs n >= 1".into()));
    }
    let rc = &config.recovery;
    let prepared: Vec<PreparedRecovery> = samples
        .par_iter()
        .map(|s| prepare_recovery(models, &s.source_truncated, &s.crop_geometry, rc).stage(&s.id))
        .collect::<Result<_>>()?;
    let per_slice: Vec<_> = prepared
        .iter()
        .enumerate()
        .map(|(i, p)| candidate_jobs(p, config.n, child_seed(config.seed, i as u64)))
        .collect();
    let jobs: Vec<_> = per_slice.iter().flatten().copied().collect();
    log::info!("sampling {} candidates for {} slices", jobs.len(), samples.len());
    let mut sampled = sample_jobs(&models.denoiser, &models.schedule, &jobs)?.into_iter();
    let candidates: Vec<Vec<NormalizedSlice>> = per_slice
        .iter()
        .zip(&prepared)
        .map(|(j, p)| {
            if j.is_empty() {
                vec![p.zoomed.clone(); config.n]
            } else {
                sampled.by_ref().take(j.len()).collect()
            }
        })
        .collect();
    let rows: Vec<Vec<EvalRecord>> = samples
        .par_iter()
        .zip(prepared)
        .zip(candidates)
        .map(|((s, p), c)| {
            let truth = truth_of(s, rc)?;
            let (tmap, tm) = analyze(&s.source_truncated, rc.body_threshold, &rc.thresholds)?;
            let transform = p.transform;
            let rec = finish_recovery(p, c, rc).stage(&s.id)?;
            let recovered = |k: usize| -> Result<(TissueMap, BodyCompMeasurement)> {
                let (zmap, _) = analyze(&rec.candidates[k], rc.body_threshold, &rc.thresholds)?;
                Ok((map_to_source(&zmap, &transform), rec.measurements[k]))
            };
            let (si_map, si_m) = recovered(0)?;
            let (mi_map, mi_m) = recovered(rec.selection.selected_index)?;
            Ok(vec![
                score(&s.id, s.level_class, Method::Truncated, &truth, &tmap, &tm)?,
                score(&s.id, s.level_class, Method::Si, &truth, &si_map, &si_m)?,
                score(&s.id, s.level_class, Method::Mi, &truth, &mi_map, &mi_m)?,
            ])
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Wilcoxon outcome, or why the test could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WilcoxonEntry {
    Ok(WilcoxonResult),
    Skipped { skipped: String },
}

impl WilcoxonEntry {
    fn of(differences: &[f64]) -> Self {
        match wilcoxon_signed_rank(differences) {
            Ok(r) => WilcoxonEntry::Ok(r),
            Err(e) => WilcoxonEntry::Skipped { skipped: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueWilcoxon {
    pub muscle: WilcoxonEntry,
    pub sat: WilcoxonEntry,
}

/// Aggregates of one method on one level class (or on all slices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: usize,
    pub rmse_muscle: f64,
    pub rmse_sat: f64,
    pub dice_muscle_mean: f64,
    pub dice_sat_mean: f64,
    pub stats: TissueStats,
    pub wilcoxon: TissueWilcoxon,
}

/// `method → level → aggregates`; the level key `all` pools every class.
pub type Report = BTreeMap<String, BTreeMap<String, LevelReport>>;

pub const ALL_LEVELS: &str = "all";

fn level_report(records: &[&EvalRecord]) -> Result<LevelReport> {
    let owned: Vec<EvalRecord> = records.iter().map(|r| (*r).clone()).collect();
    let mean = |f: fn(&EvalRecord) -> f64| owned.iter().map(f).sum::<f64>() / owned.len() as f64;
    let md: Vec<f64> = owned.iter().map(|r| r.muscle_difference()).collect();
    let sd: Vec<f64> = owned.iter().map(|r| r.sat_difference()).collect();
    Ok(LevelReport {
        n: owned.len(),
        rmse_muscle: rmse(&owned.iter().map(|r| (r.muscle_truth, r.muscle_pred)).collect::<Vec<_>>())?,
        rmse_sat: rmse(&owned.iter().map(|r| (r.sat_truth, r.sat_pred)).collect::<Vec<_>>())?,
        dice_muscle_mean: mean(|r| r.dice_muscle),
        dice_sat_mean: mean(|r| r.dice_sat),
        stats: summarize_differences(&owned)?,
        wilcoxon: TissueWilcoxon {
            muscle: WilcoxonEntry::of(&md),
            sat: WilcoxonEntry::of(&sd),
        },
    })
}

/// Aggregate records per method and level class.
pub fn aggregate(records: &[EvalRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::Config("no evaluation records".into()));
    }
    let mut report = Report::new();
    for method in Method::ALL {
        let of_method: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
        if of_method.is_empty() {
            continue;
        }
        let mut levels = BTreeMap::new();
        for level in LevelClass::ALL {
            let rows: Vec<&EvalRecord> = of_method.iter().copied().filter(|r| r.level_class == level).collect();
            if !rows.is_empty() {
                levels.insert(level.name().to_string(), level_report(&rows)?);
            }
        }
        levels.insert(ALL_LEVELS.to_string(), level_report(&of_method)?);
        report.insert(method.name().to_string(), levels);
    }
    Ok(report)
}

pub fn report_csv_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.csv")
}

pub fn report_json_path(out_dir: &Path) -> PathBuf {
    out_dir.join("report.json")
}

/// Write `report.csv` (one row per slice and method) and `report.json`.
pub fn write_report(records: &[EvalRecord], out_dir: &Path) -> Result<Report> {
    let report = aggregate(records)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = report_csv_path(out_dir);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::format(&csv_path, e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::format(&csv_path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = report_json_path(out_dir);
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::format(&json_path, e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path, e.to_string()))).collect()
}

/// Load a dataset manifest and both models, evaluate and write the report.
pub fn evaluate(manifest: &Path, models: &Models, config: &EvalConfig, out_dir: &Path) -> Result<Report> {
    let samples = crate::fovsim::load_dataset(manifest)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("{} holds no samples", manifest.display())));
    }
    let records = evaluate_samples(&samples, models, config)?;
    write_report(&records, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> BinaryMask {
        BinaryMask::new(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
        assert!((rmse(&[(3.0, 0.0), (0.0, 4.0)]).unwrap() - 12.5f64.sqrt()).abs() < 1e-9);
        assert!((rmse(&[(0.0, 5.0)]).unwrap() - 5.0).abs() < 1e-9);
        assert!(matches!(rmse(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice(&mask(&[1, 1, 0]), &mask(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[1, 1, 0, 0]), &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let a = mask(&[1, 1, 1, 1, 0, 0]);
        let b = mask(&[0, 0, 1, 1, 1, 1]);
        assert!((dice(&a, &b).unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert!(matches!(dice(&mask(&[0, 0]), &mask(&[0])), Err(Error::Shape { .. })));
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[0.0; 4]).unwrap();
        assert_eq!((s.median, s.iqr), (0.0, 0.0));
        let s = summarize(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3, s.iqr, s.mean), (3.0, 2.0, 4.0, 2.0, 3.0));
        assert!(summarize(&[]).is_err());
        let r = EvalRecord {
            id: "a".into(),
            level_class: LevelClass::L5,
            method: Method::Mi,
            muscle_truth: 10.0,
            muscle_pred: 12.0,
            sat_truth: 5.0,
            sat_pred: 4.0,
            dice_muscle: 1.0,
            dice_sat: 1.0,
        };
        // Overestimation shows up as a negative difference.
        assert_eq!(r.muscle_difference(), -2.0);
        assert_eq!(r.sat_difference(), 1.0);
    }

    /// Brute force over all `2^n` sign assignments.
    fn enumerate_p(d: &[f64]) -> f64 {
        let d: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
        let ranks = mid_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let total: f64 = ranks.iter().sum();
        let wp: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
        let obs = wp.min(total - wp);
        let n = d.len();
        let mut hits = 0u64;
        for bits in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w.min(total - w) <= obs + 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[-3.0, -1.0, 1.0, 3.0, 5.0, -5.0]).unwrap();
        assert_eq!(r.w_plus, r.w_minus);
        assert!(r.p_value >= 0.99);
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 2.0 / 64.0);
        assert!(matches!(wilcoxon_signed_rank(&[1.0, 2.0, 0.0, 3.0, 4.0]), Err(Error::DegenerateTest(_))));
        assert!(matches!(wilcoxon_signed_rank(&[0.0; 7]), Err(Error::DegenerateTest(_))));
    }

    #[test]
    fn wilcoxon_normal_branch() {
        let d: Vec<f64> = (1..=30).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
        // Reference value from the standard normal approximation without
        // continuity correction: W- = 165, mean 232.5, var 2363.75.
        let z: f64 = (165.0 - 232.5) / 2363.75f64.sqrt();
        assert!((r.p_value - 2.0 * Normal::standard().cdf(z)).abs() < 1e-12);
        assert_eq!(r.statistic, 165.0);
    }

    proptest! {
        #[test]
        fn wilcoxon_exact_matches_enumeration(d in proptest::collection::vec(-4i32..=4, 5..=12)) {
            let d: Vec<f64> = d.into_iter().map(f64::from).collect();
            match wilcoxon_signed_rank(&d) {
                Ok(r) => prop_assert_eq!(r.p_value, enumerate_p(&d)),
                Err(_) => prop_assert!(d.iter().filter(|&&x| x != 0.0).count() < WILCOXON_MIN_N),
            }
        }

        #[test]
        fn rmse_bounds_mean_error(pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..40)) {
            let r = rmse(&pairs).unwrap();
            let me = pairs.iter().map(|(t, p)| t - p).sum::<f64>() / pairs.len() as f64;
            prop_assert!(r + 1e-9 >= me.abs());
        }

        #[test]
        fn dice_symmetric(a in proptest::collection::vec(any::<bool>(), 16), b in proptest::collection::vec(any::<bool>(), 16)) {
            let a = BinaryMask::new(4, 4, a).unwrap();
            let b = BinaryMask::new(4, 4, b).unwrap();
            let d = dice(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn quartiles_ordered(v in proptest::collection::vec(-50.0f64..50.0, 1..30)) {
            let s = summarize(&v).unwrap();
            prop_assert!(s.q1 <= s.median && s.median <= s.q3);
        }
    }
}
