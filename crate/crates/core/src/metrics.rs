//! Saliency evaluation: precision-recall curves over 256 thresholds,
//! maximum F-measure, mean absolute error and the structure measure.
//!
//! Maps are single-channel `[1, H, W]` tensors with values in `[0, 1]`;
//! ground truth is binary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const THRESHOLDS: usize = 256;
/// Weight of precision in the F-measure.
pub const BETA_SQUARED: f64 = 0.3;
/// Balance between the object and region terms of the structure measure.
pub const S_GAMMA: f64 = 0.5;
/// Regularizer used throughout the structure measure.
const S_EPS: f64 = f64::EPSILON;

/// Threshold `k` is `k / 255`; a pixel is positive when `p >= k / 255`.
pub fn threshold(k: usize) -> f64 {
    k as f64 / 255.0
}

/// Highest threshold index `k` with `p >= k / 255`, or `None` when `p < 0`.
fn level_of(p: f64) -> Option<usize> {
    if p.is_nan() || p < 0.0 {
        return None;
    }
    let mut k = ((p * 255.0).floor().max(0.0) as usize).min(THRESHOLDS - 1);
    while k + 1 < THRESHOLDS && p >= threshold(k + 1) {
        k += 1;
    }
    while k > 0 && p < threshold(k) {
        k -= 1;
    }
    if p >= threshold(k) {
        Some(k)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Images that entered the averages.
    pub images: usize,
    /// Images skipped because their ground truth is empty.
    pub empty_gt_skipped: usize,
}

fn check_pair(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("prediction vs ground truth", gt.shape(), pred.shape()));
    }
    Ok(())
}

/// Per-threshold `(true positives, predicted positives)` for one image.
fn threshold_counts(pred: &Tensor, gt: &Tensor) -> ([u64; THRESHOLDS], [u64; THRESHOLDS]) {
    let mut tp_hist = [0u64; THRESHOLDS];
    let mut pp_hist = [0u64; THRESHOLDS];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if let Some(k) = level_of(p) {
            pp_hist[k] += 1;
            if g > 0.5 {
                tp_hist[k] += 1;
            }
        }
    }
    // a pixel at level k is positive for every threshold <= k
    for k in (0..THRESHOLDS - 1).rev() {
        tp_hist[k] += tp_hist[k + 1];
        pp_hist[k] += pp_hist[k + 1];
    }
    (tp_hist, pp_hist)
}

/// Dataset-averaged precision and recall at each threshold. Per image,
/// precision is 1 when nothing is predicted positive; images with an empty
/// ground truth are excluded from the averages and counted separately.
pub fn pr_curve(preds: &[Tensor], gts: &[Tensor]) -> Result<PrCurve> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset("pr_curve needs at least one image"));
    }
    if preds.len() != gts.len() {
        return Err(Error::shape("pr_curve image count", &[gts.len()], &[preds.len()]));
    }
    let mut precision = vec![0.0; THRESHOLDS];
    let mut recall = vec![0.0; THRESHOLDS];
    let mut images = 0;
    let mut skipped = 0;
    for (pred, gt) in preds.iter().zip(gts) {
        check_pair(pred, gt)?;
        let positives = gt.data().iter().filter(|&&g| g > 0.5).count() as u64;
        if positives == 0 {
            skipped += 1;
            continue;
        }
        images += 1;
        let (tp, pp) = threshold_counts(pred, gt);
        for k in 0..THRESHOLDS {
            precision[k] += if pp[k] == 0 { 1.0 } else { tp[k] as f64 / pp[k] as f64 };
            recall[k] += tp[k] as f64 / positives as f64;
        }
    }
    if images == 0 {
        return Err(Error::EmptyDataset("every ground-truth mask is empty"));
    }
    for k in 0..THRESHOLDS {
        precision[k] /= images as f64;
        recall[k] /= images as f64;
    }
    Ok(PrCurve {
        thresholds: (0..THRESHOLDS).map(threshold).collect(),
        precision,
        recall,
        images,
        empty_gt_skipped: skipped,
    })
}

/// `(1 + b2) P R / (b2 P + R)`, 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta_squared: f64) -> f64 {
    let denom = beta_squared * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta_squared) * precision * recall / denom
    }
}

pub fn max_f(curve: &PrCurve, beta_squared: f64) -> f64 {
    curve
        .precision
        .iter()
        .zip(&curve.recall)
        .map(|(&p, &r)| f_measure(p, r, beta_squared))
        .fold(0.0, f64::max)
}

pub fn mae(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).abs()).sum();
    Ok(sum / pred.numel() as f64)
}

/// Structure measure and its object / region components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub s: f64,
    pub object: f64,
    pub region: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (0 for fewer than two values).
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// `2x / (x^2 + 1 + sigma + eps)` over the pixels of one class.
fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_dev(values) + S_EPS)
}

fn s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g > 0.5).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g <= 0.5).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / gt.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Structural similarity of one region from means, variances and covariance.
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let (x, y) = (mean(pred), mean(gt));
    let denom = n - 1.0 + S_EPS;
    let sx2 = pred.iter().map(|p| (p - x) * (p - x)).sum::<f64>() / denom;
    let sy2 = gt.iter().map(|g| (g - y) * (g - y)).sum::<f64>() / denom;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    // |alpha| <= beta, so beta > 0 whenever alpha != 0
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    // centroid of the foreground, 1-based and rounded; splits at row `cy`
    // and column `cx` (the top/left parts hold cy rows and cx columns)
    let total: f64 = gt.iter().filter(|&&g| g > 0.5).count() as f64;
    let (cx, cy) = if total == 0.0 {
        ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize)
    } else {
        let (mut sx, mut sy) = (0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                if gt[r * w + c] > 0.5 {
                    sx += (c + 1) as f64;
                    sy += (r + 1) as f64;
                }
            }
        }
        ((sx / total).round() as usize, (sy / total).round() as usize)
    };
    let area = (h * w) as f64;
    let quadrants = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let mut score = 0.0;
    for (r0, r1, c0, c1) in quadrants {
        let n = (r1 - r0) * (c1 - c0);
        if n == 0 {
            continue;
        }
        let mut p = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for r in r0..r1 {
            p.extend_from_slice(&pred[r * w + c0..r * w + c1]);
            g.extend_from_slice(&gt[r * w + c0..r * w + c1]);
        }
        score += n as f64 / area * region_ssim(&p, &g);
    }
    score
}

/// Structure measure `S = 0.5 * S_o + 0.5 * S_r`, clamped to `[0, 1]`.
/// An all-background ground truth scores `1 - mean(pred)`; an
/// all-foreground one scores `mean(pred)`.
pub fn s_measure(pred: &Tensor, gt: &Tensor) -> Result<StructureScore> {
    check_pair(pred, gt)?;
    let (_, h, w) = pred.chw();
    let (p, g) = (pred.data(), gt.data());
    let y = g.iter().filter(|&&v| v > 0.5).count() as f64 / g.len() as f64;
    let m = mean(p);
    if y == 0.0 {
        return Ok(StructureScore {
            s: 1.0 - m,
            object: 1.0 - m,
            region: 1.0 - m,
        });
    }
    if y == 1.0 {
        return Ok(StructureScore {
            s: m,
            object: m,
            region: m,
        });
    }
    let object = s_object(p, g);
    let region = s_region(p, g, h, w);
    let s = (S_GAMMA * object + (1.0 - S_GAMMA) * region).clamp(0.0, 1.0);
    Ok(StructureScore { s, object, region })
}

/// Dataset-level evaluation of one set of maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub max_f: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub s_object: f64,
    pub s_region: f64,
    pub gamma: f64,
    pub images: usize,
    pub empty_gt_skipped: usize,
    pub pr: PrCurve,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "max_f,mae,s_measure,s_object,s_region,gamma,images,empty_gt_skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            self.max_f, self.mae, self.s_measure, self.s_object, self.s_region, self.gamma, self.images, self.empty_gt_skipped
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}\n{}", Self::CSV_HEADER, self.csv_row()).map_err(|e| Error::io(path, e))
    }

    /// 256 rows: `threshold,precision,recall`.
    pub fn write_pr_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "precision", "recall"])?;
        for k in 0..self.pr.thresholds.len() {
            w.write_record([
                format!("{:.6}", self.pr.thresholds[k]),
                format!("{:.6}", self.pr.precision[k]),
                format!("{:.6}", self.pr.recall[k]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// MaxF, MAE and S-measure over a dataset; MAE and S are per-image means.
pub fn evaluate_maps(preds: &[Tensor], gts: &[Tensor]) -> Result<MetricsReport> {
    let pr = pr_curve(preds, gts)?;
    let n = preds.len() as f64;
    let mut mae_sum = 0.0;
    let (mut s, mut so, mut sr) = (0.0, 0.0, 0.0);
    for (p, g) in preds.iter().zip(gts) {
        mae_sum += mae(p, g)?;
        let score = s_measure(p, g)?;
        s += score.s;
        so += score.object;
        sr += score.region;
    }
    Ok(MetricsReport {
        max_f: max_f(&pr, BETA_SQUARED),
        mae: mae_sum / n,
        s_measure: s / n,
        s_object: so / n,
        s_region: sr / n,
        gamma: S_GAMMA,
        images: pr.images,
        empty_gt_skipped: pr.empty_gt_skipped,
        pr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::from_vec(&[1, h, w], data).unwrap()
    }

    #[test]
    fn level_respects_inclusive_thresholds() {
        for k in 0..THRESHOLDS {
            assert_eq!(level_of(threshold(k)), Some(k));
        }
        assert_eq!(level_of(1.0), Some(255));
        assert_eq!(level_of(0.0), Some(0));
        assert_eq!(level_of(-0.1), None);
    }

    #[test]
    fn perfect_binary_prediction() {
        let gt = map(8, 8, |r, c| ((r + c) % 3 == 0) as u8 as f64);
        let curve = pr_curve(std::slice::from_ref(&gt), std::slice::from_ref(&gt)).unwrap();
        for k in 1..THRESHOLDS {
            assert_eq!(curve.precision[k], 1.0);
            assert_eq!(curve.recall[k], 1.0);
        }
        assert_eq!(max_f(&curve, BETA_SQUARED), 1.0);
        assert_eq!(mae(&gt, &gt).unwrap(), 0.0);
        assert!((s_measure(&gt, &gt).unwrap().s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_one_against_half_positive() {
        let gt = map(4, 4, |r, _| (r < 2) as u8 as f64);
        let pred = Tensor::full(&[1, 4, 4], 1.0);
        let curve = pr_curve(&[pred], &[gt]).unwrap();
        assert!(curve.recall.iter().all(|&r| r == 1.0));
        assert!(curve.precision.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn f_measure_spot_value() {
        assert!((f_measure(0.8, 0.4, 0.3) - 0.65).abs() < 1e-9);
        assert_eq!(f_measure(0.7, 0.7, 0.3), 0.7);
        assert_eq!(f_measure(0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn half_prediction_mae() {
        let gt = map(4, 4, |r, c| ((r * c) % 2) as f64);
        assert_eq!(mae(&Tensor::full(&[1, 4, 4], 0.5), &gt).unwrap(), 0.5);
    }

    #[test]
    fn s_measure_degenerate_ground_truth() {
        let pred = map(4, 4, |r, c| (r + c) as f64 / 6.0);
        let m = pred.sum() / 16.0;
        let empty = s_measure(&pred, &Tensor::zeros(&[1, 4, 4])).unwrap();
        assert!((empty.s - (1.0 - m)).abs() < 1e-12);
        let full = s_measure(&pred, &Tensor::full(&[1, 4, 4], 1.0)).unwrap();
        assert!((full.s - m).abs() < 1e-12);
    }

    #[test]
    fn inverted_checkerboard_scores_low() {
        let gt = map(16, 16, |r, c| ((r + c) % 2) as f64);
        let inv = gt.map(|v| 1.0 - v);
        let score = s_measure(&inv, &gt).unwrap();
        assert!(score.s <= 0.5, "{score:?}");
    }

    #[test]
    fn constant_half_is_strictly_inside() {
        let gt = map(16, 16, |r, c| (r > 4 && r < 12 && c > 3 && c < 10) as u8 as f64);
        let score = s_measure(&Tensor::full(&[1, 16, 16], 0.5), &gt).unwrap();
        assert!(score.s > 0.0 && score.s < 1.0, "{score:?}");
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(pr_curve(&[], &[]).is_err());
        let z = Tensor::zeros(&[1, 4, 4]);
        assert!(pr_curve(&[z.clone()], &[z]).is_err());
    }
}
