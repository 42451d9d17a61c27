//! Supervision terms: summed pixel cross-entropy for every supervised map,
//! the aggregate losses, and the boundary-IoU penalty of the
//! `B+edge_NLDF` ablation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ClassWeights;
use crate::kernels;
use crate::tensor::Tensor;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn bce_with_logits_weighted(logits: &Tensor, target: &Tensor, weights: Option<ClassWeights>) -> f64 {
    let (wp, wn) = weights.map_or((1.0, 1.0), |w| (w.positive, w.negative));
    logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&x, &t)| {
            // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
            wp * t * softplus(-x) + wn * (1.0 - t) * softplus(x)
        })
        .sum()
}

/// `-sum_{pos} log p - sum_{neg} log(1 - p)` with `p = sigmoid(logits)`,
/// evaluated without forming `p`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<f64> {
    if logits.shape() != target.shape() {
        return Err(Error::shape("bce_with_logits", logits.shape(), target.shape()));
    }
    Ok(bce_with_logits_weighted(logits, target, None))
}

/// Per-pixel mean of [`bce_with_logits`], for logging.
pub fn mean_bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(bce_with_logits(logits, target)? / logits.numel() as f64)
}

/// Summed cross-entropy of a probability map against a binary target.
pub fn bce_map(probs: &Tensor, target: &Tensor) -> Result<f64> {
    if probs.shape() != target.shape() {
        return Err(Error::shape("bce_map", probs.shape(), target.shape()));
    }
    Ok(probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| if t > 0.5 { -p.ln() } else { -(1.0 - p).ln() })
        .sum())
}

pub(crate) fn boundary_iou_from_parts(prob: &[f64], target_boundary: &[f64], h: usize, w: usize) -> f64 {
    let pred_boundary = kernels::soft_boundary(prob, h, w);
    let inter: f64 = pred_boundary.iter().zip(target_boundary).map(|(a, b)| a * b).sum();
    let union: f64 = pred_boundary.iter().sum::<f64>() + target_boundary.iter().sum::<f64>();
    if union == 0.0 {
        0.0
    } else {
        1.0 - 2.0 * inter / union
    }
}

pub(crate) fn boundary_iou_grad(prob: &[f64], target_boundary: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (gx, gy) = kernels::sobel(prob, h, w);
    let a: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| (x * x + y * y).tanh()).collect();
    let inter: f64 = a.iter().zip(target_boundary).map(|(a, b)| a * b).sum();
    let union: f64 = a.iter().sum::<f64>() + target_boundary.iter().sum::<f64>();
    if union == 0.0 {
        return vec![0.0; prob.len()];
    }
    let mut d_gx = vec![0.0; prob.len()];
    let mut d_gy = vec![0.0; prob.len()];
    for j in 0..prob.len() {
        let d_a = -2.0 * (target_boundary[j] * union - inter) / (union * union);
        let d_s = d_a * (1.0 - a[j] * a[j]);
        d_gx[j] = d_s * 2.0 * gx[j];
        d_gy[j] = d_s * 2.0 * gy[j];
    }
    kernels::sobel_backward(&d_gx, &d_gy, h, w)
}

/// `1 - 2|dP ∩ dY| / (|dP| + |dY|)` where `d` is the soft Sobel boundary
/// `tanh(gx^2 + gy^2)` (replicated borders) and `∩` the pointwise product.
/// Defined as 0 when both boundaries are empty.
pub fn iou_edge_penalty(probs: &Tensor, mask: &Tensor) -> Result<f64> {
    if probs.shape() != mask.shape() || probs.shape().len() != 3 || probs.shape()[0] != 1 {
        return Err(Error::shape("iou_edge_penalty", mask.shape(), probs.shape()));
    }
    let (_, h, w) = probs.chw();
    let target = kernels::soft_boundary(mask.data(), h, w);
    Ok(boundary_iou_from_parts(probs.data(), &target, h, w))
}

/// Every supervision term of one forward pass. Terms a variant does not
/// produce are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Salient edge loss on the stride-2 edge map.
    pub edge: f64,
    /// Side losses for levels 3, 4, 5, 6.
    pub side: [f64; 4],
    /// Guided sub-side losses for levels 3, 4, 5, 6.
    pub subside: [f64; 4],
    /// Loss on the final (fused) saliency map.
    pub fused: f64,
    /// Boundary-IoU penalty (edge_NLDF ablation only), already weighted.
    pub boundary_penalty: f64,
}

impl LossReport {
    /// Edge loss plus the four side losses.
    pub fn modeling_total(&self) -> f64 {
        self.side.iter().fold(self.edge, |acc, v| acc + v)
    }

    /// Fused loss plus the four sub-side losses.
    pub fn guidance_total(&self) -> f64 {
        self.subside.iter().fold(self.fused, |acc, v| acc + v)
    }

    pub fn grand_total(&self) -> f64 {
        self.modeling_total() + self.guidance_total() + self.boundary_penalty
    }

    /// Column names of [`LossReport::csv_values`].
    pub const CSV_COLUMNS: [&'static str; 14] = [
        "edge",
        "side3",
        "side4",
        "side5",
        "side6",
        "subside3",
        "subside4",
        "subside5",
        "subside6",
        "fused",
        "boundary_penalty",
        "modeling_total",
        "guidance_total",
        "grand_total",
    ];

    pub fn csv_values(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0] = self.edge;
        out[1..5].copy_from_slice(&self.side);
        out[5..9].copy_from_slice(&self.subside);
        out[9] = self.fused;
        out[10] = self.boundary_penalty;
        out[11] = self.modeling_total();
        out[12] = self.guidance_total();
        out[13] = self.grand_total();
        out
    }

    /// Elementwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.edge += r.edge;
            out.fused += r.fused;
            out.boundary_penalty += r.boundary_penalty;
            for k in 0..4 {
                out.side[k] += r.side[k];
                out.subside[k] += r.subside[k];
            }
        }
        out.edge /= n;
        out.fused /= n;
        out.boundary_penalty /= n;
        for k in 0..4 {
            out.side[k] /= n;
            out.subside[k] /= n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f64], h: usize, w: usize) -> Tensor {
        Tensor::from_vec(&[1, h, w], values.to_vec()).unwrap()
    }

    #[test]
    fn saturated_perfect_prediction_has_tiny_loss() {
        let gt = map(&[1.0, 0.0, 0.0, 1.0], 2, 2);
        let logits = gt.map(|t| if t > 0.5 { 50.0 } else { -50.0 });
        assert!(bce_with_logits(&logits, &gt).unwrap() < 1e-10);
    }

    #[test]
    fn single_positive_pixel_at_half() {
        let loss = bce_map(&map(&[0.5], 1, 1), &map(&[1.0], 1, 1)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_case() {
        let p = map(&[0.9, 0.1, 0.8, 0.2], 2, 2);
        let gt = map(&[1.0, 0.0, 1.0, 0.0], 2, 2);
        let expected = -(0.9f64.ln() * 2.0 + 0.8f64.ln() * 2.0);
        assert!((bce_map(&p, &gt).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.6571).abs() < 1e-4);
        let logits = p.map(|q| (q / (1.0 - q)).ln());
        assert!((bce_with_logits(&logits, &gt).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn totals_follow_fixed_summation() {
        let ones = LossReport {
            edge: 1.0,
            side: [1.0; 4],
            subside: [1.0; 4],
            fused: 1.0,
            boundary_penalty: 0.0,
        };
        assert_eq!(ones.modeling_total(), 5.0);
        assert_eq!(ones.guidance_total(), 5.0);
        assert_eq!(ones.grand_total(), 10.0);
        assert_eq!(LossReport::default().grand_total(), 0.0);
    }

    #[test]
    fn penalty_degenerate_cases() {
        let mut y = Tensor::zeros(&[1, 16, 16]);
        for yy in 4..12 {
            for xx in 4..12 {
                y.data_mut()[yy * 16 + xx] = 1.0;
            }
        }
        let flat = Tensor::full(&[1, 16, 16], 0.5);
        assert_eq!(iou_edge_penalty(&flat, &y).unwrap(), 1.0);
        let same = iou_edge_penalty(&y, &y).unwrap();
        assert!(same < 0.05, "{same}");
        let empty = Tensor::zeros(&[1, 16, 16]);
        assert_eq!(iou_edge_penalty(&empty, &empty).unwrap(), 0.0);
    }
}
