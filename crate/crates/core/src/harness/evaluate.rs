//! Evaluation of a trained model: saliency metrics on the final map, edge
//! PR/MaxF against the inner-boundary ground truth, and 8-bit map export.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{save_gray_png, Sample};
use crate::error::{Error, Result};
use crate::kernels::sobel_magnitude;
use crate::metrics::{evaluate_maps, max_f, pr_curve, MetricsReport, PrCurve, BETA_SQUARED};
use crate::model::Model;
use crate::tensor::Tensor;

/// Where a variant's edge map comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeMapSource {
    /// The salient edge output of the edge path.
    Predicted,
    /// Fixed Sobel magnitude of the saliency map, for variants without an
    /// edge path.
    SobelOfSaliency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub source: EdgeMapSource,
    pub max_f: f64,
    pub images: usize,
    pub empty_gt_skipped: usize,
    pub pr: PrCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub saliency: MetricsReport,
    pub edge: EdgeReport,
}

/// Sobel magnitude of a `[1, H, W]` map scaled so its maximum is 1
/// (all zeros for a flat map).
pub fn sobel_edge_map(saliency: &Tensor) -> Tensor {
    let (_, h, w) = saliency.chw();
    let mag = sobel_magnitude(saliency.data(), h, w);
    let peak = mag.iter().copied().fold(0.0, f64::max);
    let data = if peak > 0.0 {
        mag.iter().map(|v| v / peak).collect()
    } else {
        mag
    };
    Tensor::from_vec(&[1, h, w], data).expect("same size as input")
}

/// Scores precomputed maps against the samples' masks and edges.
pub fn evaluate_predictions(
    saliency: &[Tensor],
    edges: &[Tensor],
    source: EdgeMapSource,
    samples: &[Sample],
) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation split"));
    }
    let masks: Vec<Tensor> = samples.iter().map(|s| s.mask.clone()).collect();
    let truths: Vec<Tensor> = samples.iter().map(|s| s.edge.clone()).collect();
    let saliency = evaluate_maps(saliency, &masks)?;
    let pr = pr_curve(edges, &truths)?;
    Ok(EvaluationReport {
        saliency,
        edge: EdgeReport {
            source,
            max_f: max_f(&pr, BETA_SQUARED),
            images: pr.images,
            empty_gt_skipped: pr.empty_gt_skipped,
            pr,
        },
    })
}

/// Saliency and edge maps of `model` at input resolution.
pub fn predict_maps(model: &Model, samples: &[Sample]) -> Result<(Vec<Tensor>, Vec<Tensor>, EdgeMapSource)> {
    let mut saliency = Vec::with_capacity(samples.len());
    let mut edges = Vec::with_capacity(samples.len());
    let mut source = EdgeMapSource::Predicted;
    for s in samples {
        let pred = model.predict(&s.image)?;
        let sal = pred.saliency_map();
        let edge = match pred.edge_map() {
            Some(e) => e,
            None => {
                source = EdgeMapSource::SobelOfSaliency;
                sobel_edge_map(&sal)
            }
        };
        saliency.push(sal);
        edges.push(edge);
    }
    Ok((saliency, edges, source))
}

/// Runs `model` over `samples`, scores the maps and optionally writes
/// `saliency/<id>.png` and `edges/<id>.png` under `export`.
pub fn evaluate_model(model: &Model, samples: &[Sample], export: Option<&Path>) -> Result<EvaluationReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation split"));
    }
    let (saliency, edges, source) = predict_maps(model, samples)?;
    if let Some(dir) = export {
        let sal_dir = dir.join("saliency");
        let edge_dir = dir.join("edges");
        for d in [&sal_dir, &edge_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        for ((s, sal), edge) in samples.iter().zip(&saliency).zip(&edges) {
            save_gray_png(&sal_dir.join(format!("{}.png", s.id)), sal)?;
            save_gray_png(&edge_dir.join(format!("{}.png", s.id)), edge)?;
        }
    }
    evaluate_predictions(&saliency, &edges, source, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::model::{ModelConfig, Variant};

    #[test]
    fn ground_truth_as_prediction_is_perfect() {
        let samples = gen_synthetic(4, 64, 11).unwrap();
        let sal: Vec<Tensor> = samples.iter().map(|s| s.mask.clone()).collect();
        let edges: Vec<Tensor> = samples.iter().map(|s| s.edge.clone()).collect();
        let r = evaluate_predictions(&sal, &edges, EdgeMapSource::Predicted, &samples).unwrap();
        assert_eq!(r.saliency.max_f, 1.0);
        assert_eq!(r.saliency.mae, 0.0);
        assert!((r.saliency.s_measure - 1.0).abs() < 1e-9);
        assert_eq!(r.edge.max_f, 1.0);
    }

    #[test]
    fn empty_split_is_an_error() {
        let model = Model::new(ModelConfig::toy(Variant::Baseline), 0).unwrap();
        assert!(matches!(evaluate_model(&model, &[], None), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn random_model_reports_are_in_range() {
        let samples = gen_synthetic(3, 64, 4).unwrap();
        for variant in [Variant::Baseline, Variant::Full] {
            let model = Model::new(ModelConfig::toy(variant), 9).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let r = evaluate_model(&model, &samples, Some(dir.path())).unwrap();
            for v in [r.saliency.max_f, r.saliency.mae, r.saliency.s_measure, r.edge.max_f] {
                assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{variant}: {v}");
            }
            assert!(dir.path().join("saliency").join(format!("{}.png", samples[0].id)).exists());
            let expected = if variant == Variant::Full { EdgeMapSource::Predicted } else { EdgeMapSource::SobelOfSaliency };
            assert_eq!(r.edge.source, expected);
        }
    }

    #[test]
    fn sobel_edge_map_peaks_at_one() {
        let s = &gen_synthetic(1, 64, 3).unwrap()[0];
        let e = sobel_edge_map(&s.mask);
        assert!((e.data().iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
        assert_eq!(sobel_edge_map(&Tensor::zeros(&[1, 8, 8])).sum(), 0.0);
    }
}
