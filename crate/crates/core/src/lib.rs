//! Edge-guided salient object detection on a small reverse-mode autodiff
//! engine: a VGG-shaped backbone with side outputs, progressive salient
//! object features, non-local salient edge features, one-to-one guidance,
//! the supervision losses, saliency metrics and a desk-scale harness for
//! training, evaluation and ablation.

pub mod backbone;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nlsem;
pub mod o2ogm;
pub mod params;
pub mod psfem;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use backbone::{extract_side_features, BackboneConfig, SideFeatureSet};
pub use data::{DatasetManifest, GroundTruth, Sample};
pub use error::{Error, Result};
pub use losses::LossReport;
pub use metrics::MetricsReport;
pub use model::{Model, ModelConfig, PredictionSet, Variant};
pub use tensor::{FeatureMap, Tensor};
