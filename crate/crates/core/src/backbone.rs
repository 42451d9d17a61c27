//! Convolutional backbone producing the five side features `C2..C6`.
//!
//! Six stages of 3x3 convolutions with a 2x2 max-pool in front of every
//! stage but the first. The first stage (stride 1) is never tapped; stages
//! two to six give side features at strides 2, 4, 8, 16 and 32.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Component, ConvLayer, LayerFactory, ParamGroup, ParamStore};
use crate::tensor::{FeatureMap, Tensor};

/// Side-path levels, lowest first.
pub const LEVELS: [usize; 5] = [2, 3, 4, 5, 6];

/// Downsampling factor of side level `level` (2 for `C2` ... 32 for `C6`).
pub fn level_stride(level: usize) -> usize {
    1 << (level - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneVariant {
    VggShaped,
    Toy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub convs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    /// Six stages; the first runs at full resolution and is not tapped.
    pub stages: Vec<StageSpec>,
    /// Smallest accepted input side length.
    #[serde(default = "default_min_input")]
    pub min_input: usize,
}

fn default_min_input() -> usize {
    64
}

impl BackboneConfig {
    /// VGG-16 conv layout with a sixth three-conv stage after the last pool.
    pub fn vgg_shaped() -> Self {
        let stage = |channels, convs| StageSpec { channels, convs };
        Self {
            variant: BackboneVariant::VggShaped,
            stages: vec![
                stage(64, 2),
                stage(128, 2),
                stage(256, 3),
                stage(512, 3),
                stage(512, 3),
                stage(512, 3),
            ],
            min_input: default_min_input(),
        }
    }

    /// Same stride ladder, one conv per stage, side channels (8, 16, 32, 32, 32).
    pub fn toy() -> Self {
        let stage = |channels| StageSpec { channels, convs: 1 };
        Self {
            variant: BackboneVariant::Toy,
            stages: vec![stage(8), stage(8), stage(16), stage(32), stage(32), stage(32)],
            min_input: default_min_input(),
        }
    }

    /// Channel counts of `C2..C6`.
    pub fn side_channels(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for (o, s) in out.iter_mut().zip(&self.stages[1..]) {
            *o = s.channels;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 6 {
            return Err(Error::Config(format!(
                "backbone needs exactly 6 stages, got {}",
                self.stages.len()
            )));
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.convs == 0) {
            return Err(Error::Config("backbone stages need at least one conv and channel".into()));
        }
        if self.min_input < 32 || self.min_input % 32 != 0 {
            return Err(Error::Config(format!(
                "min_input must be a positive multiple of 32, got {}",
                self.min_input
            )));
        }
        Ok(())
    }

    /// Checks an input image of shape `[3, H, W]`.
    pub fn check_input(&self, image: &Tensor) -> Result<()> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape("input image", &[3, 0, 0], shape));
        }
        for (axis, size) in [("height", shape[1]), ("width", shape[2])] {
            if size < self.min_input {
                return Err(Error::Dimension {
                    axis,
                    size,
                    reason: format!("must be at least {}", self.min_input),
                });
            }
            if size % 32 != 0 {
                return Err(Error::Dimension {
                    axis,
                    size,
                    reason: "must be divisible by 32".into(),
                });
            }
        }
        Ok(())
    }
}

/// The five side features of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SideFeatureSet {
    features: [FeatureMap; 5],
}

impl SideFeatureSet {
    pub fn new(features: [FeatureMap; 5]) -> Result<Self> {
        for (level, f) in LEVELS.iter().zip(&features) {
            if f.stride != level_stride(*level) {
                return Err(Error::Config(format!(
                    "side feature C{level} has stride {}, expected {}",
                    f.stride,
                    level_stride(*level)
                )));
            }
        }
        Ok(Self { features })
    }

    /// Side feature `C<level>` for `level` in `2..=6`.
    pub fn level(&self, level: usize) -> &FeatureMap {
        &self.features[level - 2]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &FeatureMap)> {
        LEVELS.iter().copied().zip(self.features.iter())
    }
}

/// Backbone convolution weights, one list per stage.
#[derive(Clone, Debug)]
pub struct BackboneLayers {
    pub stages: Vec<Vec<ConvLayer>>,
}

impl BackboneLayers {
    pub(crate) fn build<R: Rng>(config: &BackboneConfig, factory: &mut LayerFactory<'_, R>) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(6);
        let mut in_ch = 3;
        for (s, spec) in config.stages.iter().enumerate() {
            let mut convs = Vec::with_capacity(spec.convs);
            for c in 0..spec.convs {
                let name = format!("backbone.stage{}.conv{}", s + 1, c + 1);
                convs.push(factory.conv(
                    &name,
                    ParamGroup::Backbone,
                    Component::Backbone,
                    in_ch,
                    spec.channels,
                    3,
                )?);
                in_ch = spec.channels;
            }
            stages.push(convs);
        }
        Ok(Self { stages })
    }

    /// Builds the backbone into `g`; returns the nodes of `C2..C6`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, image: NodeId) -> Result<[NodeId; 5]> {
        let mut x = image;
        let mut taps = Vec::with_capacity(5);
        for (s, convs) in self.stages.iter().enumerate() {
            if s > 0 {
                x = g.maxpool2(x);
            }
            for layer in convs {
                x = conv_relu(g, store, x, layer)?;
            }
            if s > 0 {
                taps.push(x);
            }
        }
        Ok(taps.try_into().expect("six stages give five taps"))
    }
}

pub(crate) fn conv(g: &mut Graph, store: &ParamStore, x: NodeId, layer: &ConvLayer) -> Result<NodeId> {
    let w = g.param(store, layer.weight);
    let b = g.param(store, layer.bias);
    g.conv2d(x, w, Some(b))
}

pub(crate) fn conv_relu(g: &mut Graph, store: &ParamStore, x: NodeId, layer: &ConvLayer) -> Result<NodeId> {
    let y = conv(g, store, x, layer)?;
    Ok(g.relu(y))
}

/// Runs the backbone on one `[3, H, W]` image with values in `[0, 1]`.
pub fn extract_side_features(
    image: &Tensor,
    config: &BackboneConfig,
    layers: &BackboneLayers,
    store: &ParamStore,
) -> Result<SideFeatureSet> {
    config.check_input(image)?;
    let mut g = Graph::new();
    let x = g.input(image.clone());
    let taps = layers.forward(&mut g, store, x)?;
    let features = std::array::from_fn(|i| {
        FeatureMap::new(g.value(taps[i]).clone(), level_stride(LEVELS[i]))
    });
    SideFeatureSet::new(features)
}
