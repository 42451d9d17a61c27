//! Progressive salient object feature extraction.
//!
//! Every side path `i` gets a three-conv enhancement tower `T(i)`. Starting
//! from the top level, the enhanced feature of level `i + 1` is passed down
//! through a channel-matching 1x1 conv, rectified, bilinearly upsampled and
//! added to `C(i)` before that level's tower runs. A 3x3 transition conv
//! `D(i)` turns each enhanced feature into a single-channel logit map.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, level_stride, SideFeatureSet};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Component, ConvLayer, LayerFactory, ParamGroup, ParamStore};
use crate::tensor::{sigmoid, FeatureMap, Tensor};

/// Kernel size and output channels shared by the three convs of a tower.
/// Padding is always `kernel / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub kernel: usize,
    pub channels: usize,
}

impl TowerSpec {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

/// Tower specs for side levels 2 through 6.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerSchedule {
    pub levels: [TowerSpec; 5],
}

impl TowerSchedule {
    /// Full-size schedule: (3,128), (3,256), (5,512), (5,512), (7,512).
    pub fn full() -> Self {
        let t = |kernel, channels| TowerSpec { kernel, channels };
        Self {
            levels: [t(3, 128), t(3, 256), t(5, 512), t(5, 512), t(7, 512)],
        }
    }

    /// Same kernels with `channels` everywhere.
    pub fn narrow(channels: usize) -> Self {
        let mut s = Self::full();
        for spec in &mut s.levels {
            spec.channels = channels;
        }
        s
    }

    pub fn level(&self, level: usize) -> TowerSpec {
        self.levels[level - 2]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, spec) in self.levels.iter().enumerate() {
            if spec.kernel % 2 == 0 || spec.channels == 0 {
                return Err(Error::Config(format!(
                    "tower for level {} needs an odd kernel and nonzero channels, got {spec:?}",
                    i + 2
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Tower {
    pub spec: TowerSpec,
    pub layers: [ConvLayer; 3],
}

impl Tower {
    pub(crate) fn build<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        name: &str,
        group: ParamGroup,
        component: Component,
        in_channels: usize,
        spec: TowerSpec,
    ) -> Result<Self> {
        let mut ch = in_channels;
        let mut layers = Vec::with_capacity(3);
        for i in 0..3 {
            layers.push(factory.conv(
                &format!("{name}.conv{}", i + 1),
                group,
                component,
                ch,
                spec.channels,
                spec.kernel,
            )?);
            ch = spec.channels;
        }
        Ok(Self {
            spec,
            layers: layers.try_into().expect("three layers"),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.spec.channels
    }
}

/// Tower, transition and incoming hop weights per active level.
#[derive(Clone, Debug, Default)]
pub struct PsfemLayers {
    pub towers: BTreeMap<usize, Tower>,
    pub transitions: BTreeMap<usize, ConvLayer>,
    /// `hops[i]` maps the enhanced feature of level `i + 1` to `C(i)`'s channels.
    pub hops: BTreeMap<usize, ConvLayer>,
}

impl PsfemLayers {
    /// Builds a contiguous top-down stack over `levels` (ascending, ending at 6).
    pub(crate) fn build<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        levels: &[usize],
        side_channels: [usize; 5],
        schedule: &TowerSchedule,
    ) -> Result<Self> {
        let mut layers = Self::default();
        for &level in levels {
            let spec = schedule.level(level);
            let c_in = side_channels[level - 2];
            let tower = Tower::build(
                factory,
                &format!("psfem.tower{level}"),
                ParamGroup::Tower,
                Component::Psfem,
                c_in,
                spec,
            )?;
            let transition = factory.conv(
                &format!("psfem.trans{level}"),
                ParamGroup::Transition,
                Component::Psfem,
                spec.channels,
                1,
                3,
            )?;
            if level < 6 {
                let upper = schedule.level(level + 1).channels;
                let hop = factory.conv(
                    &format!("psfem.up{}to{level}", level + 1),
                    ParamGroup::Propagation,
                    Component::Psfem,
                    upper,
                    c_in,
                    1,
                )?;
                layers.hops.insert(level, hop);
            }
            layers.towers.insert(level, tower);
            layers.transitions.insert(level, transition);
        }
        Ok(layers)
    }

    pub fn levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.towers.keys().copied()
    }
}

/// Three conv + ReLU layers.
pub fn enhance_node(g: &mut Graph, store: &ParamStore, x: NodeId, tower: &Tower) -> Result<NodeId> {
    let mut y = x;
    for layer in &tower.layers {
        y = backbone::conv_relu(g, store, y, layer)?;
    }
    Ok(y)
}

/// `Up(relu(Trans(x)))` resized to `(height, width)`.
pub fn up_transform_node(
    g: &mut Graph,
    store: &ParamStore,
    x: NodeId,
    trans: &ConvLayer,
    height: usize,
    width: usize,
) -> Result<NodeId> {
    let y = backbone::conv_relu(g, store, x, trans)?;
    let (_, h, w) = g.value(y).chw();
    if (h, w) == (height, width) {
        Ok(y)
    } else {
        Ok(g.resize(y, height, width))
    }
}

/// Runs the top-down fusion over every level present in `layers`.
/// `sides[k]` is the node of `C(k + 2)`.
pub fn topdown_nodes(
    g: &mut Graph,
    store: &ParamStore,
    sides: &[NodeId; 5],
    layers: &PsfemLayers,
) -> Result<BTreeMap<usize, NodeId>> {
    let mut out = BTreeMap::new();
    let mut upper: Option<NodeId> = None;
    for level in layers.levels().collect::<Vec<_>>().into_iter().rev() {
        let c = sides[level - 2];
        let input = match (upper, layers.hops.get(&level)) {
            (Some(up), Some(hop)) => {
                let (_, h, w) = g.value(c).chw();
                let addend = up_transform_node(g, store, up, hop, h, w)?;
                g.add(c, addend)?
            }
            _ => c,
        };
        let f = enhance_node(g, store, input, &layers.towers[&level])?;
        out.insert(level, f);
        upper = Some(f);
    }
    Ok(out)
}

/// Single-channel logit map from a transition conv.
pub fn predict_node(g: &mut Graph, store: &ParamStore, x: NodeId, transition: &ConvLayer) -> Result<NodeId> {
    backbone::conv(g, store, x, transition)
}

/// A single-channel logit map and its logistic probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub probs: Tensor,
    pub stride: usize,
}

impl Prediction {
    pub fn from_logits(logits: Tensor, stride: usize) -> Self {
        let probs = logits.map(sigmoid);
        Self {
            logits,
            probs,
            stride,
        }
    }
}

/// Applies an enhancement tower to one feature map.
pub fn enhance(feature: &FeatureMap, tower: &Tower, store: &ParamStore) -> Result<FeatureMap> {
    if feature.channels() != tower.in_channels() {
        return Err(Error::Config(format!(
            "tower expects {} input channels, feature has {}",
            tower.in_channels(),
            feature.channels()
        )));
    }
    let mut g = Graph::new();
    let x = g.input(feature.values.clone());
    let y = enhance_node(&mut g, store, x, tower)?;
    Ok(FeatureMap::new(g.value(y).clone(), feature.stride))
}

/// Enhanced features `F(i)` for every level in `layers`.
pub fn topdown_fuse(
    sides: &SideFeatureSet,
    layers: &PsfemLayers,
    store: &ParamStore,
) -> Result<BTreeMap<usize, FeatureMap>> {
    let mut g = Graph::new();
    let nodes: [NodeId; 5] = std::array::from_fn(|i| g.input(sides.level(i + 2).values.clone()));
    let fused = topdown_nodes(&mut g, store, &nodes, layers)?;
    Ok(fused
        .into_iter()
        .map(|(level, n)| (level, FeatureMap::new(g.value(n).clone(), level_stride(level))))
        .collect())
}

/// Side saliency prediction for one enhanced feature.
pub fn side_predict(feature: &FeatureMap, transition: &ConvLayer, store: &ParamStore) -> Result<Prediction> {
    let mut g = Graph::new();
    let x = g.input(feature.values.clone());
    let y = predict_node(&mut g, store, x, transition)?;
    Ok(Prediction::from_logits(g.value(y).clone(), feature.stride))
}
