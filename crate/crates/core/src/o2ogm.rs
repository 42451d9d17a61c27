//! One-to-one guidance: the edge features `F_E` are fused with each
//! enhanced object feature separately, `G(i) = Up(relu(Trans(F(i)))) + F_E`,
//! refined by a sub-side tower `T'(i)` and turned into a sub-side logit map
//! by `D'(i)`. The fused logit map is `sum_i beta_i * logit(i)`.
//!
//! The single-fusion ablations (edge features meeting only one object
//! feature, optionally after a progressive multi-resolution merge) share
//! the same tower and transition code.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Component, ConvLayer, LayerFactory, ParamGroup, ParamId, ParamStore};
use crate::psfem::{self, Prediction, Tower, TowerSchedule};
use crate::tensor::{FeatureMap, Tensor};

/// Initial value of every fusion weight.
pub const BETA_INIT: f64 = 0.25;

/// Guidance hop, sub-side tower and sub-side transition of one level.
#[derive(Clone, Debug)]
pub struct GuidedPath {
    pub guide: ConvLayer,
    pub tower: Tower,
    pub transition: ConvLayer,
}

impl GuidedPath {
    fn build<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        level: usize,
        object_channels: usize,
        edge_channels: usize,
        schedule: &TowerSchedule,
    ) -> Result<Self> {
        let guide = factory.conv(
            &format!("o2ogm.guide{level}"),
            ParamGroup::Propagation,
            Component::O2ogm,
            object_channels,
            edge_channels,
            1,
        )?;
        let spec = schedule.level(level);
        let tower = Tower::build(
            factory,
            &format!("o2ogm.tower{level}"),
            ParamGroup::SubTower,
            Component::O2ogm,
            edge_channels,
            spec,
        )?;
        let transition = factory.conv(
            &format!("o2ogm.trans{level}"),
            ParamGroup::SubTransition,
            Component::O2ogm,
            spec.channels,
            1,
            3,
        )?;
        Ok(Self {
            guide,
            tower,
            transition,
        })
    }

    /// Builds `G`, `Ĝ` and the sub-side logits for one object feature.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, object: NodeId, edge: NodeId) -> Result<GuidedNodes> {
        let guided = guide_node(g, store, object, edge, &self.guide)?;
        let enhanced = psfem::enhance_node(g, store, guided, &self.tower)?;
        let logits = psfem::predict_node(g, store, enhanced, &self.transition)?;
        Ok(GuidedNodes {
            guided,
            enhanced,
            logits,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GuidedNodes {
    pub guided: NodeId,
    pub enhanced: NodeId,
    pub logits: NodeId,
}

#[derive(Clone, Debug)]
pub enum GuidanceLayers {
    /// Edge features meet a single object feature. With `chain` non-empty
    /// the object features of levels 6..3 are first merged progressively.
    Single {
        chain: BTreeMap<usize, ConvLayer>,
        path: GuidedPath,
    },
    /// One guided sub-side path per level 3..6, fused by learnable weights.
    OneToOne {
        paths: BTreeMap<usize, GuidedPath>,
        betas: BTreeMap<usize, ParamId>,
    },
}

impl GuidanceLayers {
    pub(crate) fn build_single<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        progressive: bool,
        edge_channels: usize,
        schedule: &TowerSchedule,
    ) -> Result<Self> {
        let mut chain = BTreeMap::new();
        if progressive {
            for level in (3..=5).rev() {
                let hop = factory.conv(
                    &format!("o2ogm.chain{}to{level}", level + 1),
                    ParamGroup::Propagation,
                    Component::O2ogm,
                    schedule.level(level + 1).channels,
                    schedule.level(level).channels,
                    1,
                )?;
                chain.insert(level, hop);
            }
        }
        let path = GuidedPath::build(factory, 3, schedule.level(3).channels, edge_channels, schedule)?;
        Ok(GuidanceLayers::Single { chain, path })
    }

    pub(crate) fn build_one_to_one<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        edge_channels: usize,
        schedule: &TowerSchedule,
    ) -> Result<Self> {
        let mut paths = BTreeMap::new();
        let mut betas = BTreeMap::new();
        for level in 3..=6 {
            let path = GuidedPath::build(factory, level, schedule.level(level).channels, edge_channels, schedule)?;
            paths.insert(level, path);
        }
        for level in 3..=6 {
            let beta = factory.scalar(&format!("o2ogm.beta{level}"), ParamGroup::Fusion, Component::O2ogm, BETA_INIT)?;
            betas.insert(level, beta);
        }
        Ok(GuidanceLayers::OneToOne { paths, betas })
    }
}

/// `Up(relu(Trans(object))) + edge`.
pub fn guide_node(g: &mut Graph, store: &ParamStore, object: NodeId, edge: NodeId, hop: &ConvLayer) -> Result<NodeId> {
    let (_, h, w) = g.value(edge).chw();
    let addend = psfem::up_transform_node(g, store, object, hop, h, w)?;
    g.add(addend, edge)
}

/// Progressive merge `P6 = F6`, `P(i) = F(i) + Up(relu(Trans(P(i+1))))`.
pub fn progressive_merge_node(
    g: &mut Graph,
    store: &ParamStore,
    objects: &BTreeMap<usize, NodeId>,
    chain: &BTreeMap<usize, ConvLayer>,
) -> Result<NodeId> {
    let mut acc = objects[&6];
    for level in (3..=5).rev() {
        let f = objects[&level];
        let (_, h, w) = g.value(f).chw();
        let addend = psfem::up_transform_node(g, store, acc, &chain[&level], h, w)?;
        acc = g.add(f, addend)?;
    }
    Ok(acc)
}

/// `sum_i beta_i * logits_i`, folded left to right.
pub fn fuse_node(g: &mut Graph, logits: &[NodeId], betas: &[NodeId]) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (&l, &b) in logits.iter().zip(betas) {
        let term = g.scale(l, b);
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Config("fusion of zero maps".into()))
}

/// Salient edge guidance features `G(i)` at `F_E`'s resolution.
pub fn guide(object: &FeatureMap, edge: &FeatureMap, hop: &ConvLayer, store: &ParamStore) -> Result<FeatureMap> {
    if hop.in_channels != object.channels() || hop.out_channels != edge.channels() {
        return Err(Error::Config(format!(
            "guidance conv maps {} -> {} channels, features have {} and {}",
            hop.in_channels,
            hop.out_channels,
            object.channels(),
            edge.channels()
        )));
    }
    let mut g = Graph::new();
    let o = g.input(object.values.clone());
    let e = g.input(edge.values.clone());
    let out = guide_node(&mut g, store, o, e, hop)?;
    Ok(FeatureMap::new(g.value(out).clone(), edge.stride))
}

/// Sub-side tower `T'(i)`.
pub fn sub_enhance(guided: &FeatureMap, tower: &Tower, store: &ParamStore) -> Result<FeatureMap> {
    psfem::enhance(guided, tower, store)
}

/// Sub-side transition `D'(i)`.
pub fn sub_predict(enhanced: &FeatureMap, transition: &ConvLayer, store: &ParamStore) -> Result<Prediction> {
    psfem::side_predict(enhanced, transition, store)
}

/// Weighted sum of sub-side logit maps, with probabilities.
pub fn fuse_maps(logits: &[Tensor], betas: &[f64], stride: usize) -> Result<Prediction> {
    if logits.len() != betas.len() || logits.is_empty() {
        return Err(Error::Config(format!(
            "need one weight per map, got {} maps and {} weights",
            logits.len(),
            betas.len()
        )));
    }
    let mut g = Graph::new();
    let maps: Vec<NodeId> = logits.iter().map(|m| g.input(m.clone())).collect();
    for m in &logits[1..] {
        if m.shape() != logits[0].shape() {
            return Err(Error::shape("fuse_maps", logits[0].shape(), m.shape()));
        }
    }
    let weights: Vec<NodeId> = betas.iter().map(|&b| g.input(Tensor::scalar(b))).collect();
    let fused = fuse_node(&mut g, &maps, &weights)?;
    Ok(Prediction::from_logits(g.value(fused).clone(), stride))
}
