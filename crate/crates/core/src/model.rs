//! Whole-network assembly for every ablation variant, supervision wiring
//! and prediction export.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backbone::{level_stride, BackboneConfig, BackboneLayers};
use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::graph::{ClassWeights, Graph, NodeId};
use crate::kernels::resize_bilinear;
use crate::losses::LossReport;
use crate::nlsem::{self, EdgeSource, NlsemLayers};
use crate::o2ogm::{self, GuidanceLayers};
use crate::params::{Init, LayerFactory, ParamStore};
use crate::psfem::{self, Prediction, PsfemLayers, TowerSchedule};
use crate::tensor::Tensor;

/// Network variants of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// U-Net style baseline over levels 2..6, no edge modelling.
    Baseline,
    /// Edge features from `C2` plus the level-3 object feature; single fusion.
    EdgeProg,
    /// Edge features from `C2` plus top-down location propagation; single fusion.
    EdgeTdlp,
    /// Baseline plus the boundary-IoU penalty on its final map.
    EdgeNldf,
    /// Location-propagated edges; object features 6..3 merged progressively
    /// and then fused once with the edge features.
    TdlpMrfProg,
    /// Location-propagated edges with one-to-one guidance (the full model).
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::EdgeProg,
        Variant::EdgeTdlp,
        Variant::EdgeNldf,
        Variant::TdlpMrfProg,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "B",
            Variant::EdgeProg => "B+edge_PROG",
            Variant::EdgeTdlp => "B+edge_TDLP",
            Variant::EdgeNldf => "B+edge_NLDF",
            Variant::TdlpMrfProg => "B+edge_TDLP+MRF_PROG",
            Variant::Full => "B+edge_TDLP+MRF_OTO",
        }
    }

    /// Source of top-down information for the edge path, if there is one.
    pub fn edge_source(self) -> Option<EdgeSource> {
        match self {
            Variant::Baseline | Variant::EdgeNldf => None,
            Variant::EdgeProg => Some(EdgeSource::Level3),
            Variant::EdgeTdlp | Variant::TdlpMrfProg | Variant::Full => Some(EdgeSource::TopLevel),
        }
    }

    pub fn has_boundary_penalty(self) -> bool {
        self == Variant::EdgeNldf
    }

    /// Side levels carried by the object feature stack.
    pub fn object_levels(self) -> &'static [usize] {
        if self.edge_source().is_some() {
            &[3, 4, 5, 6]
        } else {
            &[2, 3, 4, 5, 6]
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        Variant::ALL
            .into_iter()
            .find(|v| v.label().eq_ignore_ascii_case(wanted))
            .or(match wanted.to_ascii_lowercase().as_str() {
                "baseline" => Some(Variant::Baseline),
                "full" => Some(Variant::Full),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub backbone: BackboneConfig,
    pub towers: TowerSchedule,
    pub init: Init,
    /// Class-balanced edge cross-entropy instead of the plain sum.
    #[serde(default)]
    pub edge_class_balance: bool,
    /// Weight of the boundary-IoU penalty; `None` uses the pixel count of
    /// the final map so the penalty is on par with a per-pixel mean loss.
    #[serde(default)]
    pub boundary_penalty_weight: Option<f64>,
}

impl ModelConfig {
    /// VGG-shaped backbone, full tower schedule, truncated-normal init.
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            variant,
            backbone: BackboneConfig::vgg_shaped(),
            towers: TowerSchedule::full(),
            init: Init::TruncatedNormal { std: 0.01 },
            edge_class_balance: false,
            boundary_penalty_weight: None,
        }
    }

    /// Toy backbone and 8-channel towers, He init.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            backbone: BackboneConfig::toy(),
            towers: TowerSchedule::narrow(8),
            init: Init::He,
            edge_class_balance: false,
            boundary_penalty_weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.towers.validate()
    }
}

/// Layer layout of one variant.
#[derive(Clone, Debug)]
pub struct Network {
    pub backbone: BackboneLayers,
    pub psfem: PsfemLayers,
    pub nlsem: Option<NlsemLayers>,
    pub guidance: Option<GuidanceLayers>,
}

/// Node handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub sides: [NodeId; 5],
    pub objects: BTreeMap<usize, NodeId>,
    pub side_logits: BTreeMap<usize, NodeId>,
    pub edge_features: Option<NodeId>,
    pub edge_logits: Option<NodeId>,
    pub subside_logits: BTreeMap<usize, NodeId>,
    /// The fused map for the full model, otherwise the single final map.
    pub final_logits: NodeId,
}

/// Every supervised output of one forward pass.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    pub edge: Option<Prediction>,
    pub side: BTreeMap<usize, Prediction>,
    pub subside: BTreeMap<usize, Prediction>,
    pub fused: Prediction,
    pub input_size: (usize, usize),
}

impl PredictionSet {
    /// `(name, prediction)` for every supervised map.
    pub fn supervised(&self) -> Vec<(String, &Prediction)> {
        let mut out = Vec::new();
        if let Some(e) = &self.edge {
            out.push(("edge".to_string(), e));
        }
        out.extend(self.side.iter().map(|(l, p)| (format!("side{l}"), p)));
        out.extend(self.subside.iter().map(|(l, p)| (format!("subside{l}"), p)));
        out.push(("fused".to_string(), &self.fused));
        out
    }

    /// Final saliency map at input resolution.
    pub fn saliency_map(&self) -> Tensor {
        let (h, w) = self.input_size;
        resize_bilinear(&self.fused.probs, h, w)
    }

    /// Salient edge map at input resolution, when the variant has one.
    pub fn edge_map(&self) -> Option<Tensor> {
        let (h, w) = self.input_size;
        self.edge.as_ref().map(|e| resize_bilinear(&e.probs, h, w))
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub network: Network,
    params: ParamStore,
}

impl Model {
    /// Builds and initializes a model; weights depend only on `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factory = LayerFactory {
            store: &mut params,
            rng: &mut rng,
            init: config.init,
        };
        let variant = config.variant;
        let side_channels = config.backbone.side_channels();
        let backbone = BackboneLayers::build(&config.backbone, &mut factory)?;
        let psfem = PsfemLayers::build(&mut factory, variant.object_levels(), side_channels, &config.towers)?;
        let nlsem = variant
            .edge_source()
            .map(|src| NlsemLayers::build(&mut factory, src, side_channels[0], &config.towers))
            .transpose()?;
        let edge_channels = config.towers.level(2).channels;
        let guidance = match variant {
            Variant::Baseline | Variant::EdgeNldf => None,
            Variant::EdgeProg | Variant::EdgeTdlp => {
                Some(GuidanceLayers::build_single(&mut factory, false, edge_channels, &config.towers)?)
            }
            Variant::TdlpMrfProg => Some(GuidanceLayers::build_single(&mut factory, true, edge_channels, &config.towers)?),
            Variant::Full => Some(GuidanceLayers::build_one_to_one(&mut factory, edge_channels, &config.towers)?),
        };
        Ok(Self {
            config,
            network: Network {
                backbone,
                psfem,
                nlsem,
                guidance,
            },
            params,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Builds the forward graph for one `[3, H, W]` image.
    pub fn forward_nodes(&self, g: &mut Graph, image: &Tensor) -> Result<ForwardNodes> {
        self.config.backbone.check_input(image)?;
        let store = &self.params;
        let net = &self.network;
        let x = g.input(image.clone());
        let sides = net.backbone.forward(g, store, x)?;
        let objects = psfem::topdown_nodes(g, store, &sides, &net.psfem)?;

        let mut side_logits = BTreeMap::new();
        for level in 3..=6 {
            let logits = psfem::predict_node(g, store, objects[&level], &net.psfem.transitions[&level])?;
            side_logits.insert(level, logits);
        }

        let mut nodes = ForwardNodes {
            sides,
            objects: objects.clone(),
            side_logits,
            edge_features: None,
            edge_logits: None,
            subside_logits: BTreeMap::new(),
            final_logits: x,
        };

        let Some(edge_layers) = &net.nlsem else {
            // baseline family: the level-2 prediction of the U-Net is final
            nodes.final_logits = psfem::predict_node(g, store, objects[&2], &net.psfem.transitions[&2])?;
            return Ok(nodes);
        };

        let upper = objects[&edge_layers.source.level()];
        let c2_bar = nlsem::location_propagate_node(g, store, sides[0], upper, &edge_layers.propagate)?;
        let edge = psfem::enhance_node(g, store, c2_bar, &edge_layers.tower)?;
        nodes.edge_features = Some(edge);
        nodes.edge_logits = Some(psfem::predict_node(g, store, edge, &edge_layers.transition)?);

        match net.guidance.as_ref().expect("edge variants carry guidance layers") {
            GuidanceLayers::Single { chain, path } => {
                let object = if chain.is_empty() {
                    objects[&3]
                } else {
                    o2ogm::progressive_merge_node(g, store, &objects, chain)?
                };
                nodes.final_logits = path.forward(g, store, object, edge)?.logits;
            }
            GuidanceLayers::OneToOne { paths, betas } => {
                let mut logits = Vec::with_capacity(4);
                let mut weights = Vec::with_capacity(4);
                for (level, path) in paths {
                    let out = path.forward(g, store, objects[level], edge)?;
                    nodes.subside_logits.insert(*level, out.logits);
                    logits.push(out.logits);
                    weights.push(g.param(store, betas[level]));
                }
                nodes.final_logits = o2ogm::fuse_node(g, &logits, &weights)?;
            }
        }
        Ok(nodes)
    }

    /// Adds every supervision term; returns the report and the total node.
    pub fn loss_nodes(&self, g: &mut Graph, nodes: &ForwardNodes, gt: &GroundTruth) -> Result<(LossReport, NodeId)> {
        let mut report = LossReport::default();
        let mut modeling = Vec::with_capacity(5);
        let mut guidance = Vec::with_capacity(5);

        if let Some(edge) = nodes.edge_logits {
            let target = gt.edge_at(2);
            let weights = self.config.edge_class_balance.then(|| ClassWeights::balanced(target));
            let n = g.bce_with_logits(edge, target, weights)?;
            report.edge = g.value(n).item();
            modeling.push(n);
        }
        for (k, (level, &logits)) in nodes.side_logits.iter().enumerate() {
            let n = g.bce_with_logits(logits, gt.mask_at(level_stride(*level)), None)?;
            report.side[k] = g.value(n).item();
            modeling.push(n);
        }

        let fused = g.bce_with_logits(nodes.final_logits, gt.mask_at(2), None)?;
        report.fused = g.value(fused).item();
        guidance.push(fused);
        for (k, &logits) in nodes.subside_logits.values().enumerate() {
            let n = g.bce_with_logits(logits, gt.mask_at(2), None)?;
            report.subside[k] = g.value(n).item();
            guidance.push(n);
        }

        let modeling = g.sum_scalars(&modeling)?;
        let guidance = g.sum_scalars(&guidance)?;
        let mut total = g.add(modeling, guidance)?;
        if self.config.variant.has_boundary_penalty() {
            let target = gt.mask_at(2);
            let weight = self.config.boundary_penalty_weight.unwrap_or(target.numel() as f64);
            let penalty = g.boundary_iou_penalty(nodes.final_logits, target)?;
            let w = g.input(Tensor::scalar(weight));
            let weighted = g.scale(penalty, w);
            report.boundary_penalty = g.value(weighted).item();
            total = g.add(total, weighted)?;
        }
        Ok((report, total))
    }

    /// All supervised predictions for one image.
    pub fn predict(&self, image: &Tensor) -> Result<PredictionSet> {
        let mut g = Graph::new();
        let nodes = self.forward_nodes(&mut g, image)?;
        let pred = |n: NodeId, stride: usize| Prediction::from_logits(g.value(n).clone(), stride);
        let (_, h, w) = image.chw();
        Ok(PredictionSet {
            edge: nodes.edge_logits.map(|n| pred(n, 2)),
            side: nodes.side_logits.iter().map(|(&l, &n)| (l, pred(n, level_stride(l)))).collect(),
            subside: nodes.subside_logits.iter().map(|(&l, &n)| (l, pred(n, 2))).collect(),
            fused: pred(nodes.final_logits, 2),
            input_size: (h, w),
        })
    }

    /// Loss report of one image without gradients.
    pub fn loss(&self, image: &Tensor, gt: &GroundTruth) -> Result<LossReport> {
        let mut g = Graph::new();
        let nodes = self.forward_nodes(&mut g, image)?;
        Ok(self.loss_nodes(&mut g, &nodes, gt)?.0)
    }

    /// Loss report and dense parameter gradients (indexed like the store).
    pub fn loss_and_gradients(&self, image: &Tensor, gt: &GroundTruth) -> Result<(LossReport, Vec<Tensor>)> {
        let mut g = Graph::new();
        let nodes = self.forward_nodes(&mut g, image)?;
        let (report, total) = self.loss_nodes(&mut g, &nodes, gt)?;
        let grads = g.backward(total);
        let mut dense = self.params.zeros_like();
        grads.accumulate_into(&mut dense);
        Ok((report, dense))
    }

    /// Overwrites weights by name; every parameter of the model must be present.
    pub fn load_params(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let value = named
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            self.params.set(id, value.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_sample;
    use crate::params::Component;

    #[test]
    fn variant_labels_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("B+edge_FOO".parse::<Variant>().is_err());
    }

    #[test]
    fn baseline_has_no_edge_or_guidance_parameters() {
        let m = Model::new(ModelConfig::toy(Variant::Baseline), 0).unwrap();
        assert_eq!(m.params().numel_in(Component::Nlsem), 0);
        assert_eq!(m.params().numel_in(Component::O2ogm), 0);
        let full = Model::new(ModelConfig::toy(Variant::Full), 0).unwrap();
        assert!(full.params().numel_in(Component::Nlsem) > 0);
        assert!(full.params().numel_in(Component::O2ogm) > 0);
    }

    #[test]
    fn graph_total_equals_report_total() {
        let sample = synthetic_sample(0, 64, 3);
        let gt = GroundTruth::new(&sample);
        for v in Variant::ALL {
            let m = Model::new(ModelConfig::toy(v), 1).unwrap();
            let mut g = Graph::new();
            let nodes = m.forward_nodes(&mut g, &sample.image).unwrap();
            let (report, total) = m.loss_nodes(&mut g, &nodes, &gt).unwrap();
            assert_eq!(g.value(total).item(), report.grand_total(), "{v}");
        }
    }
}
