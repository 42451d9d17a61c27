//! Non-local salient edge features.
//!
//! Location information from a higher level is propagated into the
//! stride-2 path (`C2 + Up(relu(Trans(F_top)))`), then enhanced by the
//! level-2 tower to give the edge features `F_E`, which a transition conv
//! turns into the salient edge logit map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Component, ConvLayer, LayerFactory, ParamGroup, ParamStore};
use crate::psfem::{self, Prediction, Tower, TowerSchedule};
use crate::tensor::FeatureMap;

/// Which enhanced object feature feeds the edge path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeSource {
    /// Top-down location propagation from the stride-32 level.
    TopLevel,
    /// The final level-3 object feature, one hop above `C2`.
    Level3,
}

impl EdgeSource {
    pub fn level(self) -> usize {
        match self {
            EdgeSource::TopLevel => 6,
            EdgeSource::Level3 => 3,
        }
    }
}

/// Salient edge features `F_E` at stride 2.
pub type EdgeFeatures = FeatureMap;

#[derive(Clone, Debug)]
pub struct NlsemLayers {
    pub source: EdgeSource,
    pub propagate: ConvLayer,
    pub tower: Tower,
    pub transition: ConvLayer,
}

impl NlsemLayers {
    pub(crate) fn build<R: Rng>(
        factory: &mut LayerFactory<'_, R>,
        source: EdgeSource,
        c2_channels: usize,
        schedule: &TowerSchedule,
    ) -> Result<Self> {
        let from = source.level();
        let propagate = factory.conv(
            &format!("nlsem.up{from}to2"),
            ParamGroup::Propagation,
            Component::Nlsem,
            schedule.level(from).channels,
            c2_channels,
            1,
        )?;
        let spec = schedule.level(2);
        let tower = Tower::build(factory, "nlsem.tower2", ParamGroup::Tower, Component::Nlsem, c2_channels, spec)?;
        let transition = factory.conv("nlsem.trans2", ParamGroup::Transition, Component::Nlsem, spec.channels, 1, 3)?;
        Ok(Self {
            source,
            propagate,
            tower,
            transition,
        })
    }
}

pub fn location_propagate_node(
    g: &mut Graph,
    store: &ParamStore,
    c2: NodeId,
    upper: NodeId,
    hop: &ConvLayer,
) -> Result<NodeId> {
    let (_, h, w) = g.value(c2).chw();
    let addend = psfem::up_transform_node(g, store, upper, hop, h, w)?;
    g.add(c2, addend)
}

/// `C2 + Up(relu(Trans(upper)))`, same shape as `C2`.
pub fn location_propagate(
    c2: &FeatureMap,
    upper: &FeatureMap,
    hop: &ConvLayer,
    store: &ParamStore,
) -> Result<FeatureMap> {
    if hop.out_channels != c2.channels() || hop.in_channels != upper.channels() {
        return Err(Error::Config(format!(
            "propagation conv maps {} -> {} channels, features have {} and {}",
            hop.in_channels,
            hop.out_channels,
            upper.channels(),
            c2.channels()
        )));
    }
    let mut g = Graph::new();
    let c = g.input(c2.values.clone());
    let u = g.input(upper.values.clone());
    let out = location_propagate_node(&mut g, store, c, u, hop)?;
    Ok(FeatureMap::new(g.value(out).clone(), c2.stride))
}

/// Enhances the location-guided `C2` into the edge features `F_E`.
pub fn edge_features(c2_bar: &FeatureMap, tower: &Tower, store: &ParamStore) -> Result<EdgeFeatures> {
    psfem::enhance(c2_bar, tower, store)
}

/// Salient edge logit map and probabilities at `F_E`'s resolution.
pub fn edge_predict(edge: &EdgeFeatures, transition: &ConvLayer, store: &ParamStore) -> Result<Prediction> {
    psfem::side_predict(edge, transition, store)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::params::Init;
    use crate::tensor::Tensor;
    use crate::testutil::{bilinear_oracle, random_tensor};

    fn layers(init: Init) -> (NlsemLayers, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut factory = LayerFactory {
            store: &mut store,
            rng: &mut rng,
            init,
        };
        let l = NlsemLayers::build(&mut factory, EdgeSource::TopLevel, 4, &TowerSchedule::narrow(5)).unwrap();
        (l, store)
    }

    #[test]
    fn zero_theta_leaves_c2_unchanged() {
        let (l, mut store) = layers(Init::He);
        store.zero_groups(&[ParamGroup::Propagation]);
        let c2 = FeatureMap::new(random_tensor(&[4, 32, 32], 1, -1.0, 1.0), 2);
        let f6 = FeatureMap::new(random_tensor(&[5, 2, 2], 2, 0.0, 1.0), 32);
        assert_eq!(location_propagate(&c2, &f6, &l.propagate, &store).unwrap(), c2);
    }

    #[test]
    fn constant_top_feature_adds_a_constant() {
        let (l, mut store) = layers(Init::Zeros);
        let k = 0.75;
        store.set(l.propagate.bias, Tensor::full(&[4], k)).unwrap();
        let c2 = FeatureMap::new(random_tensor(&[4, 32, 32], 1, -1.0, 1.0), 2);
        let f6 = FeatureMap::new(Tensor::full(&[5, 2, 2], 3.0), 32);
        let out = location_propagate(&c2, &f6, &l.propagate, &store).unwrap();
        for (a, b) in out.values.data().iter().zip(c2.values.data()) {
            assert!((a - (b + k)).abs() < 1e-12);
        }
    }

    #[test]
    fn upsampled_addend_matches_bilinear_oracle() {
        let (l, mut store) = layers(Init::He);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        store.set(l.propagate.weight, Tensor::from_vec(&[4, 5, 1, 1], w).unwrap()).unwrap();
        let c2 = FeatureMap::new(Tensor::zeros(&[4, 64, 64]), 2);
        let upper = FeatureMap::new(random_tensor(&[5, 8, 8], 9, -1.0, 1.0), 16);
        let out = location_propagate(&c2, &upper, &l.propagate, &store).unwrap();

        // relu(1x1 conv) at low resolution, then the direct bilinear oracle
        let wt = store.value(l.propagate.weight).data();
        let mut low = Tensor::zeros(&[4, 8, 8]);
        for o in 0..4 {
            for p in 0..64 {
                let v: f64 = (0..5).map(|i| wt[o * 5 + i] * upper.values.data()[i * 64 + p]).sum();
                low.data_mut()[o * 64 + p] = v.max(0.0);
            }
        }
        let expected = bilinear_oracle(&low, 64, 64);
        for (a, b) in out.values.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_tower_and_zero_transition() {
        let (l, store) = layers(Init::Zeros);
        let c2 = FeatureMap::new(random_tensor(&[4, 16, 16], 3, -1.0, 1.0), 2);
        let fe = edge_features(&c2, &l.tower, &store).unwrap();
        assert_eq!(fe.values.shape(), &[5, 16, 16]);
        assert!(fe.values.data().iter().all(|&v| v == 0.0));
        let pred = edge_predict(&fe, &l.transition, &store).unwrap();
        assert!(pred.probs.data().iter().all(|&p| p == 0.5));
        assert_eq!(pred.stride, 2);
    }
}
