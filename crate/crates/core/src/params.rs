//! Named learnable parameters and their initialization.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Backbone,
    /// Enhancement towers `T` on the side paths (and the edge path).
    Tower,
    /// Enhancement towers `T'` on the guided sub-side paths.
    SubTower,
    /// Transition layers `D` mapping features to a logit map.
    Transition,
    /// Transition layers `D'` on the sub-side paths.
    SubTransition,
    /// Channel-matching convolutions used by every top-down hop.
    Propagation,
    /// Fusion weights of the sub-side logit maps.
    Fusion,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Backbone,
        ParamGroup::Tower,
        ParamGroup::SubTower,
        ParamGroup::Transition,
        ParamGroup::SubTransition,
        ParamGroup::Propagation,
        ParamGroup::Fusion,
    ];
}

/// The architectural component that owns a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    Backbone,
    Psfem,
    Nlsem,
    O2ogm,
}

impl Component {
    pub fn prefix(self) -> &'static str {
        match self {
            Component::Backbone => "backbone",
            Component::Psfem => "psfem",
            Component::Nlsem => "nlsem",
            Component::O2ogm => "o2ogm",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Weight initialization scheme.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Init {
    /// Truncated normal (cut at two standard deviations) with the given
    /// standard deviation for every newly added layer; He-normal for the
    /// backbone, which has no pretrained weights to start from.
    TruncatedNormal { std: f64 },
    /// He-normal (`std = sqrt(2 / fan_in)`) everywhere.
    He,
    /// All weights zero.
    Zeros,
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    group: ParamGroup,
    component: Component,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        component: Component,
        value: Tensor,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            group,
            component,
            value,
        });
        Ok(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn component(&self, id: ParamId) -> Component {
        self.entries[id.0].component
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Number of scalar weights owned by `component`.
    pub fn numel_in(&self, component: Component) -> usize {
        self.entries
            .iter()
            .filter(|e| e.component == component)
            .map(|e| e.value.numel())
            .sum()
    }

    /// Zero tensors shaped like every parameter, in id order.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| Tensor::zeros(e.value.shape())).collect()
    }

    /// Sets every weight whose group is in `groups` to zero.
    pub fn zero_groups(&mut self, groups: &[ParamGroup]) {
        for e in &mut self.entries {
            if groups.contains(&e.group) {
                e.value.scale_assign(0.0);
            }
        }
    }
}

/// Convolution weights `[out, in, k, k]` plus bias `[out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

fn sample_normal<R: Rng + ?Sized>(rng: &mut R, std: f64, truncate: bool) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    loop {
        let v: f64 = normal.sample(rng);
        if !truncate || v.abs() <= 2.0 * std {
            return v;
        }
    }
}

pub(crate) struct LayerFactory<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub init: Init,
}

impl<R: Rng> LayerFactory<'_, R> {
    pub fn conv(
        &mut self,
        name: &str,
        group: ParamGroup,
        component: Component,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Result<ConvLayer> {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let (std, truncate) = match (self.init, group) {
            (Init::Zeros, _) => (0.0, false),
            (Init::He, _) | (Init::TruncatedNormal { .. }, ParamGroup::Backbone) => {
                ((2.0 / fan_in).sqrt(), false)
            }
            (Init::TruncatedNormal { std }, _) => (std, true),
        };
        let n = out_channels * in_channels * kernel * kernel;
        let data = (0..n).map(|_| sample_normal(self.rng, std, truncate)).collect();
        let weight = Tensor::from_vec(&[out_channels, in_channels, kernel, kernel], data)?;
        let weight = self.store.add(format!("{name}.weight"), group, component, weight)?;
        let bias = self.store.add(
            format!("{name}.bias"),
            group,
            component,
            Tensor::zeros(&[out_channels]),
        )?;
        Ok(ConvLayer {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn scalar(&mut self, name: &str, group: ParamGroup, component: Component, value: f64) -> Result<ParamId> {
        self.store.add(name, group, component, Tensor::scalar(value))
    }
}
