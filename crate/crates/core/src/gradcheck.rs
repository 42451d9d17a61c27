//! Finite-difference verification of the analytic gradients of the total
//! loss with respect to individual parameter entries.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::GroundTruth;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParamGroup, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Number of sampled parameter entries.
    pub samples: usize,
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error. Entries with a zero
    /// analytic gradient (dead units) otherwise compare pure roundoff.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 50,
            step: 1e-6,
            floor: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub group: ParamGroup,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn groups(&self) -> BTreeSet<ParamGroup> {
        self.entries.iter().map(|e| e.group).collect()
    }
}

/// Picks `n` entries, first one per parameter group present in the model,
/// then uniformly over parameter tensors.
fn sample_entries(model: &Model, n: usize, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize)> {
    let store = model.params();
    let ids: Vec<ParamId> = store.ids().collect();
    let mut picks = Vec::with_capacity(n);
    for group in ParamGroup::ALL {
        let members: Vec<ParamId> = ids.iter().copied().filter(|&id| store.group(id) == group).collect();
        if let Some(&id) = members.choose(rng) {
            picks.push(id);
        }
    }
    while picks.len() < n {
        picks.push(*ids.choose(rng).expect("model has parameters"));
    }
    picks.truncate(n);
    picks
        .into_iter()
        .map(|id| (id, rng.random_range(0..store.value(id).numel())))
        .collect()
}

/// Compares analytic gradients of the total loss against fourth-order
/// central differences `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h`.
/// The relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn check_gradients(
    model: &mut Model,
    image: &Tensor,
    gt: &GroundTruth,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if config.samples == 0 || !(config.step > 0.0) {
        return Err(Error::Config("gradient check needs samples > 0 and step > 0".into()));
    }
    let (_, grads) = model.loss_and_gradients(image, gt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = sample_entries(model, config.samples, &mut rng);
    let h = config.step;

    let mut entries = Vec::with_capacity(picks.len());
    for (id, index) in picks {
        let original = model.params().value(id).data()[index];
        let at = |offset: f64, model: &mut Model| -> Result<f64> {
            model.params_mut().value_mut(id).data_mut()[index] = original + offset;
            Ok(model.loss(image, gt)?.grand_total())
        };
        let (p2, p1, m1, m2) = (at(2.0 * h, model)?, at(h, model)?, at(-h, model)?, at(-2.0 * h, model)?);
        model.params_mut().value_mut(id).data_mut()[index] = original;

        let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
        let analytic = grads[id.index()].data()[index];
        let denom = analytic.abs().max(numeric.abs()).max(config.floor);
        entries.push(GradCheckEntry {
            name: model.params().name(id).to_string(),
            group: model.params().group(id),
            index,
            analytic,
            numeric,
            rel_error: (analytic - numeric).abs() / denom,
        });
    }
    Ok(GradCheckReport { entries })
}
