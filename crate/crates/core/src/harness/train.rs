//! Training loop: single-image passes, gradient accumulation, momentum SGD
//! or Adam with weight decay, stepped learning rate and a divergence guard.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GroundTruth, Sample};
use crate::error::{Error, Result};
use crate::losses::LossReport;
use crate::model::Model;
use crate::tensor::Tensor;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, OptimizerKind};

/// Optimizer and data-stream position; parameters live in the model.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Optimizer updates taken so far.
    pub step: usize,
    /// Current epoch, 0-based.
    pub epoch: usize,
    /// Images of the current epoch already consumed.
    pub cursor: usize,
    /// Images summed into `grad_acc` since the last update.
    pub accumulated: usize,
    pub grad_acc: Vec<Tensor>,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub moment1: Vec<Tensor>,
    /// Second moment (Adam only, zeros for SGD).
    pub moment2: Vec<Tensor>,
    /// Loss reports of the images in `grad_acc`.
    pub pending: Vec<LossReport>,
}

impl TrainState {
    pub fn new(model: &Model) -> Self {
        let zeros = model.params().zeros_like();
        Self {
            step: 0,
            epoch: 0,
            cursor: 0,
            accumulated: 0,
            grad_acc: zeros.clone(),
            moment1: zeros.clone(),
            moment2: zeros,
            pending: Vec::new(),
        }
    }
}

/// One row of the training log, written per optimizer update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    /// 1-based update index.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub images: usize,
    /// Mean over the accumulated images, evaluated before the update.
    pub loss: LossReport,
}

impl UpdateLog {
    pub const CSV_PREFIX: [&'static str; 4] = ["step", "epoch", "lr", "images"];
}

/// Writes the log with columns `step,epoch,lr,images` followed by
/// [`LossReport::CSV_COLUMNS`].
pub fn write_log_csv(path: &Path, log: &[UpdateLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = UpdateLog::CSV_PREFIX.iter().chain(LossReport::CSV_COLUMNS.iter()).copied().collect();
    w.write_record(&header)?;
    for row in log {
        let mut record = vec![row.step.to_string(), row.epoch.to_string(), format!("{:e}", row.lr), row.images.to_string()];
        record.extend(row.loss.csv_values().iter().map(|v| format!("{v:.17e}")));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct Trainer {
    config: ExperimentConfig,
    model: Model,
    state: TrainState,
    samples: Vec<Sample>,
    truths: Vec<GroundTruth>,
}

impl Trainer {
    /// Fresh model initialised from `config.seed`.
    pub fn new(config: ExperimentConfig, samples: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let state = TrainState::new(&model);
        Self::assemble(config, model, state, samples)
    }

    pub fn from_checkpoint(checkpoint: Checkpoint, samples: Vec<Sample>) -> Result<Self> {
        let (config, model, state) = checkpoint.into_parts()?;
        Self::assemble(config, model, state, samples)
    }

    fn assemble(config: ExperimentConfig, model: Model, state: TrainState, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("training split"));
        }
        for s in &samples {
            config.model.backbone.check_input(&s.image)?;
        }
        let truths = samples.iter().map(GroundTruth::new).collect();
        Ok(Self {
            config,
            model,
            state,
            samples,
            truths,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Changes the epoch budget, e.g. to extend a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.model, &self.state)
    }

    /// Sample order of `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Processes one image; returns the log row when it completes an update.
    pub fn step_image(&mut self) -> Result<Option<UpdateLog>> {
        let index = self.epoch_order(self.state.epoch)[self.state.cursor];
        let (report, grads) = self.model.loss_and_gradients(&self.samples[index].image, &self.truths[index])?;
        if !report.grand_total().is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Divergence {
                step: self.state.step + 1,
                last_finite: (self.state.step > 0).then_some(self.state.step),
            });
        }
        for (acc, g) in self.state.grad_acc.iter_mut().zip(&grads) {
            acc.add_assign(g);
        }
        self.state.accumulated += 1;
        self.state.pending.push(report);

        let epoch = self.state.epoch;
        self.state.cursor += 1;
        if self.state.cursor == self.samples.len() {
            self.state.cursor = 0;
            self.state.epoch += 1;
        }

        if self.state.accumulated < self.config.optimizer.accumulate {
            return Ok(None);
        }
        let lr = self.config.optimizer.lr_at(epoch);
        self.apply_update(lr);
        let log = UpdateLog {
            step: self.state.step,
            epoch,
            lr,
            images: self.state.pending.len(),
            loss: LossReport::mean(&self.state.pending),
        };
        self.state.pending.clear();
        Ok(Some(log))
    }

    fn apply_update(&mut self, lr: f64) {
        let opt = &self.config.optimizer;
        let n = self.state.accumulated as f64;
        self.state.step += 1;
        let t = self.state.step as i32;
        let ids: Vec<_> = self.model.params().ids().collect();
        for id in ids {
            let i = id.index();
            let grad = &mut self.state.grad_acc[i];
            let weights = self.model.params_mut().value_mut(id);
            let m1 = self.state.moment1[i].data_mut();
            let m2 = self.state.moment2[i].data_mut();
            for (k, (w, g)) in weights.data_mut().iter_mut().zip(grad.data_mut()).enumerate() {
                let d = *g / n + opt.weight_decay * *w;
                match opt.kind {
                    OptimizerKind::Sgd => {
                        m1[k] = opt.momentum * m1[k] + d;
                        *w -= lr * m1[k];
                    }
                    OptimizerKind::Adam => {
                        m1[k] = opt.momentum * m1[k] + (1.0 - opt.momentum) * d;
                        m2[k] = opt.beta2 * m2[k] + (1.0 - opt.beta2) * d * d;
                        let m_hat = m1[k] / (1.0 - opt.momentum.powi(t));
                        let v_hat = m2[k] / (1.0 - opt.beta2.powi(t));
                        *w -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
                    }
                }
                *g = 0.0;
            }
        }
        self.state.accumulated = 0;
    }

    /// Runs until `n` more updates have been taken.
    pub fn run_updates(&mut self, n: usize) -> Result<Vec<UpdateLog>> {
        let mut log = Vec::with_capacity(n);
        while log.len() < n {
            if let Some(row) = self.step_image()? {
                log.push(row);
            }
        }
        Ok(log)
    }

    /// Runs until `epochs` epochs have been completed in total.
    pub fn run_until_epoch(&mut self, epochs: usize) -> Result<Vec<UpdateLog>> {
        let mut log = Vec::new();
        while self.state.epoch < epochs {
            if let Some(row) = self.step_image()? {
                log.push(row);
            }
        }
        Ok(log)
    }

    /// Runs the configured number of epochs.
    pub fn run(&mut self) -> Result<Vec<UpdateLog>> {
        self.run_until_epoch(self.config.epochs)
    }
}

/// Materialises the training split and trains for the configured epochs.
pub fn train(config: &ExperimentConfig) -> Result<(Trainer, Vec<UpdateLog>)> {
    let samples = config.data.train.materialize()?;
    let mut trainer = Trainer::new(config.clone(), samples)?;
    let log = trainer.run()?;
    Ok((trainer, log))
}
