use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, Dataset, Example};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{self, Checkpoint, FrameworkRegistry, IntentModel, ModelDims, StepLosses, TrainingMeta};
use crate::optim::{AdamConfig, AdamState};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            alpha: 0.5,
            temperature: 1.0,
            hidden: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Spec("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Spec("batch_size must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Spec("hidden must be at least 1".into()));
        }
        self.loss().map_err(|e| Error::Spec(e.to_string()))?;
        AdamConfig::with_lr(self.lr)
            .validate()
            .map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn loss(&self) -> Result<LossConfig> {
        LossConfig::new(self.alpha, self.temperature)
    }

    pub fn dims_for(&self, dataset: &Dataset) -> ModelDims {
        let m = dataset.meta();
        ModelDims {
            acoustic: m.acoustic_dim,
            teacher: m.teacher_dim,
            hidden: self.hidden,
            classes: m.classes,
        }
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        seed::config_hash(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Example-weighted means over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub total: f64,
    pub distillation: f64,
    pub intent: f64,
}

/// A model with its optimizer, advanced one epoch at a time.
pub struct Trainer {
    model: Box<dyn IntentModel>,
    optimizer: AdamState,
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochLosses>,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(
        registry: &FrameworkRegistry,
        framework: &str,
        dims: ModelDims,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(config.seed, "init");
        let model = registry.build(framework, dims, config.loss()?, &mut rng)?;
        Ok(Trainer {
            model,
            optimizer: AdamState::new(AdamConfig::with_lr(config.lr))?,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Continues from a checkpoint; later epochs use the same data order an
    /// uninterrupted run would have used.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if checkpoint.meta.seed != config.seed {
            return Err(Error::Spec(format!(
                "checkpoint seed {} differs from configured seed {}",
                checkpoint.meta.seed, config.seed
            )));
        }
        Ok(Trainer {
            model: checkpoint.model,
            optimizer: checkpoint.optimizer,
            config,
            epoch: checkpoint.meta.epoch,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &dyn IntentModel {
        self.model.as_ref()
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochLosses] {
        &self.history
    }

    pub fn meta(&self) -> TrainingMeta {
        TrainingMeta {
            epoch: self.epoch,
            seed: self.config.seed,
            config_hash: self.config.hash(),
        }
    }

    pub fn into_parts(self) -> (Box<dyn IntentModel>, AdamState, Vec<EpochLosses>) {
        (self.model, self.optimizer, self.history)
    }

    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochLosses> {
        if dataset.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        let examples = dataset.examples();
        let shuffle = seed::derive(self.config.seed, "shuffle");
        let batches = epoch_batches(examples.len(), self.config.batch_size, shuffle, self.epoch);
        let mut sums = StepLosses::default();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let diverged = |detail: String| Error::Divergence {
                epoch: self.epoch,
                batch: b,
                detail,
            };
            let step = match model::train_step(self.model.as_mut(), &batch, &mut self.optimizer) {
                Ok(s) => s,
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            if !(step.total.is_finite() && step.intent.is_finite() && step.distillation.is_finite()) {
                return Err(diverged(format!("loss {step:?}")));
            }
            let n = batch.len() as f64;
            sums.total += step.total * n;
            sums.distillation += step.distillation * n;
            sums.intent += step.intent * n;
        }
        let n = examples.len() as f64;
        let losses = EpochLosses {
            epoch: self.epoch,
            total: sums.total / n,
            distillation: sums.distillation / n,
            intent: sums.intent / n,
        };
        debug!(
            "epoch {} total {:.5} tl {:.5} intent {:.5}",
            losses.epoch, losses.total, losses.distillation, losses.intent
        );
        self.epoch += 1;
        self.history.push(losses);
        Ok(losses)
    }

    /// Runs epochs until `config.epochs` have completed.
    pub fn run(&mut self, dataset: &Dataset) -> Result<&[EpochLosses]> {
        while self.epoch < self.config.epochs {
            self.run_epoch(dataset)?;
        }
        Ok(&self.history)
    }
}

/// A trained model and its loss curve.
pub struct TrainOutcome {
    pub model: Box<dyn IntentModel>,
    pub optimizer: AdamState,
    pub history: Vec<EpochLosses>,
    /// The model as initialized, before any update.
    pub initial: Box<dyn IntentModel>,
}

pub fn train(
    registry: &FrameworkRegistry,
    framework: &str,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(registry, framework, config.dims_for(dataset), config.clone())?;
    let initial = trainer.model().clone_box();
    trainer.run(dataset)?;
    let (model, optimizer, history) = trainer.into_parts();
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
        initial,
    })
}
