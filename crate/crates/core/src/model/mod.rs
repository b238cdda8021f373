//! The systems under test, behind one trait.
//!
//! Every framework implements [`IntentModel`] and is registered by name in a
//! [`FrameworkRegistry`]; training, evaluation, checkpoint loading, and the
//! CLI select frameworks through the registry at runtime.

mod baseline;
pub mod checkpoint;
mod mtsn;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::losses::{self, LossConfig};
use crate::optim::AdamState;
use crate::seed::Rng;
use crate::tensor::Tensor;

pub use baseline::Baseline2Model;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
pub use mtsn::MtsnModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub acoustic: usize,
    pub teacher: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.acoustic == 0 || self.teacher == 0 || self.hidden == 0 {
            return Err(Error::Contract(format!("zero dimension in {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::Contract(format!("{} classes; need at least 2", self.classes)));
        }
        Ok(())
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub logits: Var,
    /// Mean-pooled transferred embedding, for models with a transfer layer.
    pub transferred: Option<Var>,
}

/// Per-example loss nodes.
#[derive(Clone, Copy, Debug)]
pub struct ExampleLoss {
    pub total: Var,
    pub distillation: Option<Var>,
    pub intent: Var,
}

/// Parameters registered in a graph, ready for forward passes.
pub trait BoundModel {
    /// Leaf handles in [`IntentModel::parameters`] order.
    fn leaves(&self) -> &[Var];
    fn forward(&self, g: &mut Graph, acoustic: &Tensor) -> Result<Forward>;
}

/// Forward results copied out of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub logits: Tensor,
    pub transferred: Option<Tensor>,
}

pub trait IntentModel: Send + Sync {
    /// Registry name.
    fn kind(&self) -> &'static str;
    fn dims(&self) -> ModelDims;
    fn loss_config(&self) -> LossConfig;
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
    fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Box<dyn BoundModel>>;
    /// Builds this model's training objective for one example.
    fn objective(&self, g: &mut Graph, fwd: &Forward, example: &Example) -> Result<ExampleLoss>;
    fn clone_box(&self) -> Box<dyn IntentModel>;

    /// Forward passes without gradient tracking.
    fn infer(&self, inputs: &[&Tensor]) -> Result<Vec<Inference>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false)?;
        inputs
            .iter()
            .map(|x| {
                let f = bound.forward(&mut g, x)?;
                Ok(Inference {
                    logits: g.value(f.logits).clone(),
                    transferred: f.transferred.map(|t| g.value(t).clone()),
                })
            })
            .collect()
    }

    /// Argmax intent per input; ties go to the smallest class index.
    fn predict(&self, inputs: &[&Tensor]) -> Result<Vec<usize>> {
        Ok(self
            .infer(inputs)?
            .iter()
            .map(|inf| argmax(inf.logits.data()))
            .collect())
    }

    /// Snapshot of all parameter values in order.
    fn parameter_values(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| p.value.clone()).collect()
    }
}

impl Clone for Box<dyn IntentModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean loss values from one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub distillation: f64,
    pub intent: f64,
}

/// Forward and backward over a batch. Returns the batch-mean losses and one
/// gradient per parameter, in parameter order.
pub fn batch_gradients(
    model: &dyn IntentModel,
    batch: &[&Example],
) -> Result<(StepLosses, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true)?;
    let mut totals = Vec::with_capacity(batch.len());
    let mut sums = StepLosses::default();
    for ex in batch {
        let fwd = bound.forward(&mut g, &ex.acoustic)?;
        let loss = model.objective(&mut g, &fwd, ex)?;
        sums.total += g.value(loss.total).item();
        sums.intent += g.value(loss.intent).item();
        if let Some(d) = loss.distillation {
            sums.distillation += g.value(d).item();
        }
        totals.push(loss.total);
    }
    let root = losses::batch_loss(&mut g, &totals)?;
    let grads = g.backward(root)?;
    let n = batch.len() as f64;
    let mean = StepLosses {
        total: g.value(root).item(),
        distillation: sums.distillation / n,
        intent: sums.intent / n,
    };
    let grads = bound
        .leaves()
        .iter()
        .map(|&leaf| grads.get_or_zeros(&g, leaf))
        .collect();
    Ok((mean, grads))
}

/// Batch-mean objective value without building gradients.
pub fn batch_objective(model: &dyn IntentModel, batch: &[&Example]) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false)?;
    let mut totals = Vec::with_capacity(batch.len());
    for ex in batch {
        let fwd = bound.forward(&mut g, &ex.acoustic)?;
        totals.push(model.objective(&mut g, &fwd, ex)?.total);
    }
    let root = losses::batch_loss(&mut g, &totals)?;
    Ok(g.value(root).item())
}

/// One forward/backward/Adam update on the batch-mean loss.
pub fn train_step(
    model: &mut dyn IntentModel,
    batch: &[&Example],
    adam: &mut AdamState,
) -> Result<StepLosses> {
    let (losses, grads) = batch_gradients(model, batch)?;
    let mut params = model.parameters_mut();
    for (p, g) in params.iter_mut().zip(grads) {
        p.grad = Some(g);
    }
    adam.step(&mut params)?;
    Ok(losses)
}

pub(crate) fn check_example(dims: &ModelDims, ex: &Example, uses_teacher: bool) -> Result<()> {
    if ex.acoustic.cols() != dims.acoustic {
        return Err(Error::dim("forward", ex.acoustic.shape(), &[0, dims.acoustic]));
    }
    if uses_teacher && ex.teacher.shape() != [dims.teacher] {
        return Err(Error::dim("forward", ex.teacher.shape(), &[dims.teacher]));
    }
    if ex.intent >= dims.classes {
        return Err(Error::Label {
            label: ex.intent,
            classes: dims.classes,
        });
    }
    Ok(())
}

type BuildFn = fn(ModelDims, LossConfig, &mut Rng) -> Result<Box<dyn IntentModel>>;
type RestoreFn = fn(ModelDims, LossConfig, Vec<(String, Tensor)>) -> Result<Box<dyn IntentModel>>;

/// A registered framework.
#[derive(Clone, Copy)]
pub struct Framework {
    pub name: &'static str,
    /// Row label used in reports.
    pub display: &'static str,
    /// Whether the framework has a transfer layer (and so an E_TE).
    pub transfers: bool,
    pub build: BuildFn,
    pub restore: RestoreFn,
}

impl std::fmt::Debug for Framework {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Framework").field("name", &self.name).finish()
    }
}

#[derive(Clone, Debug)]
pub struct FrameworkRegistry {
    entries: BTreeMap<&'static str, Framework>,
}

impl Default for FrameworkRegistry {
    fn default() -> Self {
        let mut r = FrameworkRegistry {
            entries: BTreeMap::new(),
        };
        r.register(Framework {
            name: MtsnModel::KIND,
            display: "Proposed MTSN",
            transfers: true,
            build: |dims, loss, rng| Ok(Box::new(MtsnModel::init(dims, loss, rng)?)),
            restore: |dims, loss, params| Ok(Box::new(MtsnModel::from_named(dims, loss, params)?)),
        });
        r.register(Framework {
            name: Baseline2Model::KIND,
            display: "Baseline-2",
            transfers: false,
            build: |dims, _, rng| Ok(Box::new(Baseline2Model::init(dims, rng)?)),
            restore: |dims, _, params| Ok(Box::new(Baseline2Model::from_named(dims, params)?)),
        });
        r
    }
}

impl FrameworkRegistry {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Adds or replaces a framework.
    pub fn register(&mut self, framework: Framework) {
        self.entries.insert(framework.name, framework);
    }

    pub fn get(&self, name: &str) -> Result<&Framework> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownFramework(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(
        &self,
        name: &str,
        dims: ModelDims,
        loss: LossConfig,
        rng: &mut Rng,
    ) -> Result<Box<dyn IntentModel>> {
        (self.get(name)?.build)(dims, loss, rng)
    }
}

/// Pulls the tensor for `name` out of a named list.
pub(crate) fn take_named(params: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let pos = params
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
    Ok(params.remove(pos).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax(&[-1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn registry_knows_both_frameworks() {
        let r = FrameworkRegistry::builtin();
        assert_eq!(r.names(), vec!["baseline2", "mtsn"]);
        assert!(r.get("mtsn").unwrap().transfers);
        assert!(matches!(r.get("bert"), Err(Error::UnknownFramework(_))));
    }
}
