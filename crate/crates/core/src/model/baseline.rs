use crate::autodiff::{Graph, Var};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::layers::{BoundGru, BoundLinear, GruLayer, GruShape, LinearLayer, LinearShape, Parameter};
use crate::losses::{self, LossConfig};
use crate::seed::Rng;
use crate::tensor::Tensor;

use super::mtsn::gru_tensors;
use super::{check_example, take_named, BoundModel, ExampleLoss, Forward, IntentModel, ModelDims};

/// GRU intent layer straight on acoustic frames, trained on cross-entropy
/// only. `teacher` in its dims is carried for corpus compatibility and is
/// never read.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline2Model {
    pub intent_gru: GruLayer,
    pub classifier: LinearLayer,
    teacher_dim: usize,
}

impl Baseline2Model {
    pub const KIND: &'static str = "baseline2";

    pub fn init(dims: ModelDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let intent_gru = GruLayer::init(
            "intent_gru",
            GruShape {
                input: dims.acoustic,
                hidden: dims.hidden,
            },
            rng,
        );
        let classifier = LinearLayer::init(
            "classifier",
            LinearShape {
                input: dims.hidden,
                output: dims.classes,
            },
            rng,
        );
        Ok(Baseline2Model {
            intent_gru,
            classifier,
            teacher_dim: dims.teacher,
        })
    }

    pub fn from_layers(intent_gru: GruLayer, classifier: LinearLayer, teacher_dim: usize) -> Result<Self> {
        let (g, c) = (intent_gru.shape(), classifier.shape());
        if g.hidden != c.input {
            return Err(Error::dim("baseline2", &[g.hidden], &[c.input]));
        }
        let model = Baseline2Model {
            intent_gru,
            classifier,
            teacher_dim,
        };
        model.dims().validate()?;
        Ok(model)
    }

    pub(super) fn from_named(dims: ModelDims, mut params: Vec<(String, Tensor)>) -> Result<Self> {
        let intent_gru = GruLayer::from_tensors("intent_gru", gru_tensors(&mut params, "intent_gru")?)?;
        let classifier = LinearLayer::new(
            "classifier",
            take_named(&mut params, "classifier.weight")?,
            take_named(&mut params, "classifier.bias")?,
        )?;
        if let Some((name, _)) = params.first() {
            return Err(Error::Contract(format!("unexpected parameter `{name}`")));
        }
        let model = Baseline2Model::from_layers(intent_gru, classifier, dims.teacher)?;
        if model.dims() != dims {
            return Err(Error::Contract(format!(
                "parameters give {:?}, header declares {dims:?}",
                model.dims()
            )));
        }
        Ok(model)
    }
}

struct BoundBaseline {
    leaves: Vec<Var>,
    gru: BoundGru,
    classifier: BoundLinear,
}

impl BoundModel for BoundBaseline {
    fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn forward(&self, g: &mut Graph, acoustic: &Tensor) -> Result<Forward> {
        let x = g.constant(acoustic.clone());
        let hidden = self.gru.sequence(g, x, None)?;
        let pooled = g.max_over_time(hidden)?;
        let logits = self.classifier.forward(g, pooled)?;
        Ok(Forward {
            logits,
            transferred: None,
        })
    }
}

impl IntentModel for Baseline2Model {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn dims(&self) -> ModelDims {
        let g = self.intent_gru.shape();
        ModelDims {
            acoustic: g.input,
            teacher: self.teacher_dim,
            hidden: g.hidden,
            classes: self.classifier.shape().output,
        }
    }

    /// Intent loss only.
    fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: 0.0,
            temperature: 1.0,
        }
    }

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.intent_gru.parameters().into();
        out.extend(self.classifier.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.intent_gru.parameters_mut().into();
        out.extend(self.classifier.parameters_mut());
        out
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Box<dyn BoundModel>> {
        let (gl, gru) = self.intent_gru.bind(g, trainable)?;
        let (cl, classifier) = self.classifier.bind(g, trainable)?;
        Ok(Box::new(BoundBaseline {
            leaves: gl.into_iter().chain(cl).collect(),
            gru,
            classifier,
        }))
    }

    fn objective(&self, g: &mut Graph, fwd: &Forward, example: &Example) -> Result<ExampleLoss> {
        check_example(&self.dims(), example, false)?;
        let intent = losses::cross_entropy(g, fwd.logits, example.intent)?;
        Ok(ExampleLoss {
            total: intent,
            distillation: None,
            intent,
        })
    }

    fn clone_box(&self) -> Box<dyn IntentModel> {
        Box::new(self.clone())
    }
}
