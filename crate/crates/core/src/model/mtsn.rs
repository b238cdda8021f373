use crate::autodiff::{Graph, Var};
use crate::data::Example;
use crate::error::Result;
use crate::layers::{
    BoundGru, BoundLinear, GruLayer, GruShape, GruTensors, LinearLayer, LinearShape, Parameter,
};
use crate::losses::{self, LossConfig};
use crate::seed::Rng;
use crate::tensor::Tensor;

use super::{check_example, take_named, BoundModel, ExampleLoss, Forward, IntentModel, ModelDims};

/// Transfer layer, GRU intent layer, and classifier.
///
/// The transferred sequence `e_TE` feeds both the GRU and, mean-pooled, the
/// distillation loss against the teacher embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct MtsnModel {
    pub transfer: LinearLayer,
    pub intent_gru: GruLayer,
    pub classifier: LinearLayer,
    pub loss: LossConfig,
    hidden: usize,
}

impl MtsnModel {
    pub const KIND: &'static str = "mtsn";

    pub fn init(dims: ModelDims, loss: LossConfig, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        loss.validate()?;
        let transfer = LinearLayer::init(
            "transfer",
            LinearShape {
                input: dims.acoustic,
                output: dims.teacher,
            },
            rng,
        );
        let intent_gru = GruLayer::init(
            "intent_gru",
            GruShape {
                input: dims.teacher,
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
        Ok(MtsnModel {
            transfer,
            intent_gru,
            classifier,
            loss,
            hidden: dims.hidden,
        })
    }

    /// Assembles a model from layers, checking the dimension chain.
    pub fn from_layers(
        transfer: LinearLayer,
        intent_gru: GruLayer,
        classifier: LinearLayer,
        loss: LossConfig,
    ) -> Result<Self> {
        loss.validate()?;
        let (t, g, c) = (transfer.shape(), intent_gru.shape(), classifier.shape());
        if t.output != g.input {
            return Err(crate::Error::dim("mtsn", &[t.output], &[g.input]));
        }
        if g.hidden != c.input {
            return Err(crate::Error::dim("mtsn", &[g.hidden], &[c.input]));
        }
        let model = MtsnModel {
            transfer,
            intent_gru,
            classifier,
            loss,
            hidden: g.hidden,
        };
        model.dims().validate()?;
        Ok(model)
    }

    pub(super) fn from_named(
        dims: ModelDims,
        loss: LossConfig,
        mut params: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let transfer = LinearLayer::new(
            "transfer",
            take_named(&mut params, "transfer.weight")?,
            take_named(&mut params, "transfer.bias")?,
        )?;
        let intent_gru = GruLayer::from_tensors("intent_gru", gru_tensors(&mut params, "intent_gru")?)?;
        let classifier = LinearLayer::new(
            "classifier",
            take_named(&mut params, "classifier.weight")?,
            take_named(&mut params, "classifier.bias")?,
        )?;
        if let Some((name, _)) = params.first() {
            return Err(crate::Error::Contract(format!("unexpected parameter `{name}`")));
        }
        let model = MtsnModel::from_layers(transfer, intent_gru, classifier, loss)?;
        if model.dims() != dims {
            return Err(crate::Error::Contract(format!(
                "parameters give {:?}, header declares {dims:?}",
                model.dims()
            )));
        }
        Ok(model)
    }
}

pub(super) fn gru_tensors(params: &mut Vec<(String, Tensor)>, prefix: &str) -> Result<GruTensors> {
    let mut t = |n: &str| take_named(params, &format!("{prefix}.{n}"));
    Ok(GruTensors {
        w_r: t("w_r")?,
        w_z: t("w_z")?,
        w_n: t("w_n")?,
        u_r: t("u_r")?,
        u_z: t("u_z")?,
        u_n: t("u_n")?,
        b_r: t("b_r")?,
        b_z: t("b_z")?,
        b_n: t("b_n")?,
        c_n: t("c_n")?,
    })
}

struct BoundMtsn {
    leaves: Vec<Var>,
    transfer: BoundLinear,
    gru: BoundGru,
    classifier: BoundLinear,
}

impl BoundModel for BoundMtsn {
    fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    fn forward(&self, g: &mut Graph, acoustic: &Tensor) -> Result<Forward> {
        let x = g.constant(acoustic.clone());
        let e_te = self.transfer.forward(g, x)?;
        let pooled_te = g.mean_over_time(e_te)?;
        let hidden = self.gru.sequence(g, e_te, None)?;
        let pooled = g.max_over_time(hidden)?;
        let logits = self.classifier.forward(g, pooled)?;
        Ok(Forward {
            logits,
            transferred: Some(pooled_te),
        })
    }
}

impl IntentModel for MtsnModel {
    fn kind(&self) -> &'static str {
        Self::KIND
    }

    fn dims(&self) -> ModelDims {
        let t = self.transfer.shape();
        ModelDims {
            acoustic: t.input,
            teacher: t.output,
            hidden: self.hidden,
            classes: self.classifier.shape().output,
        }
    }

    fn loss_config(&self) -> LossConfig {
        self.loss
    }

    fn parameters(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.transfer.parameters().into();
        out.extend(self.intent_gru.parameters());
        out.extend(self.classifier.parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.transfer.parameters_mut().into();
        out.extend(self.intent_gru.parameters_mut());
        out.extend(self.classifier.parameters_mut());
        out
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Box<dyn BoundModel>> {
        let (tl, transfer) = self.transfer.bind(g, trainable)?;
        let (gl, gru) = self.intent_gru.bind(g, trainable)?;
        let (cl, classifier) = self.classifier.bind(g, trainable)?;
        let leaves = tl.into_iter().chain(gl).chain(cl).collect();
        Ok(Box::new(BoundMtsn {
            leaves,
            transfer,
            gru,
            classifier,
        }))
    }

    fn objective(&self, g: &mut Graph, fwd: &Forward, example: &Example) -> Result<ExampleLoss> {
        check_example(&self.dims(), example, true)?;
        let transferred = fwd
            .transferred
            .ok_or_else(|| crate::Error::Contract("MTSN forward lacks E_TE".into()))?;
        let intent = losses::cross_entropy(g, fwd.logits, example.intent)?;
        let tl = losses::distillation_kl(g, transferred, &example.teacher, self.loss.temperature)?;
        let total = losses::total_loss(g, tl, intent, &self.loss)?;
        Ok(ExampleLoss {
            total,
            distillation: Some(tl),
            intent,
        })
    }

    fn clone_box(&self) -> Box<dyn IntentModel> {
        Box::new(self.clone())
    }
}
