//! Straight-line reference implementations used as test oracles, written
//! without the tape so they share no code with the library's forward pass.
#![allow(dead_code)]

use mtsn::data::{CorpusSpec, Dataset, Example};
use mtsn::layers::{GruLayer, LinearLayer, Parameter};
use mtsn::losses::{cross_entropy, LossConfig};
use mtsn::model::{
    BoundModel, ExampleLoss, Forward, Framework, FrameworkRegistry, IntentModel, ModelDims, MtsnModel,
};
use mtsn::{Error, Graph, Result, Tensor};

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W x + b` with `W` stored `[out, in]`.
pub fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.rows(), w.cols());
    assert_eq!(x.len(), inp);
    (0..out)
        .map(|i| {
            let mut s = b.data()[i];
            for j in 0..inp {
                s += w.data()[i * inp + j] * x[j];
            }
            s
        })
        .collect()
}

pub fn linear(layer: &LinearLayer, x: &[f64]) -> Vec<f64> {
    let [w, b] = layer.parameters();
    affine(&w.value, &b.value, x)
}

fn matvec(m: &Parameter, x: &[f64]) -> Vec<f64> {
    let zero = Tensor::zeros(&[m.value.rows()]);
    affine(&m.value, &zero, x)
}

pub fn gru_step(g: &GruLayer, x: &[f64], h: &[f64]) -> Vec<f64> {
    let add = |a: Vec<f64>, b: Vec<f64>, c: &Parameter| -> Vec<f64> {
        a.iter().zip(&b).zip(c.value.data()).map(|((x, y), z)| x + y + z).collect()
    };
    let r: Vec<f64> = add(matvec(&g.w_r, x), matvec(&g.u_r, h), &g.b_r).into_iter().map(sigmoid).collect();
    let z: Vec<f64> = add(matvec(&g.w_z, x), matvec(&g.u_z, h), &g.b_z).into_iter().map(sigmoid).collect();
    let wx = matvec(&g.w_n, x);
    let uh = matvec(&g.u_n, h);
    (0..h.len())
        .map(|i| {
            let n = (wx[i] + g.b_n.value.data()[i] + r[i] * (uh[i] + g.c_n.value.data()[i])).tanh();
            (1.0 - z[i]) * n + z[i] * h[i]
        })
        .collect()
}

/// Hidden states for every step, starting from zeros.
pub fn gru_sequence(g: &GruLayer, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; g.shape().hidden];
    xs.iter()
        .map(|x| {
            h = gru_step(g, x, &h);
            h.clone()
        })
        .collect()
}

pub fn mean_rows(xs: &[Vec<f64>]) -> Vec<f64> {
    let n = xs.len() as f64;
    (0..xs[0].len()).map(|j| xs.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

pub fn max_rows(xs: &[Vec<f64>]) -> Vec<f64> {
    (0..xs[0].len())
        .map(|j| xs.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// `τ²·KL(softmax(t/τ) ‖ softmax(s/τ))`.
pub fn kl(student: &[f64], teacher: &[f64], tau: f64) -> f64 {
    let s: Vec<f64> = student.iter().map(|x| x / tau).collect();
    let t: Vec<f64> = teacher.iter().map(|x| x / tau).collect();
    let (ls, lt) = (log_softmax(&s), log_softmax(&t));
    tau * tau * lt.iter().zip(&ls).map(|(p, q)| p.exp() * (p - q)).sum::<f64>()
}

/// MTSN logits and pooled transferred embedding.
pub fn mtsn_forward(m: &MtsnModel, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let te: Vec<Vec<f64>> = rows(x).iter().map(|r| linear(&m.transfer, r)).collect();
    let pooled = max_rows(&gru_sequence(&m.intent_gru, &te));
    (linear(&m.classifier, &pooled), mean_rows(&te))
}

pub fn baseline_logits(gru: &GruLayer, classifier: &LinearLayer, x: &Tensor) -> Vec<f64> {
    let pooled = max_rows(&gru_sequence(gru, &rows(x)));
    linear(classifier, &pooled)
}

/// Batch-mean MTSN objective.
pub fn mtsn_objective(m: &MtsnModel, batch: &[&Example]) -> f64 {
    let LossConfig { alpha, temperature } = m.loss;
    batch
        .iter()
        .map(|ex| {
            let (logits, ete) = mtsn_forward(m, &ex.acoustic);
            let ce = -log_softmax(&logits)[ex.intent];
            alpha * kl(&ete, ex.teacher.data(), temperature) + (1.0 - alpha) * ce
        })
        .sum::<f64>()
        / batch.len() as f64
}

pub fn random_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dims(acoustic: usize, teacher: usize, hidden: usize, classes: usize) -> ModelDims {
    ModelDims {
        acoustic,
        teacher,
        hidden,
        classes,
    }
}

/// Small deterministic corpus for training tests.
pub fn tiny_spec(seed: u64) -> CorpusSpec {
    CorpusSpec {
        classes: 4,
        train_utterances: 8,
        test_utterances: 4,
        speakers: 2,
        acoustic_dim: 6,
        teacher_dim: 5,
        min_frames: 2,
        max_frames: 5,
        seed,
        ..CorpusSpec::default()
    }
}

pub fn refs(ds: &Dataset) -> Vec<&Example> {
    ds.examples().iter().collect()
}

/// MTSN trained on the intent loss alone: the reference for α = 0.
#[derive(Clone)]
pub struct IntentOnly(pub MtsnModel);

pub const INTENT_ONLY: &str = "mtsn-intent-only";

impl IntentModel for IntentOnly {
    fn kind(&self) -> &'static str {
        INTENT_ONLY
    }
    fn dims(&self) -> ModelDims {
        self.0.dims()
    }
    fn loss_config(&self) -> LossConfig {
        self.0.loss_config()
    }
    fn parameters(&self) -> Vec<&Parameter> {
        self.0.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.parameters_mut()
    }
    fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Box<dyn BoundModel>> {
        self.0.bind(g, trainable)
    }
    fn objective(&self, g: &mut Graph, fwd: &Forward, example: &Example) -> Result<ExampleLoss> {
        let ce = cross_entropy(g, fwd.logits, example.intent)?;
        Ok(ExampleLoss {
            total: ce,
            distillation: None,
            intent: ce,
        })
    }
    fn clone_box(&self) -> Box<dyn IntentModel> {
        Box::new(self.clone())
    }
}

/// Built-in frameworks plus [`IntentOnly`].
pub fn registry_with_intent_only() -> FrameworkRegistry {
    let mut r = FrameworkRegistry::builtin();
    r.register(Framework {
        name: INTENT_ONLY,
        display: "MTSN, intent loss only",
        transfers: true,
        build: |dims, loss, rng| Ok(Box::new(IntentOnly(MtsnModel::init(dims, loss, rng)?))),
        restore: |_, _, _| Err(Error::Contract("not restorable".into())),
    });
    r
}
