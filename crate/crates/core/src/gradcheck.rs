//! Finite-difference verification of every differentiable operation.
//!
//! Each case maps a list of input tensors to a scalar; non-scalar outputs are
//! reduced by a fixed irregular weighted sum so every output coordinate
//! contributes. At each random point every input coordinate is compared
//! against the central difference `(f(x+h) − f(x−h)) / 2h` using
//! `|analytic − numeric| / max(1, |analytic|)`.

use std::sync::Arc;

use rand::Rng as _;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::{GruLayer, GruTensors, LinearLayer};
use crate::losses::{self, LossConfig};
use crate::model::{Baseline2Model, IntentModel, MtsnModel};
use crate::data::Example;
use crate::seed::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub tol: f64,
    pub points: usize,
    pub step: f64,
    pub seed: u64,
    /// Adds a case whose backward rule is off by this relative amount.
    pub inject_fault: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            tol: 1e-4,
            points: 10,
            step: 1e-5,
            seed: 0,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&CaseResult> {
        self.cases.iter().filter(|c| !c.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn summary(&self) -> String {
        format!("{} ops checked, {} failures", self.cases.len(), self.failures().len())
    }
}

type Inputs = Box<dyn Fn(&mut Rng) -> Vec<Tensor> + Send + Sync>;
/// Builds the scalar root from the inputs; returns the root and one leaf per input.
type Eval = Box<dyn Fn(&mut Graph, &[Tensor]) -> Result<(Var, Vec<Var>)> + Send + Sync>;

pub struct Case {
    pub name: String,
    inputs: Inputs,
    eval: Eval,
}

impl Case {
    pub fn new(
        name: impl Into<String>,
        inputs: impl Fn(&mut Rng) -> Vec<Tensor> + Send + Sync + 'static,
        eval: impl Fn(&mut Graph, &[Tensor]) -> Result<(Var, Vec<Var>)> + Send + Sync + 'static,
    ) -> Self {
        Case {
            name: name.into(),
            inputs: Box::new(inputs),
            eval: Box::new(eval),
        }
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

fn normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    uniform(shape, -1.5, 1.5, rng)
}

fn params(g: &mut Graph, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| g.param(t.clone())).collect()
}

/// Reduces any output to a scalar with fixed, uneven weights.
fn reduce(g: &mut Graph, y: Var) -> Result<Var> {
    if g.value(y).is_scalar() {
        return Ok(y);
    }
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| 1.0 + 0.7 * (1.3 * i as f64 + 0.4).cos()).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let weighted = g.mul(y, w)?;
    g.sum(weighted)
}

fn unary(name: &'static str, lo: f64, hi: f64, f: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    Case::new(
        name,
        move |rng| vec![uniform(&[3, 4], lo, hi, rng)],
        move |g, ts| {
            let v = params(g, ts);
            let y = f(g, v[0])?;
            Ok((reduce(g, y)?, v))
        },
    )
}

fn binary(name: &'static str, a: &'static [usize], b: &'static [usize], f: fn(&mut Graph, Var, Var) -> Result<Var>) -> Case {
    Case::new(
        name,
        move |rng| vec![normal(a, rng), normal(b, rng)],
        move |g, ts| {
            let v = params(g, ts);
            let y = f(g, v[0], v[1])?;
            Ok((reduce(g, y)?, v))
        },
    )
}

fn gru_from(ts: &[Tensor]) -> Result<GruLayer> {
    GruLayer::from_tensors(
        "gru",
        GruTensors {
            w_r: ts[0].clone(),
            w_z: ts[1].clone(),
            w_n: ts[2].clone(),
            u_r: ts[3].clone(),
            u_z: ts[4].clone(),
            u_n: ts[5].clone(),
            b_r: ts[6].clone(),
            b_z: ts[7].clone(),
            b_n: ts[8].clone(),
            c_n: ts[9].clone(),
        },
    )
}

fn gru_inputs(input: usize, hidden: usize, rng: &mut Rng) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(10);
    for _ in 0..3 {
        out.push(normal(&[hidden, input], rng));
    }
    for _ in 0..3 {
        out.push(normal(&[hidden, hidden], rng));
    }
    for _ in 0..4 {
        out.push(normal(&[hidden], rng));
    }
    out
}

const MODEL_DIMS: crate::model::ModelDims = crate::model::ModelDims {
    acoustic: 3,
    teacher: 4,
    hidden: 3,
    classes: 3,
};
const MODEL_FRAMES: usize = 4;

fn model_example(model_inputs: &[Tensor]) -> Result<Example> {
    // The last two inputs are the frames and teacher; both are held fixed.
    let n = model_inputs.len();
    let mut ex = Example::new("u", "s", "L1", model_inputs[n - 2].clone(), model_inputs[n - 1].clone(), 1)?;
    // Keep full precision so the check sees exactly the sampled point.
    ex.acoustic = model_inputs[n - 2].clone();
    ex.teacher = model_inputs[n - 1].clone();
    Ok(ex)
}

fn model_case(name: &'static str, build: fn(&[Tensor]) -> Result<Box<dyn IntentModel>>, n_params: fn(&mut Rng) -> Vec<Tensor>) -> Case {
    Case::new(
        name,
        move |rng| {
            let mut ts = n_params(rng);
            ts.push(normal(&[MODEL_FRAMES, MODEL_DIMS.acoustic], rng));
            ts.push(normal(&[MODEL_DIMS.teacher], rng));
            ts
        },
        move |g, ts| {
            let n = ts.len();
            let model = build(&ts[..n - 2])?;
            let ex = model_example(ts)?;
            let bound = model.bind(g, true)?;
            let fwd = bound.forward(g, &ex.acoustic)?;
            let loss = model.objective(g, &fwd, &ex)?;
            // Frames and teacher are data: their gradients are not checked.
            let mut leaves = bound.leaves().to_vec();
            leaves.push(g.constant(ts[n - 2].clone()));
            leaves.push(g.constant(ts[n - 1].clone()));
            Ok((loss.total, leaves))
        },
    )
}

fn mtsn_params(rng: &mut Rng) -> Vec<Tensor> {
    let d = MODEL_DIMS;
    let mut ts = vec![normal(&[d.teacher, d.acoustic], rng), normal(&[d.teacher], rng)];
    ts.extend(gru_inputs(d.teacher, d.hidden, rng));
    ts.push(normal(&[d.classes, d.hidden], rng));
    ts.push(normal(&[d.classes], rng));
    ts
}

fn baseline_params(rng: &mut Rng) -> Vec<Tensor> {
    let d = MODEL_DIMS;
    let mut ts = gru_inputs(d.acoustic, d.hidden, rng);
    ts.push(normal(&[d.classes, d.hidden], rng));
    ts.push(normal(&[d.classes], rng));
    ts
}

fn build_mtsn(ts: &[Tensor]) -> Result<Box<dyn IntentModel>> {
    let transfer = LinearLayer::new("transfer", ts[0].clone(), ts[1].clone())?;
    let gru = gru_from(&ts[2..12])?;
    let classifier = LinearLayer::new("classifier", ts[12].clone(), ts[13].clone())?;
    Ok(Box::new(MtsnModel::from_layers(
        transfer,
        gru,
        classifier,
        LossConfig {
            alpha: 0.5,
            temperature: 1.5,
        },
    )?))
}

fn build_baseline(ts: &[Tensor]) -> Result<Box<dyn IntentModel>> {
    let gru = gru_from(&ts[..10])?;
    let classifier = LinearLayer::new("classifier", ts[10].clone(), ts[11].clone())?;
    Ok(Box::new(Baseline2Model::from_layers(gru, classifier, MODEL_DIMS.teacher)?))
}

/// The standard case list: every graph op, both layers, the losses, and
/// both full models.
pub fn standard_cases() -> Vec<Case> {
    let mut cases = vec![
        binary("matmul", &[3, 4], &[4, 2], |g, a, b| g.matmul(a, b)),
        unary("transpose", -1.5, 1.5, |g, x| g.transpose(x)),
        unary("reshape", -1.5, 1.5, |g, x| g.reshape(x, &[2, 6])),
        binary("add", &[3, 4], &[3, 4], |g, a, b| g.add(a, b)),
        binary("sub", &[3, 4], &[3, 4], |g, a, b| g.sub(a, b)),
        binary("mul", &[3, 4], &[3, 4], |g, a, b| g.mul(a, b)),
        binary("mul_scalar_broadcast", &[1], &[3, 4], |g, a, b| g.mul(a, b)),
        binary("add_scalar_broadcast", &[3, 4], &[1], |g, a, b| g.add(a, b)),
        unary("sigmoid", -3.0, 3.0, |g, x| g.sigmoid(x)),
        unary("tanh", -2.0, 2.0, |g, x| g.tanh(x)),
        unary("exp", -1.5, 1.5, |g, x| g.exp(x)),
        unary("log", 0.3, 3.0, |g, x| g.log(x)),
        unary("scale", -1.5, 1.5, |g, x| g.scale(x, -2.5)),
        unary("softmax", -2.0, 2.0, |g, x| g.softmax(x)),
        unary("log_softmax", -2.0, 2.0, |g, x| g.log_softmax(x)),
        unary("mean_over_time", -1.5, 1.5, |g, x| g.mean_over_time(x)),
        unary("max_over_time", -1.5, 1.5, |g, x| g.max_over_time(x)),
        unary("sum", -1.5, 1.5, |g, x| g.sum(x)),
        unary("row", -1.5, 1.5, |g, x| g.row(x, 1)),
        Case::new(
            "stack_rows",
            |rng| vec![normal(&[4], rng), normal(&[1, 4], rng), normal(&[4], rng)],
            |g, ts| {
                let v = params(g, ts);
                let y = g.stack_rows(&v)?;
                Ok((reduce(g, y)?, v))
            },
        ),
        Case::new(
            "mean_scalars",
            |rng| (0..3).map(|_| normal(&[1], rng)).collect(),
            |g, ts| {
                let v = params(g, ts);
                let sq: Vec<Var> = v.iter().map(|&x| g.mul(x, x)).collect::<Result<_>>()?;
                Ok((g.mean_scalars(&sq)?, v))
            },
        ),
        Case::new(
            "linear",
            |rng| vec![normal(&[3, 5], rng), normal(&[3], rng), normal(&[4, 5], rng)],
            |g, ts| {
                let layer = LinearLayer::new("l", ts[0].clone(), ts[1].clone())?;
                let (leaves, bound) = layer.bind(g, true)?;
                let x = g.param(ts[2].clone());
                let y = bound.forward(g, x)?;
                Ok((reduce(g, y)?, vec![leaves[0], leaves[1], x]))
            },
        ),
        Case::new(
            "gru_step",
            |rng| {
                let mut ts = gru_inputs(3, 4, rng);
                ts.push(normal(&[3], rng));
                ts.push(uniform(&[4], -0.9, 0.9, rng));
                ts
            },
            |g, ts| {
                let (leaves, bound) = gru_from(ts)?.bind(g, true)?;
                let x = g.param(ts[10].clone());
                let h = g.param(ts[11].clone());
                let y = bound.step(g, x, h)?;
                let mut all = leaves.to_vec();
                all.extend([x, h]);
                Ok((reduce(g, y)?, all))
            },
        ),
        Case::new(
            "gru_sequence",
            |rng| {
                let mut ts = gru_inputs(3, 4, rng);
                ts.push(normal(&[5, 3], rng));
                ts
            },
            |g, ts| {
                let (leaves, bound) = gru_from(ts)?.bind(g, true)?;
                let xs = g.param(ts[10].clone());
                let y = bound.sequence(g, xs, None)?;
                let mut all = leaves.to_vec();
                all.push(xs);
                Ok((reduce(g, y)?, all))
            },
        ),
        Case::new(
            "cross_entropy",
            |rng| vec![uniform(&[6], -3.0, 3.0, rng)],
            |g, ts| {
                let v = params(g, ts);
                Ok((losses::cross_entropy(g, v[0], 2)?, v))
            },
        ),
        Case::new(
            "distillation_kl",
            |rng| vec![normal(&[7], rng), normal(&[7], rng)],
            |g, ts| {
                let s = g.param(ts[0].clone());
                let t = g.constant(ts[1].clone());
                Ok((losses::distillation_kl(g, s, &ts[1], 2.0)?, vec![s, t]))
            },
        ),
        Case::new(
            "total_loss",
            |rng| vec![uniform(&[1], 0.1, 2.0, rng), uniform(&[1], 0.1, 2.0, rng)],
            |g, ts| {
                let v = params(g, ts);
                let cfg = LossConfig {
                    alpha: 0.3,
                    temperature: 1.0,
                };
                let a = g.mul(v[0], v[0])?;
                Ok((losses::total_loss(g, a, v[1], &cfg)?, v))
            },
        ),
    ];
    cases.push(model_case("mtsn_model", build_mtsn, mtsn_params));
    cases.push(model_case("baseline2_model", build_baseline, baseline_params));
    cases
}

/// `sin` with a backward rule scaled by `1 + rel`.
pub fn faulty_case(rel: f64) -> Case {
    Case::new(
        "injected_fault",
        |rng| vec![normal(&[5], rng)],
        move |g, ts| {
            let v = params(g, ts);
            let y = g.map(v[0], "injected_fault", f64::sin, Arc::new(move |x: f64| x.cos() * (1.0 + rel)))?;
            Ok((reduce(g, y)?, v))
        },
    )
}

/// Checks one case over `cfg.points` random points.
pub fn check_case(case: &Case, cfg: &GradcheckConfig) -> Result<CaseResult> {
    let mut rng = seed::rng_for(cfg.seed, &format!("gradcheck/{}", case.name));
    let mut max_rel: f64 = 0.0;
    let mut coordinates = 0;
    for _ in 0..cfg.points {
        let inputs = (case.inputs)(&mut rng);
        let mut g = Graph::new();
        let (root, leaves) = (case.eval)(&mut g, &inputs)?;
        let grads = g.backward(root)?;
        for (i, &leaf) in leaves.iter().enumerate() {
            if !g.requires_grad(leaf) {
                continue;
            }
            let analytic = grads.get_or_zeros(&g, leaf);
            for j in 0..inputs[i].len() {
                let numeric = central_difference(case, &inputs, i, j, cfg.step)?;
                let a = analytic.data()[j];
                let rel = (a - numeric).abs() / a.abs().max(1.0);
                max_rel = max_rel.max(rel);
                coordinates += 1;
            }
        }
    }
    Ok(CaseResult {
        name: case.name.clone(),
        coordinates,
        max_rel_error: max_rel,
        passed: max_rel < cfg.tol,
    })
}

fn central_difference(case: &Case, inputs: &[Tensor], i: usize, j: usize, h: f64) -> Result<f64> {
    let mut probe = inputs.to_vec();
    let x = inputs[i].data()[j];
    let mut at = |v: f64| -> Result<f64> {
        probe[i].data_mut()[j] = v;
        let mut g = Graph::new();
        let (root, _) = (case.eval)(&mut g, &probe)?;
        Ok(g.value(root).item())
    };
    let up = at(x + h)?;
    let down = at(x - h)?;
    Ok((up - down) / (2.0 * h))
}

/// Runs the standard suite, plus the injected fault when configured.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut cases = standard_cases();
    if let Some(rel) = cfg.inject_fault {
        cases.push(faulty_case(rel));
    }
    let results = cases.iter().map(|c| check_case(c, cfg)).collect::<Result<_>>()?;
    Ok(GradcheckReport {
        config: *cfg,
        cases: results,
    })
}
