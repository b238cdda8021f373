//! Intent cross-entropy, the KL distillation loss, and their interpolation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the distillation loss; the intent loss gets `1 − alpha`.
    pub alpha: f64,
    /// Softmax temperature applied to both embeddings before the KL.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            temperature: 1.0,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, temperature: f64) -> Result<Self> {
        let cfg = LossConfig { alpha, temperature };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Contract(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Contract(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `−log softmax(logits)[label]` for a `[K]` logit vector.
pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let k = match *g.shape(logits) {
        [k] => k,
        ref s => return Err(Error::dim("cross_entropy", s, &[0])),
    };
    if label >= k {
        return Err(Error::Label { label, classes: k });
    }
    let log_probs = g.log_softmax(logits)?;
    let mut one_hot = Tensor::zeros(&[k]);
    one_hot.data_mut()[label] = 1.0;
    let mask = g.constant(one_hot);
    let picked = g.mul(log_probs, mask)?;
    let picked = g.sum(picked)?;
    g.scale(picked, -1.0)
}

/// `τ² · KL(softmax(teacher/τ) ‖ softmax(student/τ))`.
///
/// The teacher is read by value, so no gradient ever reaches it.
pub fn distillation_kl(
    g: &mut Graph,
    student: Var,
    teacher: &Tensor,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!("temperature {temperature} must be positive")));
    }
    let d = match *g.shape(student) {
        [d] => d,
        ref s => return Err(Error::dim("distillation_kl", s, teacher.shape())),
    };
    if teacher.shape() != [d] {
        return Err(Error::dim("distillation_kl", g.shape(student), teacher.shape()));
    }
    let (p, log_p) = tempered_distribution(teacher.data(), temperature);
    let entropy_term: f64 = p.iter().zip(&log_p).map(|(p, lp)| p * lp).sum();

    let scaled = g.scale(student, 1.0 / temperature)?;
    let log_q = g.log_softmax(scaled)?;
    let p = g.constant(Tensor::vector(p));
    let cross = g.mul(p, log_q)?;
    let cross = g.sum(cross)?;
    let entropy = g.constant(Tensor::scalar(entropy_term));
    let kl = g.sub(entropy, cross)?;
    g.scale(kl, temperature * temperature)
}

/// Teacher probabilities and their logs, from the stable log-sum-exp form.
fn tempered_distribution(x: &[f64], temperature: f64) -> (Vec<f64>, Vec<f64>) {
    let scaled: Vec<f64> = x.iter().map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = scaled.iter().map(|v| v - lse).collect();
    let p = log_p.iter().map(|l| l.exp()).collect();
    (p, log_p)
}

/// `α · loss_tl + (1 − α) · loss_intent`.
pub fn total_loss(g: &mut Graph, loss_tl: Var, loss_intent: Var, cfg: &LossConfig) -> Result<Var> {
    for v in [loss_tl, loss_intent] {
        if !g.value(v).all_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
    }
    let tl = g.scale(loss_tl, cfg.alpha)?;
    let intent = g.scale(loss_intent, 1.0 - cfg.alpha)?;
    g.add(tl, intent)
}

/// Mean of per-example losses.
pub fn batch_loss(g: &mut Graph, per_example: &[Var]) -> Result<Var> {
    if per_example.is_empty() {
        return Err(Error::Contract("batch_loss over an empty batch".into()));
    }
    g.mean_scalars(per_example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn scalar(g: &Graph, v: Var) -> f64 {
        g.value(v).item()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::zeros(&[31]));
        let ce = cross_entropy(&mut g, logits, 4).unwrap();
        assert!((scalar(&g, ce) - 31f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn saturated_logits_give_zero() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::vector(vec![100.0, 0.0, 0.0]));
        let ce = cross_entropy(&mut g, logits, 0).unwrap();
        assert!(scalar(&g, ce).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let mut rng = seed::rng(21);
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = 2;
        let denom: f64 = logits.iter().map(|v| v.exp()).sum();
        let oracle = -(logits[label].exp() / denom).ln();
        let mut g = Graph::new();
        let l = g.param(Tensor::vector(logits));
        let ce = cross_entropy(&mut g, l, label).unwrap();
        assert!((scalar(&g, ce) - oracle).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let mut g = Graph::new();
        let l = g.param(Tensor::zeros(&[3]));
        assert!(matches!(
            cross_entropy(&mut g, l, 3),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn kl_of_identical_embeddings_is_zero() {
        let mut rng = seed::rng(4);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let s = g.param(Tensor::vector(x.clone()));
        let kl = distillation_kl(&mut g, s, &Tensor::vector(x), 1.0).unwrap();
        assert!(scalar(&g, kl).abs() < 1e-10);
    }

    #[test]
    fn kl_limit_against_uniform_student() {
        // teacher probabilities [1 − ε, ε] vs uniform student
        let eps: f64 = 1e-9;
        let teacher = Tensor::vector(vec![0.0, (eps / (1.0 - eps)).ln()]);
        let mut g = Graph::new();
        let s = g.param(Tensor::zeros(&[2]));
        let kl = distillation_kl(&mut g, s, &teacher, 1.0).unwrap();
        assert!((scalar(&g, kl) - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn kl_matches_scalar_oracle() {
        let mut rng = seed::rng(9);
        let a: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        for tau in [1.0, 2.5] {
            let softmax = |v: &[f64]| {
                let e: Vec<f64> = v.iter().map(|x| (x / tau).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect::<Vec<_>>()
            };
            let p = softmax(&b);
            let q = softmax(&a);
            let oracle: f64 =
                tau * tau * p.iter().zip(&q).map(|(p, q)| p * (p.ln() - q.ln())).sum::<f64>();
            let mut g = Graph::new();
            let s = g.param(Tensor::vector(a.clone()));
            let kl = distillation_kl(&mut g, s, &Tensor::vector(b.clone()), tau).unwrap();
            assert!((scalar(&g, kl) - oracle).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_dimension_mismatch() {
        let mut g = Graph::new();
        let s = g.param(Tensor::zeros(&[3]));
        assert!(matches!(
            distillation_kl(&mut g, s, &Tensor::zeros(&[4]), 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn total_loss_interpolates() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.constant(Tensor::scalar(4.0));
        let half = total_loss(&mut g, a, b, &LossConfig::new(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(scalar(&g, half), 3.0);
        let zero = total_loss(&mut g, a, b, &LossConfig::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(scalar(&g, zero), 4.0);
        let one = total_loss(&mut g, a, b, &LossConfig::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(scalar(&g, one), 2.0);
    }

    #[test]
    fn total_loss_rejects_non_finite() {
        let mut g = Graph::unchecked();
        let a = g.constant(Tensor::scalar(f64::NAN));
        let b = g.constant(Tensor::scalar(1.0));
        assert!(total_loss(&mut g, a, b, &LossConfig::default()).is_err());
    }

    #[test]
    fn batch_loss_means() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.0));
        let b = g.constant(Tensor::scalar(3.0));
        let m = batch_loss(&mut g, &[a, b]).unwrap();
        assert_eq!(scalar(&g, m), 2.0);
        let single = batch_loss(&mut g, &[a]).unwrap();
        assert_eq!(scalar(&g, single), 1.0);
        assert!(batch_loss(&mut g, &[]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::new(1.5, 1.0).is_err());
        assert!(LossConfig::new(0.5, 0.0).is_err());
        assert!(LossConfig::new(0.0, 2.0).is_ok());
    }
}
