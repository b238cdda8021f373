//! Parametric building blocks: the linear map used for the transfer layer and
//! classifier, and a single-layer unidirectional GRU.
//!
//! Layers own their [`Parameter`]s. A forward pass first binds the parameters
//! into a [`Graph`] (`bind`), then runs against the bound handles, so one
//! binding can serve every example of a batch.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::Tensor;

/// A named trainable tensor and its most recent gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter {
            name: name.into(),
            value,
            grad: None,
        }
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in) weights; fan_in is the column count.
pub fn init_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearShape {
    pub input: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    /// Weight transposed to `[in, out]`.
    weight_t: Var,
    /// Bias as a `[1, out]` row.
    bias: Var,
    input: usize,
    output: usize,
}

impl LinearLayer {
    pub fn new(prefix: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        let [out, _] = *weight.shape() else {
            return Err(Error::dim("linear", weight.shape(), &[0, 0]));
        };
        if bias.shape() != [out] {
            return Err(Error::dim("linear", weight.shape(), bias.shape()));
        }
        Ok(LinearLayer {
            weight: Parameter::new(format!("{prefix}.weight"), weight),
            bias: Parameter::new(format!("{prefix}.bias"), bias),
        })
    }

    pub fn init(prefix: &str, shape: LinearShape, rng: &mut Rng) -> Self {
        let w = init_matrix(shape.output, shape.input, rng);
        LinearLayer::new(prefix, w, Tensor::zeros(&[shape.output])).expect("consistent shapes")
    }

    pub fn zeros(prefix: &str, shape: LinearShape) -> Self {
        LinearLayer::new(
            prefix,
            Tensor::zeros(&[shape.output, shape.input]),
            Tensor::zeros(&[shape.output]),
        )
        .expect("consistent shapes")
    }

    pub fn shape(&self) -> LinearShape {
        let s = self.weight.value.shape();
        LinearShape {
            input: s[1],
            output: s[0],
        }
    }

    pub fn parameters(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// Registers the weights as trainable leaves. Returns the handles of the
    /// raw leaves (for reading gradients) and the bound layer.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<([Var; 2], BoundLinear)> {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let w = leaf(g, &self.weight.value);
        let b = leaf(g, &self.bias.value);
        let shape = self.shape();
        let weight_t = g.transpose(w)?;
        let bias = g.reshape(b, &[1, shape.output])?;
        Ok((
            [w, b],
            BoundLinear {
                weight_t,
                bias,
                input: shape.input,
                output: shape.output,
            },
        ))
    }
}

impl BoundLinear {
    /// `y = W·x + b` applied to each row of `x` (`[T, in]` or `[in]`).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match *g.shape(x) {
            [n] if n == self.input => {
                let row = g.reshape(x, &[1, n])?;
                let y = self.forward_rows(g, row)?;
                g.reshape(y, &[self.output])
            }
            [_, n] if n == self.input => self.forward_rows(g, x),
            ref s => Err(Error::dim("linear", s, &[self.output, self.input])),
        }
    }

    fn forward_rows(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rows = g.shape(x)[0];
        let xw = g.matmul(x, self.weight_t)?;
        let bias = if rows == 1 {
            self.bias
        } else {
            let ones = g.constant(Tensor::full(&[rows, 1], 1.0));
            g.matmul(ones, self.bias)?
        };
        g.add(xw, bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruShape {
    pub input: usize,
    pub hidden: usize,
}

/// GRU with the reset gate applied inside the candidate:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// z  = σ(W_z x + U_z h + b_z)
/// ñ  = tanh(W_n x + b_n + r ∘ (U_n h + c_n))
/// h' = (1 − z) ∘ ñ + z ∘ h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer {
    pub w_r: Parameter,
    pub w_z: Parameter,
    pub w_n: Parameter,
    pub u_r: Parameter,
    pub u_z: Parameter,
    pub u_n: Parameter,
    pub b_r: Parameter,
    pub b_z: Parameter,
    pub b_n: Parameter,
    pub c_n: Parameter,
}

/// Tensors for [`GruLayer::from_tensors`], in field order.
pub struct GruTensors {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_n: Tensor,
    pub u_r: Tensor,
    pub u_z: Tensor,
    pub u_n: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_n: Tensor,
    pub c_n: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    input: [BoundLinear; 3],
    recurrent_t: [Var; 3],
    c_n: Var,
    hidden: usize,
    one: Var,
}

impl GruLayer {
    pub fn from_tensors(prefix: &str, t: GruTensors) -> Result<Self> {
        let hidden = t.u_r.rows();
        let input = t.w_r.cols();
        if hidden == 0 || input == 0 {
            return Err(Error::Contract("GRU sizes must be positive".into()));
        }
        for w in [&t.w_r, &t.w_z, &t.w_n] {
            if w.shape() != [hidden, input] {
                return Err(Error::dim("gru", w.shape(), &[hidden, input]));
            }
        }
        for u in [&t.u_r, &t.u_z, &t.u_n] {
            if u.shape() != [hidden, hidden] {
                return Err(Error::dim("gru", u.shape(), &[hidden, hidden]));
            }
        }
        for b in [&t.b_r, &t.b_z, &t.b_n, &t.c_n] {
            if b.shape() != [hidden] {
                return Err(Error::dim("gru", b.shape(), &[hidden]));
            }
        }
        let p = |n: &str, v: Tensor| Parameter::new(format!("{prefix}.{n}"), v);
        Ok(GruLayer {
            w_r: p("w_r", t.w_r),
            w_z: p("w_z", t.w_z),
            w_n: p("w_n", t.w_n),
            u_r: p("u_r", t.u_r),
            u_z: p("u_z", t.u_z),
            u_n: p("u_n", t.u_n),
            b_r: p("b_r", t.b_r),
            b_z: p("b_z", t.b_z),
            b_n: p("b_n", t.b_n),
            c_n: p("c_n", t.c_n),
        })
    }

    pub fn init(prefix: &str, shape: GruShape, rng: &mut Rng) -> Self {
        let (h, i) = (shape.hidden, shape.input);
        let t = GruTensors {
            w_r: init_matrix(h, i, rng),
            w_z: init_matrix(h, i, rng),
            w_n: init_matrix(h, i, rng),
            u_r: init_matrix(h, h, rng),
            u_z: init_matrix(h, h, rng),
            u_n: init_matrix(h, h, rng),
            b_r: Tensor::zeros(&[h]),
            b_z: Tensor::zeros(&[h]),
            b_n: Tensor::zeros(&[h]),
            c_n: Tensor::zeros(&[h]),
        };
        GruLayer::from_tensors(prefix, t).expect("consistent shapes")
    }

    pub fn zeros(prefix: &str, shape: GruShape) -> Self {
        let (h, i) = (shape.hidden, shape.input);
        let t = GruTensors {
            w_r: Tensor::zeros(&[h, i]),
            w_z: Tensor::zeros(&[h, i]),
            w_n: Tensor::zeros(&[h, i]),
            u_r: Tensor::zeros(&[h, h]),
            u_z: Tensor::zeros(&[h, h]),
            u_n: Tensor::zeros(&[h, h]),
            b_r: Tensor::zeros(&[h]),
            b_z: Tensor::zeros(&[h]),
            b_n: Tensor::zeros(&[h]),
            c_n: Tensor::zeros(&[h]),
        };
        GruLayer::from_tensors(prefix, t).expect("consistent shapes")
    }

    pub fn shape(&self) -> GruShape {
        let s = self.w_r.value.shape();
        GruShape {
            input: s[1],
            hidden: s[0],
        }
    }

    pub fn parameters(&self) -> [&Parameter; 10] {
        [
            &self.w_r, &self.w_z, &self.w_n, &self.u_r, &self.u_z, &self.u_n, &self.b_r,
            &self.b_z, &self.b_n, &self.c_n,
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 10] {
        [
            &mut self.w_r,
            &mut self.w_z,
            &mut self.w_n,
            &mut self.u_r,
            &mut self.u_z,
            &mut self.u_n,
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_n,
            &mut self.c_n,
        ]
    }

    /// Binds all ten tensors; leaf handles come back in [`Self::parameters`] order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<([Var; 10], BoundGru)> {
        let leaves: Vec<Var> = self
            .parameters()
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let shape = self.shape();
        let h = shape.hidden;
        let mut input = Vec::with_capacity(3);
        for (w, b) in [(leaves[0], leaves[6]), (leaves[1], leaves[7]), (leaves[2], leaves[8])] {
            input.push(BoundLinear {
                weight_t: g.transpose(w)?,
                bias: g.reshape(b, &[1, h])?,
                input: shape.input,
                output: h,
            });
        }
        let recurrent_t = [
            g.transpose(leaves[3])?,
            g.transpose(leaves[4])?,
            g.transpose(leaves[5])?,
        ];
        let c_n = g.reshape(leaves[9], &[1, h])?;
        let one = g.constant(Tensor::scalar(1.0));
        let bound = BoundGru {
            input: [input[0], input[1], input[2]],
            recurrent_t,
            c_n,
            hidden: h,
            one,
        };
        Ok((leaves.try_into().expect("ten leaves"), bound))
    }
}

impl BoundGru {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One recurrence step on `x_t: [in]` and `h_prev: [H]`, giving `[H]`.
    pub fn step(&self, g: &mut Graph, x_t: Var, h_prev: Var) -> Result<Var> {
        let n_in = self.input[0].input;
        if g.shape(x_t) != [n_in] {
            return Err(Error::dim("gru_step", g.shape(x_t), &[n_in]));
        }
        if g.shape(h_prev) != [self.hidden] {
            return Err(Error::dim("gru_step", g.shape(h_prev), &[self.hidden]));
        }
        let x = g.reshape(x_t, &[1, n_in])?;
        let h = g.reshape(h_prev, &[1, self.hidden])?;
        let pre = [
            self.input[0].forward_rows(g, x)?,
            self.input[1].forward_rows(g, x)?,
            self.input[2].forward_rows(g, x)?,
        ];
        let next = self.cell(g, pre, h)?;
        g.reshape(next, &[self.hidden])
    }

    /// Unrolls over `xs: [T, in]` from `h0: [H]` (zeros when `None`),
    /// returning all hidden states as `[T, H]`.
    pub fn sequence(&self, g: &mut Graph, xs: Var, h0: Option<Var>) -> Result<Var> {
        let shape = g.shape(xs).to_vec();
        let n_in = self.input[0].input;
        let steps = match shape[..] {
            [0, _] => return Err(Error::EmptySequence { op: "gru_sequence" }),
            [t, n] if n == n_in => t,
            _ => return Err(Error::dim("gru_sequence", &shape, &[0, n_in])),
        };
        // Input projections for all steps at once.
        let proj = [
            self.input[0].forward_rows(g, xs)?,
            self.input[1].forward_rows(g, xs)?,
            self.input[2].forward_rows(g, xs)?,
        ];
        let mut h = match h0 {
            Some(h0) => {
                if g.shape(h0) != [self.hidden] {
                    return Err(Error::dim("gru_sequence", g.shape(h0), &[self.hidden]));
                }
                g.reshape(h0, &[1, self.hidden])?
            }
            None => g.constant(Tensor::zeros(&[1, self.hidden])),
        };
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let pre = [g.row(proj[0], t)?, g.row(proj[1], t)?, g.row(proj[2], t)?];
            h = self.cell(g, pre, h)?;
            states.push(h);
        }
        g.stack_rows(&states)
    }

    /// Gate arithmetic given the input projections `W x + b` for r, z, n.
    fn cell(&self, g: &mut Graph, pre: [Var; 3], h: Var) -> Result<Var> {
        let hr = g.matmul(h, self.recurrent_t[0])?;
        let hz = g.matmul(h, self.recurrent_t[1])?;
        let hn = g.matmul(h, self.recurrent_t[2])?;
        let r = g.add(pre[0], hr)?;
        let r = g.sigmoid(r)?;
        let z = g.add(pre[1], hz)?;
        let z = g.sigmoid(z)?;
        let hn = g.add(hn, self.c_n)?;
        let gated = g.mul(r, hn)?;
        let n = g.add(pre[2], gated)?;
        let n = g.tanh(n)?;
        let keep = g.sub(self.one, z)?;
        let fresh = g.mul(keep, n)?;
        let carry = g.mul(z, h)?;
        g.add(fresh, carry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn scalar_gru() -> GruLayer {
        let s = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
        let b = |v: f64| Tensor::vector(vec![v]);
        GruLayer::from_tensors(
            "gru",
            GruTensors {
                w_r: s(1.0),
                w_z: s(0.5),
                w_n: s(1.0),
                u_r: s(1.0),
                u_z: s(0.5),
                u_n: s(1.0),
                b_r: b(0.0),
                b_z: b(0.0),
                b_n: b(0.0),
                c_n: b(0.0),
            },
        )
        .unwrap()
    }

    /// Independent scalar evaluation of the three-gate formula.
    fn scalar_step(x: f64, h: f64) -> f64 {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let r = sig(x + h);
        let z = sig(0.5 * x + 0.5 * h);
        let n = (x + r * h).tanh();
        (1.0 - z) * n + z * h
    }

    #[test]
    fn linear_identity_and_constant() {
        let mut g = Graph::new();
        let layer = LinearLayer::new("l", Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let (_, bound) = layer.bind(&mut g, true).unwrap();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap());
        let y = bound.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let layer =
            LinearLayer::new("l", Tensor::zeros(&[2, 3]), Tensor::vector(vec![1.0, 2.0])).unwrap();
        let (_, bound) = layer.bind(&mut g, true).unwrap();
        let y = bound.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let mut g = Graph::new();
        let layer = LinearLayer::zeros("l", LinearShape { input: 3, output: 2 });
        let (_, bound) = layer.bind(&mut g, true).unwrap();
        let x = g.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(bound.forward(&mut g, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_gru_halves_state() {
        let layer = GruLayer::zeros("gru", GruShape { input: 2, hidden: 3 });
        let mut g = Graph::new();
        let (_, gru) = layer.bind(&mut g, true).unwrap();
        let x = g.constant(Tensor::vector(vec![0.7, -2.0]));
        let h = g.constant(Tensor::vector(vec![0.4, -0.6, 1.0]));
        let next = gru.step(&mut g, x, h).unwrap();
        assert_eq!(g.value(next).data(), &[0.2, -0.3, 0.5]);

        let h0 = g.constant(Tensor::zeros(&[3]));
        let next = gru.step(&mut g, x, h0).unwrap();
        assert_eq!(g.value(next).data(), &[0.0; 3]);
    }

    #[test]
    fn scalar_gru_matches_formula() {
        let layer = scalar_gru();
        let mut g = Graph::new();
        let (_, gru) = layer.bind(&mut g, true).unwrap();
        let x = g.constant(Tensor::vector(vec![1.0]));
        let h = g.constant(Tensor::vector(vec![0.5]));
        let next = gru.step(&mut g, x, h).unwrap();
        assert!((g.value(next).item() - scalar_step(1.0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn scalar_sequence_matches_stepwise_oracle() {
        let layer = scalar_gru();
        let mut g = Graph::new();
        let (_, gru) = layer.bind(&mut g, true).unwrap();
        let xs = [0.3, -1.2, 2.0];
        let x = g.constant(Tensor::new(vec![3, 1], xs.to_vec()).unwrap());
        let hs = gru.sequence(&mut g, x, None).unwrap();
        let mut h = 0.0;
        for (t, &xv) in xs.iter().enumerate() {
            h = scalar_step(xv, h);
            assert!((g.value(hs).data()[t] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_of_one_is_a_step() {
        let mut rng = seed::rng(3);
        let layer = GruLayer::init("gru", GruShape { input: 4, hidden: 5 }, &mut rng);
        let mut g = Graph::new();
        let (_, gru) = layer.bind(&mut g, true).unwrap();
        let x = g.constant(init_matrix(1, 4, &mut rng));
        let hs = gru.sequence(&mut g, x, None).unwrap();
        let xv = g.reshape(x, &[4]).unwrap();
        let h0 = g.constant(Tensor::zeros(&[5]));
        let step = gru.step(&mut g, xv, h0).unwrap();
        assert_eq!(g.value(hs).data(), g.value(step).data());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let layer = GruLayer::zeros("gru", GruShape { input: 2, hidden: 2 });
        let mut g = Graph::new();
        let (_, gru) = layer.bind(&mut g, true).unwrap();
        // Tensors cannot have zero extents, so an empty sequence can only
        // arrive through stack_rows on nothing.
        assert!(matches!(
            g.stack_rows(&[]),
            Err(Error::EmptySequence { .. })
        ));
        let x = g.constant(Tensor::zeros(&[1, 3]));
        assert!(gru.sequence(&mut g, x, None).is_err());
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let a = init_matrix(8, 4, &mut seed::rng(11));
        let b = init_matrix(8, 4, &mut seed::rng(11));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 0.5));
        let layer = LinearLayer::init("l", LinearShape { input: 4, output: 3 }, &mut seed::rng(1));
        assert!(layer.bias.value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_sample_mean_is_centered() {
        // Uniform(−b, b) has variance b²/3; the mean of n draws has sd b/√(3n).
        let n = 100_000;
        let m = init_matrix(n / 100, 100, &mut seed::rng(5));
        let bound = 0.1;
        let mean = m.data().iter().sum::<f64>() / n as f64;
        let sd = bound / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd, "mean {mean} vs 3σ {}", 3.0 * sd);
    }
}
