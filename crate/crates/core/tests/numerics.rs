mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use mtsn::layers::{GruLayer, GruShape, LinearLayer, LinearShape};
use mtsn::losses::{total_loss, LossConfig};
use mtsn::{Graph, Tensor};

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = random_tensor(&[3, 4], &mut rng);
        let b = random_tensor(&[4, 2], &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
                }
                assert!((g.value(c).data()[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sigmoid_at_one_point_seven() {
    // 40-digit decimal evaluation of 1 / (1 + e^-1.7).
    let want = 0.845_534_734_916_465_295_666_046_234_608_595_761_4_f64;
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[5], 1.7));
    let y = g.sigmoid(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - want).abs() < 1e-12);
    }
}

#[test]
fn softmax_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&[7], &mut rng).map(|v| 4.0 * v);
    let mut g = Graph::new();
    let vx = g.constant(x.clone());
    let s = g.softmax(vx).unwrap();
    let z: f64 = x.data().iter().map(|v| v.exp()).sum();
    for (got, v) in g.value(s).data().iter().zip(x.data()) {
        assert!((got - v.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn wide_linear_matches_row_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = LinearLayer::init("t", LinearShape { input: 256, output: 768 }, &mut mtsn::seed::rng(4));
    let x = random_tensor(&[5, 256], &mut rng);
    let mut g = Graph::new();
    let (_, bound) = layer.bind(&mut g, false).unwrap();
    let vx = g.constant(x.clone());
    let y = bound.forward(&mut g, vx).unwrap();
    for (t, row) in rows(&x).iter().enumerate() {
        let want = linear(&layer, row);
        for (a, b) in g.value(y).row(t).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn total_loss_is_linear_in_alpha() {
    let (tl, intent) = (1.234_567, 0.987_654_3);
    let eval = |alpha: f64| {
        let mut g = Graph::new();
        let (a, b) = (g.constant(Tensor::scalar(tl)), g.constant(Tensor::scalar(intent)));
        let t = total_loss(&mut g, a, b, &LossConfig::new(alpha, 1.0).unwrap()).unwrap();
        g.value(t).item()
    };
    let (f0, f1) = (eval(0.0), eval(1.0));
    for i in 0..=20 {
        let alpha = i as f64 / 20.0;
        assert!((eval(alpha) - (f0 + alpha * (f1 - f0))).abs() < 1e-12);
    }
}

fn gru(seed: u64, input: usize, hidden: usize) -> GruLayer {
    GruLayer::init("g", GruShape { input, hidden }, &mut mtsn::seed::rng(seed))
}

fn run_sequence(layer: &GruLayer, xs: &Tensor, h0: Option<&Tensor>) -> Tensor {
    let mut g = Graph::new();
    let (_, bound) = layer.bind(&mut g, false).unwrap();
    let vx = g.constant(xs.clone());
    let h0 = h0.map(|h| g.constant(h.clone()));
    let out = bound.sequence(&mut g, vx, h0).unwrap();
    g.value(out).clone()
}

fn seq_strategy() -> impl Strategy<Value = (u64, usize, Vec<f64>)> {
    (any::<u64>(), 1usize..6).prop_flat_map(|(seed, t)| (Just(seed), Just(t), prop::collection::vec(-10.0..10.0f64, t * 3)))
}

proptest! {
    #[test]
    fn gru_state_stays_in_unit_box(
        (seed, t, xs) in seq_strategy(),
        h0 in prop::collection::vec(-1.0..=1.0f64, 4),
    ) {
        let layer = gru(seed, 3, 4);
        let out = run_sequence(&layer, &Tensor::new(vec![t, 3], xs).unwrap(), Some(&Tensor::vector(h0)));
        prop_assert!(out.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn gru_is_causal((seed, t, xs) in seq_strategy(), bump in -5.0..5.0f64, at in 0usize..6) {
        let layer = gru(seed, 3, 4);
        let at = at % t;
        let base = Tensor::new(vec![t, 3], xs.clone()).unwrap();
        let mut moved = xs;
        moved[at * 3] += bump;
        let a = run_sequence(&layer, &base, None);
        let b = run_sequence(&layer, &Tensor::new(vec![t, 3], moved).unwrap(), None);
        for step in 0..at {
            prop_assert_eq!(a.row(step), b.row(step));
        }
    }

    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-700.0..700.0f64, 1..12)) {
        let mut g = Graph::new();
        let v = g.constant(Tensor::vector(x));
        let s = g.softmax(v).unwrap();
        let p = g.value(s).data();
        prop_assert!(p.iter().all(|&q| (0.0..=1.0).contains(&q)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gru_sequence_agrees_with_oracle((seed, t, xs) in seq_strategy()) {
        let layer = gru(seed, 3, 2);
        let x = Tensor::new(vec![t, 3], xs).unwrap();
        let out = run_sequence(&layer, &x, None);
        for (step, want) in gru_sequence(&layer, &rows(&x)).iter().enumerate() {
            for (a, b) in out.row(step).iter().zip(want) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
