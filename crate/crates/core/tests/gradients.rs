//! Analytic gradients against central finite differences.

mod common;

use common::suites;
use common::*;
use ndarray::Array2;
use prepal_core::models::{Architecture, ProbeModel};
use rand::Rng;

#[test]
fn linear_and_hidden_layer_gradients_match_finite_differences() {
    let check = suites::gradient_suite(100);
    assert!(check.pass, "{}", check.detail);
}

#[test]
fn linear_squared_gradient_norm_identity() {
    let mut rng = rng(31);
    for _ in 0..200 {
        let d = rng.random_range(1..=10);
        let k = rng.random_range(2..=5);
        let model = ProbeModel::init(&Architecture::linear(0.0), d, k, &mut rng).unwrap();
        let x: Vec<f64> = gaussian_matrix(&mut rng, 1, d).into_raw_vec_and_offset().0;
        let y = rng.random_range(0..k);
        let g = model.loss_gradient(&x, y).unwrap();
        let flat: f64 = g.iter().map(|v| v * v).sum();
        let xs = Array2::from_shape_vec((1, d), x.clone()).unwrap();
        let p = model.predict_proba(xs.view()).unwrap();
        let residual: f64 = (0..k)
            .map(|c| (p[[0, c]] - f64::from(u8::from(c == y))).powi(2))
            .sum();
        let closed = residual * (x.iter().map(|v| v * v).sum::<f64>() + 1.0);
        assert!((flat - closed).abs() <= 1e-12 * closed.max(1.0), "{flat} vs {closed}");
    }
}

#[test]
fn zero_weight_bias_gradient() {
    let model = ProbeModel::zeros(&Architecture::linear(0.0), 3, 2).unwrap();
    let g = model.loss_gradient(&[0.3, -1.0, 2.0], 0).unwrap();
    // Layout: weights row-major (d x K), then the K biases.
    assert_eq!(&g[6..], &[-0.5, 0.5]);
}
