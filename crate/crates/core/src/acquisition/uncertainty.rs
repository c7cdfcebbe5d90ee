//! Prediction-based scores: entropy, variation ratio, BALD and expected
//! gradient length. All take probabilities already computed by a model so
//! they can be checked on hand-made inputs.

use ndarray::{ArrayView2, Axis};

use crate::models::PredictiveSample;

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    -p.into_iter()
        .filter(|&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// `H(p(y|x))` per row.
pub fn max_entropy_scores(probs: ArrayView2<'_, f64>) -> Vec<f64> {
    probs
        .axis_iter(Axis(0))
        .map(|row| entropy(row.iter().copied()))
        .collect()
}

/// `1 - max_c p(c|x)` per row.
pub fn variation_ratio_scores(probs: ArrayView2<'_, f64>) -> Vec<f64> {
    probs
        .axis_iter(Axis(0))
        .map(|row| 1.0 - row.fold(0.0f64, |m, &v| m.max(v)))
        .collect()
}

/// Mutual information between the prediction and the dropout mask:
/// entropy of the mean prediction minus the mean per-mask entropy,
/// clamped at zero. Candidates whose draws are all identical score exactly
/// zero.
pub fn bald_scores(sample: &PredictiveSample) -> Vec<f64> {
    let m = sample.num_samples() as f64;
    (0..sample.num_candidates())
        .map(|i| {
            let draws = sample.candidate(i);
            let first = draws.row(0);
            if draws.axis_iter(Axis(0)).all(|row| row == first) {
                return 0.0;
            }
            let mean = draws.sum_axis(Axis(0)) / m;
            let expected = draws
                .axis_iter(Axis(0))
                .map(|row| entropy(row.iter().copied()))
                .sum::<f64>()
                / m;
            (entropy(mean.iter().copied()) - expected).max(0.0)
        })
        .collect()
}

/// Expected squared gradient norm of the linear probe's cross-entropy,
/// with the label drawn from the model's own prediction. For the linear
/// probe this is `(1 - |p|^2) (|x|^2 + 1)` exactly.
pub fn egl_scores(probs: ArrayView2<'_, f64>, features: ArrayView2<'_, f64>) -> Vec<f64> {
    probs
        .axis_iter(Axis(0))
        .zip(features.axis_iter(Axis(0)))
        .map(|(p, x)| {
            let p_sq: f64 = p.iter().map(|v| v * v).sum();
            let x_sq: f64 = x.iter().map(|v| v * v).sum();
            ((1.0 - p_sq) * (x_sq + 1.0)).max(0.0)
        })
        .collect()
}
