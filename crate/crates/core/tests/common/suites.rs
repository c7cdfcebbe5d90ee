//! Oracle comparisons at the sizes the acceptance checks require. Each
//! suite returns whether it held and a one-line summary.

use ndarray::{Array2, ArrayView2};
use prepal_core::acquisition::{
    batchbald_greedy, coreset_greedy, egl_scores, joint_entropy, score_bald, select_batchbald,
    top_b, AcquisitionContext, BatchBaldConfig,
};
use prepal_core::models::{Architecture, ProbeModel};
use rand::Rng;

use super::*;

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// CoreSet greedy against the brute-force oracle: n <= 50, b <= 5.
pub fn coreset(instances: usize) -> Check {
    let mut rng = rng(101);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(8..=50);
        let d = rng.random_range(1..=6);
        let x = gaussian_matrix(&mut rng, n, d);
        let n_lab = rng.random_range(1..=5);
        let labeled: Vec<usize> = (0..n_lab).collect();
        let candidates: Vec<usize> = (n_lab..n).collect();
        let b = rng.random_range(1..=5);
        let got: Vec<usize> = coreset_greedy(x.view(), &labeled, &candidates, b)
            .unwrap()
            .into_iter()
            .map(|p| p.index)
            .collect();
        if got != coreset_bruteforce(x.view(), &labeled, &candidates, b) {
            mismatches += 1;
        }
    }
    Check::new(
        mismatches == 0,
        format!("{mismatches}/{instances} instances differ from the brute-force greedy"),
    )
}

/// EGL closed form against enumeration over labels.
pub fn egl(instances: usize) -> Check {
    let mut rng = rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..=12);
        let k = rng.random_range(2..=6);
        let mut model = ProbeModel::init(&Architecture::linear(0.1), d, k, &mut rng).unwrap();
        let scale = rng.random_range(0.1..3.0);
        for layer in model.layers_mut() {
            layer.weights.mapv_inplace(|w| w * scale);
            layer.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let x = gaussian_matrix(&mut rng, 1, d);
        let probs = model.predict_proba(x.view()).unwrap();
        let closed = egl_scores(probs.view(), x.view())[0];
        let oracle = egl_enumerated(&model, x.as_slice().unwrap());
        worst = worst.max((closed - oracle).abs() / oracle.abs().max(1e-300));
    }
    Check::new(
        worst < 1e-10,
        format!("max relative error {worst:.2e} over {instances} instances (< 1e-10)"),
    )
}

/// Sampled joint entropy against exact enumeration: K = 2, m = 8, batches
/// of 1 to 10.
pub fn batchbald_sampled(instances_per_size: usize) -> Check {
    let mut rng = rng(303);
    let sampled = BatchBaldConfig {
        enumeration_cap: 1,
        ..BatchBaldConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for size in 1..=10 {
        for _ in 0..instances_per_size {
            let sample = random_sample(&mut rng, 8, size, 2);
            let members: Vec<usize> = (0..size).collect();
            let exact = joint_entropy_enumerated(&sample, &members);
            let estimate = joint_entropy(&sample, &members, &sampled, rng.random()).unwrap();
            worst = worst.max((exact - estimate).abs());
            count += 1;
        }
    }
    Check::new(
        worst < 0.05,
        format!("max |joint entropy error| {worst:.4} over {count} instances (< 0.05)"),
    )
}

/// BatchBALD with b = 1 selects the BALD argmax, both on raw samples and
/// through the scorer registry with matched seeds.
pub fn batchbald_first_pick(instances: usize) -> Check {
    let mut rng = rng(404);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = rng.random_range(2..=40);
        let k = rng.random_range(2..=5);
        let m = rng.random_range(2..=12);
        let sample = random_sample(&mut rng, m, n, k);
        let ids: Vec<usize> = (0..n).collect();
        let pick = batchbald_greedy(&sample, &ids, 1, &BatchBaldConfig::default(), 0).unwrap()[0];
        let mut best = 0;
        for i in 1..n {
            if bald(&sample, i) > bald(&sample, best) {
                best = i;
            }
        }
        // Near-ties are resolved by the library's own arithmetic.
        let ok = pick.index == best || (bald(&sample, pick.index) - bald(&sample, best)).abs() < 1e-12;

        let d = rng.random_range(2..=8);
        let x = gaussian_matrix(&mut rng, n, d);
        let model = ProbeModel::init(&Architecture::linear(0.2), d, k, &mut rng).unwrap();
        let labeled = [0usize];
        let candidates: Vec<usize> = (1..n).collect();
        let seed = rng.random();
        let ctx = AcquisitionContext::new(x.view(), &model, &labeled, &candidates, seed);
        let joint = select_batchbald(&ctx, 1).unwrap()[0].index;
        let single = top_b(&score_bald(&ctx).unwrap(), 1).unwrap()[0];
        if !ok || joint != single {
            mismatches += 1;
        }
    }
    Check::new(
        mismatches == 0,
        format!("{mismatches}/{instances} instances where b = 1 differs from the BALD argmax"),
    )
}

/// After one copy of a duplicated candidate is chosen, the other copy
/// gains no more than any informative alternative (K = 2, m = 4,
/// 6 candidates, exact enumeration).
pub fn duplicate_gain(instances: usize) -> Check {
    let mut rng = rng(505);
    let mut violations = 0;
    for _ in 0..instances {
        let mut probs = ndarray::Array3::<f64>::zeros((4, 6, 2));
        for j in 0..4 {
            // Candidates 0 and 1 are identical and maximally disagreeing.
            let hot = j % 2;
            for i in 0..2 {
                probs[[j, i, hot]] = 1.0;
            }
            for i in 2..6 {
                let p = rng.random_range(0.05..0.95);
                probs[[j, i, 0]] = p;
                probs[[j, i, 1]] = 1.0 - p;
            }
        }
        let sample = prepal_core::models::PredictiveSample::new(probs).unwrap();
        let base = joint_mi_enumerated(&sample, &[0]);
        let gain = |c: usize| joint_mi_enumerated(&sample, &[0, c]) - base;
        let dup = gain(1);
        let others_ok = (2..6)
            .filter(|&c| bald(&sample, c) > 0.0)
            .all(|c| dup <= gain(c) + 1e-12);
        let ids: Vec<usize> = (0..6).collect();
        let picks = batchbald_greedy(&sample, &ids, 2, &BatchBaldConfig::default(), 0).unwrap();
        let skips_copy = picks[0].index <= 1 && picks[1].index >= 2;
        if !others_ok || !skips_copy {
            violations += 1;
        }
    }
    Check::new(
        violations == 0,
        format!("{violations}/{instances} instances where the duplicate copy was preferred"),
    )
}

/// A linear model with random weights on `d` inputs.
pub fn random_linear(rng: &mut ChaCha8Rng, d: usize, k: usize, dropout: f64) -> ProbeModel {
    ProbeModel::init(&Architecture::linear(dropout), d, k, rng).unwrap()
}

/// Gradient check for one architecture over `draws` random models.
pub fn gradients(architecture: &Architecture, draws: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let d = rng.random_range(1..=6);
        let k = rng.random_range(2..=4);
        let rows = rng.random_range(1..=5);
        let mut model = ProbeModel::init(architecture, d, k, &mut rng).unwrap();
        for layer in model.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let x: Array2<f64> = gaussian_matrix(&mut rng, rows, d);
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
        let (_, analytic) = model.loss_and_gradient(x.view(), &y).unwrap();
        let numeric = finite_difference(&model, x.view(), &y, 1e-5);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    (worst, draws)
}

pub fn gradient_suite(draws: usize) -> Check {
    let (lin, n1) = gradients(&Architecture::linear(0.0), draws, 606);
    let (mlp, n2) = gradients(&Architecture::mlp(5, 0.0), draws, 607);
    Check::new(
        lin < 1e-4 && mlp < 1e-4,
        format!("max relative error linear {lin:.2e} ({n1} draws), hidden layer {mlp:.2e} ({n2} draws) (< 1e-4)"),
    )
}

/// Bounds on 1,000 random probability sets and the K = 2 ranking identity.
pub fn uncertainty_bounds(sets: usize) -> Check {
    use prepal_core::acquisition::{bald_scores, max_entropy_scores, variation_ratio_scores};
    let mut rng = rng(707);
    let mut failures = Vec::new();
    for s in 0..sets {
        let k = rng.random_range(2..=8);
        let n = rng.random_range(1..=20);
        let probs = Array2::from_shape_vec((n, k), (0..n).flat_map(|_| simplex(&mut rng, k)).collect())
            .unwrap();
        let ent = max_entropy_scores(probs.view());
        let vr = variation_ratio_scores(probs.view());
        let ln_k = (k as f64).ln();
        if ent.iter().any(|&h| !(-1e-15..=ln_k + 1e-12).contains(&h)) {
            failures.push(format!("set {s}: entropy outside [0, ln K]"));
        }
        if vr.iter().any(|&v| !(-1e-15..=1.0 - 1.0 / k as f64 + 1e-12).contains(&v)) {
            failures.push(format!("set {s}: variation ratio outside [0, 1 - 1/K]"));
        }
        let m = rng.random_range(2..=10);
        let sample = random_sample(&mut rng, m, n, k);
        let mean = sample.mean();
        for (i, score) in bald_scores(&sample).into_iter().enumerate() {
            let cap = entropy(&mean.row(i).to_vec());
            if !(0.0..=cap + 1e-12).contains(&score) {
                failures.push(format!("set {s}: BALD {score} outside [0, {cap}]"));
            }
        }
        let binary = Array2::from_shape_vec((n, 2), (0..n).flat_map(|_| simplex(&mut rng, 2)).collect())
            .unwrap();
        if ranking(&max_entropy_scores(binary.view())) != ranking(&variation_ratio_scores(binary.view())) {
            failures.push(format!("set {s}: K = 2 rankings differ"));
        }
    }
    Check::new(
        failures.is_empty(),
        match failures.first() {
            None => format!("{sets} random probability sets within bounds; K = 2 rankings agree"),
            Some(f) => format!("{} failures, first: {f}", failures.len()),
        },
    )
}

/// Stable argsort by descending score, with rows whose probabilities tie
/// exactly kept in index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Dropout Monte-Carlo draws of a linear probe computed directly, one mask
/// at a time.
pub fn mc_mean_direct(model: &ProbeModel, x: ArrayView2<'_, f64>, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng(seed);
    let rate = model.dropout_rate();
    let layer = &model.layers()[0];
    let (n, k) = (x.nrows(), model.num_classes());
    let mut mean = Array2::zeros((n, k));
    for _ in 0..m {
        for i in 0..n {
            let mut logits = layer.bias.to_vec();
            for (f, &v) in x.row(i).iter().enumerate() {
                if rng.random::<f64>() >= rate {
                    let kept = v / (1.0 - rate);
                    for c in 0..k {
                        logits[c] += kept * layer.weights[[f, c]];
                    }
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            for c in 0..k {
                mean[[i, c]] += exp[c] / total / m as f64;
            }
        }
    }
    mean
}
