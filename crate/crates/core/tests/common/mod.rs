//! Independent reference implementations used by the oracle and acceptance
//! suites. They favour directness over speed and share no code with the
//! library beyond its public types.

#![allow(dead_code)]

pub mod suites;

use ndarray::{Array2, Array3, ArrayView2};
use prepal_core::models::{PredictiveSample, ProbeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// A random point on the simplex, sometimes with exact zeros.
pub fn simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random::<f64>() < 0.05 {
                0.0
            } else {
                rng.random::<f64>().powi(2)
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.random_range(0..k)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn random_sample(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize) -> PredictiveSample {
    let mut probs = Array3::zeros((m, n, k));
    for j in 0..m {
        for i in 0..n {
            for (c, p) in simplex(rng, k).into_iter().enumerate() {
                probs[[j, i, c]] = p;
            }
        }
    }
    PredictiveSample::new(probs).unwrap()
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// BALD by its definition: entropy of the mean minus mean entropy.
pub fn bald(sample: &PredictiveSample, i: usize) -> f64 {
    let probs = sample.as_array();
    let (m, _, k) = probs.dim();
    let mut mean = vec![0.0; k];
    let mut expected = 0.0;
    for j in 0..m {
        let row: Vec<f64> = (0..k).map(|c| probs[[j, i, c]]).collect();
        for c in 0..k {
            mean[c] += row[c] / m as f64;
        }
        expected += entropy(&row) / m as f64;
    }
    (entropy(&mean) - expected).max(0.0)
}

/// Joint entropy of the members' labels by enumerating all `K^|members|`
/// configurations of the mask mixture.
pub fn joint_entropy_enumerated(sample: &PredictiveSample, members: &[usize]) -> f64 {
    let probs = sample.as_array();
    let (m, _, k) = probs.dim();
    let total = k.pow(members.len() as u32);
    let mut h = 0.0;
    for code in 0..total {
        let mut labels = Vec::with_capacity(members.len());
        let mut rest = code;
        for _ in members {
            labels.push(rest % k);
            rest /= k;
        }
        let p: f64 = (0..m)
            .map(|j| {
                members
                    .iter()
                    .zip(&labels)
                    .map(|(&i, &y)| probs[[j, i, y]])
                    .product::<f64>()
            })
            .sum::<f64>()
            / m as f64;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Joint mutual information between the members' labels and the mask.
pub fn joint_mi_enumerated(sample: &PredictiveSample, members: &[usize]) -> f64 {
    let probs = sample.as_array();
    let (m, _, k) = probs.dim();
    let expected: f64 = members
        .iter()
        .map(|&i| {
            (0..m)
                .map(|j| entropy(&(0..k).map(|c| probs[[j, i, c]]).collect::<Vec<_>>()))
                .sum::<f64>()
                / m as f64
        })
        .sum();
    joint_entropy_enumerated(sample, members) - expected
}

/// k-center greedy with every distance recomputed from scratch.
pub fn coreset_bruteforce(
    x: ArrayView2<'_, f64>,
    labeled: &[usize],
    candidates: &[usize],
    b: usize,
) -> Vec<usize> {
    let dist = |a: usize, c: usize| -> f64 {
        x.row(a)
            .iter()
            .zip(x.row(c).iter())
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    };
    let mut centers: Vec<usize> = labeled.to_vec();
    let mut picked = Vec::new();
    for _ in 0..b {
        let mut best: Option<(usize, f64)> = None;
        for &c in candidates {
            if picked.contains(&c) {
                continue;
            }
            let d = centers.iter().map(|&l| dist(c, l)).fold(f64::INFINITY, f64::min);
            best = match best {
                Some((bi, bd)) if bd > d || (bd == d && bi < c) => Some((bi, bd)),
                _ => Some((c, d)),
            };
        }
        let (c, _) = best.unwrap();
        picked.push(c);
        centers.push(c);
    }
    picked
}

/// Expected squared gradient norm by enumerating every label.
pub fn egl_enumerated(model: &ProbeModel, x: &[f64]) -> f64 {
    let row = ArrayView2::from_shape((1, x.len()), x).unwrap();
    let p = model.predict_proba(row).unwrap();
    (0..model.num_classes())
        .map(|c| {
            let g = model.loss_gradient(x, c).unwrap();
            p[[0, c]] * g.iter().map(|v| v * v).sum::<f64>()
        })
        .sum()
}

/// Central finite-difference gradient of the mean loss.
pub fn finite_difference(
    model: &ProbeModel,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    step: f64,
) -> Vec<f64> {
    let params = model.params_flat();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + step;
        probe.set_params_flat(&p).unwrap();
        let up = probe.loss(x, y).unwrap();
        p[i] = params[i] - step;
        probe.set_params_flat(&p).unwrap();
        let down = probe.loss(x, y).unwrap();
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// Largest relative error between two gradients, measured against the
/// larger of the two norms so that near-zero entries do not dominate.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Kolmogorov-Smirnov distance between a sample and U(0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pooled-variance standard error of the difference of two means.
pub fn pooled_se(a: &[f64], b: &[f64]) -> f64 {
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * var(a) + (nb - 1.0) * var(b)) / (na + nb - 2.0);
    (pooled * (1.0 / na + 1.0 / nb)).sqrt()
}
