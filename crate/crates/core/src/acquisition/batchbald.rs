//! Greedy joint-batch mutual information.
//!
//! The batch-so-far is represented by a set of label configurations `y_B`
//! (all of them, or a sample). For each row we keep `log p(y_B)` and the
//! posterior over dropout masks `w_j ∝ p(y_B | ω_j)`. The predictive of a
//! new candidate given `y_B` is then `Σ_j w_j p_c^(j)`, so scoring every
//! candidate is one matrix product plus an entropy per (row, candidate).

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use wide::f64x8;

use super::uncertainty::{bald_scores, entropy};
use super::{top_b_from, Pick};
use crate::error::{Error, Result};
use crate::models::PredictiveSample;
use crate::rng;

const STREAM_CONFIGS: u64 = 41;
const GEMM_ENTRIES: usize = 1 << 17;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchBaldConfig {
    /// Joint entropies are enumerated exactly while `K^size` stays at or
    /// below this; beyond it they are estimated from sampled configurations.
    pub enumeration_cap: u64,
    /// Number of sampled joint configurations `S`.
    pub sampled_configs: usize,
    /// Restrict the greedy search to this many top-BALD candidates. `None`
    /// searches the whole pool.
    pub candidate_pool: Option<usize>,
}

impl Default for BatchBaldConfig {
    fn default() -> Self {
        Self {
            enumeration_cap: 1_000_000,
            sampled_configs: 4000,
            candidate_pool: Some(100),
        }
    }
}

impl BatchBaldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enumeration_cap < 1 {
            return Err(Error::invalid("batchbald.enumeration_cap", "must be at least 1"));
        }
        if self.sampled_configs < 1 {
            return Err(Error::invalid("batchbald.sampled_configs", "must be at least 1"));
        }
        if self.candidate_pool == Some(0) {
            return Err(Error::invalid("batchbald.candidate_pool", "must be positive"));
        }
        Ok(())
    }

    fn exact_for(&self, k: usize, size: usize) -> bool {
        let mut total: u64 = 1;
        for _ in 0..size {
            total = total.saturating_mul(k as u64);
            if total > self.enumeration_cap {
                return false;
            }
        }
        true
    }
}

/// Mean per-mask entropy of each candidate, `E_ω H(y | ω, x)`.
fn conditional_entropies(sample: &PredictiveSample) -> Vec<f64> {
    let m = sample.num_samples() as f64;
    (0..sample.num_candidates())
        .map(|i| {
            sample
                .candidate(i)
                .axis_iter(Axis(0))
                .map(|row| entropy(row.iter().copied()))
                .sum::<f64>()
                / m
        })
        .collect()
}

struct JointState {
    m: usize,
    k: usize,
    /// rows x m, each row sums to one.
    weights: Array2<f64>,
    log_q: Vec<f64>,
    /// Mask index each sampled row was drawn under; empty while exact.
    omega: Vec<usize>,
    sampled: bool,
}

impl JointState {
    fn new(m: usize, k: usize) -> Self {
        Self {
            m,
            k,
            weights: Array2::from_elem((1, m), 1.0 / m as f64),
            log_q: vec![0.0],
            omega: Vec::new(),
            sampled: false,
        }
    }

    fn rows(&self) -> usize {
        self.log_q.len()
    }

    /// Weight of each row in entropy sums.
    fn row_weight(&self, r: usize) -> f64 {
        if self.sampled {
            1.0 / self.rows() as f64
        } else {
            self.log_q[r].exp()
        }
    }

    fn entropy(&self) -> f64 {
        (0..self.rows())
            .map(|r| -self.row_weight(r) * self.log_q[r])
            .sum()
    }

    /// Adds a member whose per-mask predictive is `q` (m x K), enumerating
    /// every label.
    fn extend_exact(&mut self, q: ArrayView2<'_, f64>) {
        let mut weights = Vec::with_capacity(self.rows() * self.k * self.m);
        let mut log_q = Vec::with_capacity(self.rows() * self.k);
        let mut u = vec![0.0; self.m];
        for (r, w) in self.weights.axis_iter(Axis(0)).enumerate() {
            for y in 0..self.k {
                let mut s = 0.0;
                for j in 0..self.m {
                    u[j] = w[j] * q[[j, y]];
                    s += u[j];
                }
                if s > 0.0 {
                    weights.extend(u.iter().map(|v| v / s));
                    log_q.push(self.log_q[r] + s.ln());
                }
            }
        }
        let rows = log_q.len();
        self.weights = Array2::from_shape_vec((rows, self.m), weights).expect("shape");
        self.log_q = log_q;
    }

    /// Adds a member by drawing its label once per sampled row.
    fn extend_sampled<R: Rng>(&mut self, q: ArrayView2<'_, f64>, rng: &mut R) {
        for r in 0..self.rows() {
            let y = draw_label(q.row(self.omega[r]).iter().copied(), rng);
            let mut s = 0.0;
            {
                let mut w = self.weights.row_mut(r);
                for j in 0..self.m {
                    w[j] *= q[[j, y]];
                    s += w[j];
                }
                let s = s.max(f64::MIN_POSITIVE);
                w.mapv_inplace(|v| v / s);
            }
            self.log_q[r] += s.max(f64::MIN_POSITIVE).ln();
        }
    }

    /// Replaces the rows with `configs` configurations sampled from the
    /// joint predictive of `members`.
    fn resample<R: Rng>(&mut self, members: &[ArrayView2<'_, f64>], configs: usize, rng: &mut R) {
        let m = self.m;
        let mut weights = Array2::<f64>::zeros((configs, m));
        let mut log_q = Vec::with_capacity(configs);
        let mut omega = Vec::with_capacity(configs);
        let mut log_p = vec![0.0; m];
        for s in 0..configs {
            let j0 = rng.random_range(0..m);
            log_p.iter_mut().for_each(|v| *v = 0.0);
            for q in members {
                let y = draw_label(q.row(j0).iter().copied(), rng);
                for j in 0..m {
                    log_p[j] += q[[j, y]].ln();
                }
            }
            let max = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            let mut row = weights.row_mut(s);
            for j in 0..m {
                row[j] = (log_p[j] - max).exp();
                total += row[j];
            }
            row.mapv_inplace(|v| v / total);
            log_q.push(max + total.ln() - (m as f64).ln());
            omega.push(j0);
        }
        self.weights = weights;
        self.log_q = log_q;
        self.omega = omega;
        self.sampled = true;
    }

    /// `Σ_rows weight · H(p(y_c | y_B))` for every candidate, where
    /// `stacked` is m x (candidates·K).
    fn conditional_sweep(&self, stacked: &Array2<f64>, candidates: usize) -> Vec<f64> {
        let k = self.k;
        let mut out = vec![0.0; candidates];
        let chunk = (GEMM_ENTRIES / stacked.ncols().max(1)).max(1);
        let rows = self.rows();
        let mut terms = vec![0.0; stacked.ncols()];
        let mut start = 0;
        while start < rows {
            let end = (start + chunk).min(rows);
            let block = self.weights.slice(ndarray::s![start..end, ..]).dot(stacked);
            for (offset, pred) in block.axis_iter(Axis(0)).enumerate() {
                let weight = self.row_weight(start + offset);
                neg_p_ln_p(pred.as_slice().expect("standard layout"), &mut terms);
                for (acc, group) in out.iter_mut().zip(terms.chunks_exact(k)) {
                    *acc += weight * group.iter().sum::<f64>();
                }
            }
            start = end;
        }
        out
    }
}

/// `-p ln p` elementwise (0 at p = 0), eight lanes at a time.
fn neg_p_ln_p(src: &[f64], dst: &mut [f64]) {
    let zero = f64x8::ZERO;
    let mut src_chunks = src.chunks_exact(8);
    let mut dst_chunks = dst.chunks_exact_mut(8);
    for (s, d) in (&mut src_chunks).zip(&mut dst_chunks) {
        let p = f64x8::from(<[f64; 8]>::try_from(s).expect("eight lanes"));
        let t = p.simd_gt(zero).select(-p * p.ln(), zero);
        d.copy_from_slice(&t.to_array());
    }
    for (s, d) in src_chunks.remainder().iter().zip(dst_chunks.into_remainder()) {
        *d = if *s > 0.0 { -s * s.ln() } else { 0.0 };
    }
}

fn draw_label<R: Rng>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (y, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = y;
        }
        if u < acc {
            return y;
        }
    }
    last
}

fn stack(sample: &PredictiveSample) -> Array2<f64> {
    let (m, n, k) = sample.as_array().dim();
    Array2::from_shape_vec((m, n * k), sample.as_array().iter().copied().collect())
        .expect("m x (n K) values")
}

fn check_sample(sample: &PredictiveSample) -> Result<()> {
    if sample.num_samples() < 2 {
        return Err(Error::invalid("m", "BatchBALD needs at least 2 Monte-Carlo samples"));
    }
    Ok(())
}

/// Joint entropy `H(y_members)` under the mixture over masks, exact or
/// sampled according to `config`.
pub fn joint_entropy(
    sample: &PredictiveSample,
    members: &[usize],
    config: &BatchBaldConfig,
    seed: u64,
) -> Result<f64> {
    check_sample(sample)?;
    config.validate()?;
    if let Some(&bad) = members.iter().find(|&&i| i >= sample.num_candidates()) {
        return Err(Error::invalid("members", format!("index {bad} out of range")));
    }
    let k = sample.num_classes();
    let mut state = JointState::new(sample.num_samples(), k);
    if config.exact_for(k, members.len()) {
        for &i in members {
            state.extend_exact(sample.candidate(i));
        }
    } else {
        let views: Vec<_> = members.iter().map(|&i| sample.candidate(i)).collect();
        let mut rng = rng::rng_for(seed, STREAM_CONFIGS);
        state.resample(&views, config.sampled_configs, &mut rng);
    }
    Ok(state.entropy())
}

/// Mutual information between the labels of `members` and the dropout
/// mask: joint entropy minus the sum of the members' expected entropies.
pub fn joint_mutual_information(
    sample: &PredictiveSample,
    members: &[usize],
    config: &BatchBaldConfig,
    seed: u64,
) -> Result<f64> {
    let joint = joint_entropy(sample, members, config, seed)?;
    let ce = conditional_entropies(sample);
    Ok(joint - members.iter().map(|&i| ce[i]).sum::<f64>())
}

/// Greedy BatchBALD over a predictive sample whose candidate axis lines up
/// with `ids` (document indices, used for tie-breaking and the output).
/// Scores are the joint mutual information of the batch after each pick.
pub fn batchbald_greedy(
    sample: &PredictiveSample,
    ids: &[usize],
    b: usize,
    config: &BatchBaldConfig,
    seed: u64,
) -> Result<Vec<Pick>> {
    check_sample(sample)?;
    config.validate()?;
    if ids.len() != sample.num_candidates() {
        return Err(Error::invalid("candidates", "one id per sampled candidate"));
    }
    if b == 0 {
        return Err(Error::invalid("b", "batch size must be positive"));
    }
    if b > ids.len() {
        return Err(Error::invalid(
            "b",
            format!("{b} exceeds the {} candidates", ids.len()),
        ));
    }

    let bald = bald_scores(sample);
    // Narrow the search to the most informative candidates on their own.
    let keep: Vec<usize> = match config.candidate_pool {
        Some(p) if p.max(b) < ids.len() => {
            let mut order = top_b_from(&bald, ids, p.max(b));
            order.sort_unstable();
            order
        }
        _ => (0..ids.len()).collect(),
    };
    let sample = sample.select(&keep);
    let ids: Vec<usize> = keep.iter().map(|&i| ids[i]).collect();
    let bald: Vec<f64> = keep.iter().map(|&i| bald[i]).collect();

    let n = ids.len();
    let k = sample.num_classes();
    let ce = conditional_entropies(&sample);
    let mut rng = rng::rng_for(seed, STREAM_CONFIGS);
    let mut state = JointState::new(sample.num_samples(), k);
    // Positions still available, and their m x (active K) predictive block.
    let mut active: Vec<usize> = (0..n).collect();
    let mut stacked = stack(&sample);
    let mut members: Vec<usize> = Vec::with_capacity(b);
    let mut ce_sum = 0.0;
    let mut picks = Vec::with_capacity(b);

    for step in 0..b {
        let scores: Vec<f64> = if step == 0 {
            bald.clone()
        } else {
            let base = state.entropy() - ce_sum;
            state
                .conditional_sweep(&stacked, active.len())
                .into_iter()
                .zip(&active)
                .map(|(h, &c)| (base + h - ce[c]).max(0.0))
                .collect()
        };
        let mut best = 0;
        for slot in 1..active.len() {
            let (j, c) = (active[best], active[slot]);
            let (sj, sc) = (scores[best], scores[slot]);
            if sc > sj || (sc == sj && ids[c] < ids[j]) {
                best = slot;
            }
        }
        let pick = active.remove(best);
        members.push(pick);
        ce_sum += ce[pick];
        picks.push(Pick {
            index: ids[pick],
            score: scores[best],
        });
        let kept: Vec<usize> = (0..active.len() + 1)
            .filter(|&slot| slot != best)
            .flat_map(|slot| slot * k..(slot + 1) * k)
            .collect();
        stacked = stacked.select(Axis(1), &kept);
        if step + 1 == b {
            break;
        }
        // The next step scores batches of size members.len() + 1.
        if state.sampled {
            state.extend_sampled(sample.candidate(pick), &mut rng);
        } else if config.exact_for(k, members.len() + 1) {
            state.extend_exact(sample.candidate(pick));
        } else {
            let views: Vec<_> = members.iter().map(|&i| sample.candidate(i)).collect();
            state.resample(&views, config.sampled_configs, &mut rng);
        }
    }
    Ok(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn binary_sample(rows: &[&[f64]]) -> PredictiveSample {
        // rows[c][j] = p(y=1 | ω_j) for candidate c
        let m = rows[0].len();
        let mut probs = Array3::zeros((m, rows.len(), 2));
        for (c, r) in rows.iter().enumerate() {
            for j in 0..m {
                probs[[j, c, 1]] = r[j];
                probs[[j, c, 0]] = 1.0 - r[j];
            }
        }
        PredictiveSample::new(probs).unwrap()
    }

    #[test]
    fn single_member_entropy_is_predictive_entropy() {
        let s = binary_sample(&[&[0.9, 0.1, 0.5, 0.5]]);
        let h = joint_entropy(&s, &[0], &BatchBaldConfig::default(), 0).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn joint_entropy_of_independent_certain_members() {
        let s = binary_sample(&[&[1.0, 1.0], &[0.5, 0.5]]);
        let h = joint_entropy(&s, &[0, 1], &BatchBaldConfig::default(), 0).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicates_add_little_information() {
        // Candidate 0 and 1 are identical and disagree fully across masks;
        // candidate 2 is independent of them.
        let s = binary_sample(&[&[1.0, 0.0, 1.0, 0.0], &[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 0.0]]);
        let picks = batchbald_greedy(&s, &[0, 1, 2], 2, &BatchBaldConfig::default(), 0).unwrap();
        assert_eq!(picks[0].index, 0);
        assert_eq!(picks[1].index, 2);
        assert!((picks[1].score - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_estimate_is_close_to_exact() {
        let s = binary_sample(&[&[0.9, 0.2, 0.6], &[0.3, 0.8, 0.5], &[0.7, 0.7, 0.1]]);
        let exact = joint_entropy(&s, &[0, 1, 2], &BatchBaldConfig::default(), 0).unwrap();
        let sampled_cfg = BatchBaldConfig {
            enumeration_cap: 1,
            ..BatchBaldConfig::default()
        };
        let sampled = joint_entropy(&s, &[0, 1, 2], &sampled_cfg, 3).unwrap();
        assert!((exact - sampled).abs() < 0.05, "{exact} vs {sampled}");
    }

    #[test]
    fn first_pick_is_bald_argmax() {
        let s = PredictiveSample::from_slices(&[
            array![[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]],
            array![[0.7, 0.3], [0.5, 0.5], [0.1, 0.9]],
        ])
        .unwrap();
        let picks = batchbald_greedy(&s, &[10, 11, 12], 1, &BatchBaldConfig::default(), 0).unwrap();
        assert_eq!(picks[0].index, 12);
    }

    #[test]
    fn rejects_oversized_batches() {
        let s = binary_sample(&[&[0.5, 0.4]]);
        assert!(batchbald_greedy(&s, &[0], 2, &BatchBaldConfig::default(), 0).is_err());
    }
}
