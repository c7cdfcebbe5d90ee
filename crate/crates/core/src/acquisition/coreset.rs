use ndarray::{ArrayView2, Axis};

use super::Pick;
use crate::error::{Error, Result};

const BLOCK: usize = 512;

/// k-center greedy: `b` times, pick the candidate farthest (Euclidean, in
/// `features`) from the labeled set and the points picked so far. Ties go
/// to the lowest document index. Scores are the covering distances at pick
/// time.
pub fn coreset_greedy(
    features: ArrayView2<'_, f64>,
    labeled: &[usize],
    candidates: &[usize],
    b: usize,
) -> Result<Vec<Pick>> {
    if labeled.is_empty() {
        return Err(Error::invalid("labeled", "CoreSet needs a non-empty labeled set"));
    }
    if b == 0 {
        return Err(Error::invalid("b", "batch size must be positive"));
    }
    if b > candidates.len() {
        return Err(Error::invalid(
            "b",
            format!("{b} exceeds the {} candidates", candidates.len()),
        ));
    }

    let cand = features.select(Axis(0), candidates);
    let cand_sq: Vec<f64> = cand.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut min_sq = vec![f64::INFINITY; candidates.len()];

    // |a - b|^2 = |a|^2 + |b|^2 - 2 a.b, blocked over the labeled set.
    for block in labeled.chunks(BLOCK) {
        let lab = features.select(Axis(0), block);
        let lab_sq: Vec<f64> = lab.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
        let cross = cand.dot(&lab.t());
        for (i, row) in cross.axis_iter(Axis(0)).enumerate() {
            let mut best = min_sq[i];
            for (j, &c) in row.iter().enumerate() {
                let d = (cand_sq[i] + lab_sq[j] - 2.0 * c).max(0.0);
                if d < best {
                    best = d;
                }
            }
            min_sq[i] = best;
        }
    }

    let mut taken = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(b);
    for _ in 0..b {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j)
                    if min_sq[i] > min_sq[j]
                        || (min_sq[i] == min_sq[j] && candidates[i] < candidates[j]) =>
                {
                    Some(i)
                }
                keep => keep,
            };
        }
        let pick = best.expect("b <= candidate count");
        taken[pick] = true;
        picks.push(Pick {
            index: candidates[pick],
            score: min_sq[pick].sqrt(),
        });
        // Direct distances to the new center.
        let center = cand.row(pick);
        for i in 0..candidates.len() {
            if taken[i] {
                continue;
            }
            let d: f64 = cand
                .row(i)
                .iter()
                .zip(center.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < min_sq[i] {
                min_sq[i] = d;
            }
        }
    }
    Ok(picks)
}
