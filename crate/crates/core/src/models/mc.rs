use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::network::{drop_threshold, softmax_inplace, ProbeModel};
use crate::error::{Error, Result};
use crate::rng;

/// Class probabilities under `m` independent dropout masks, laid out as
/// `(sample, candidate, class)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSample {
    probs: Array3<f64>,
}

impl PredictiveSample {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (m, _, k) = probs.dim();
        if m == 0 || k == 0 {
            return Err(Error::invalid("probs", "need at least one sample and class"));
        }
        Ok(Self { probs })
    }

    /// Stacks per-sample probability matrices (each `candidates x K`).
    pub fn from_slices(slices: &[Array2<f64>]) -> Result<Self> {
        let views: Vec<_> = slices.iter().map(|s| s.view()).collect();
        let probs = ndarray::stack(Axis(0), &views)
            .map_err(|e| Error::invalid("probs", e.to_string()))?;
        Self::new(probs)
    }

    pub fn num_samples(&self) -> usize {
        self.probs.dim().0
    }

    pub fn num_candidates(&self) -> usize {
        self.probs.dim().1
    }

    pub fn num_classes(&self) -> usize {
        self.probs.dim().2
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.probs
    }

    /// All samples for one candidate, `m x K`.
    pub fn candidate(&self, i: usize) -> ArrayView2<'_, f64> {
        self.probs.index_axis(Axis(1), i)
    }

    /// Mean predictive distribution per candidate.
    pub fn mean(&self) -> Array2<f64> {
        self.probs.mean_axis(Axis(0)).expect("at least one sample")
    }

    /// Keeps the listed candidates, in the given order.
    pub fn select(&self, candidates: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(1), candidates),
        }
    }
}

impl ProbeModel {
    /// Monte-Carlo dropout predictions. Each of the `m` passes applies
    /// inverted dropout to the input features and to every hidden
    /// activation. Row `i` draws its masks from a stream keyed by
    /// `(seed, i)`.
    pub fn predict_proba_mc(
        &self,
        features: ArrayView2<'_, f64>,
        m: usize,
        seed: u64,
    ) -> Result<PredictiveSample> {
        let keys: Vec<usize> = (0..features.nrows()).collect();
        self.predict_proba_mc_keyed(features, &keys, m, seed)
    }

    /// As [`predict_proba_mc`](Self::predict_proba_mc), with mask streams
    /// keyed by `keys[i]` (typically document ids) so that scores do not
    /// depend on candidate order.
    pub fn predict_proba_mc_keyed(
        &self,
        features: ArrayView2<'_, f64>,
        keys: &[usize],
        m: usize,
        seed: u64,
    ) -> Result<PredictiveSample> {
        self.check_dims(&features)?;
        let rate = self.dropout_rate();
        if rate <= 0.0 {
            return Err(Error::invalid(
                "dropout_rate",
                "Monte-Carlo sampling needs a positive dropout rate",
            ));
        }
        if m < 2 {
            return Err(Error::invalid("m", format!("need at least 2 samples, got {m}")));
        }
        if keys.len() != features.nrows() {
            return Err(Error::invalid("keys", "one key per feature row"));
        }
        let n = features.nrows();
        let k = self.num_classes;
        let mut probs = Array3::<f64>::zeros((m, n, k));
        let mut scratch = RowScratch::new(self);
        for (i, row) in features.axis_iter(Axis(0)).enumerate() {
            let mut rng = rng::rng_for(seed, keys[i] as u64);
            let x = row.to_vec();
            for j in 0..m {
                let out = scratch.forward_dropout(self, &x, rate, &mut rng);
                softmax_inplace(out);
                for (c, &p) in out.iter().enumerate() {
                    probs[[j, i, c]] = p;
                }
            }
        }
        PredictiveSample::new(probs)
    }
}

/// Buffers for single-row forward passes.
struct RowScratch {
    buffers: Vec<Vec<f64>>,
}

impl RowScratch {
    fn new(model: &ProbeModel) -> Self {
        let mut buffers = vec![vec![0.0; model.feature_dim]];
        buffers.extend(model.layers.iter().map(|l| vec![0.0; l.bias.len()]));
        Self { buffers }
    }

    fn forward_dropout<R: Rng>(
        &mut self,
        model: &ProbeModel,
        x: &[f64],
        rate: f64,
        rng: &mut R,
    ) -> &mut [f64] {
        let keep = 1.0 / (1.0 - rate);
        let cut = drop_threshold(rate);
        let dropout = |v: &mut [f64], rng: &mut R| {
            for e in v.iter_mut() {
                *e = if rng.next_u32() < cut { 0.0 } else { *e * keep };
            }
        };
        self.buffers[0].copy_from_slice(x);
        dropout(&mut self.buffers[0], rng);
        let last = model.layers.len() - 1;
        for (l, layer) in model.layers.iter().enumerate() {
            let (head, tail) = self.buffers.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.copy_from_slice(layer.bias.as_slice().expect("contiguous bias"));
            let w = layer.weights.as_slice().expect("standard layout weights");
            let width = out.len();
            for (a, wrow) in input.iter().zip(w.chunks_exact(width)) {
                if *a != 0.0 {
                    for (o, &wv) in out.iter_mut().zip(wrow) {
                        *o += a * wv;
                    }
                }
            }
            if l != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                dropout(out, rng);
            }
        }
        &mut self.buffers[last + 1]
    }
}

#[cfg(test)]
mod tests {
    use crate::models::{Architecture, ProbeModel};
    use ndarray::array;

    fn model(rate: f64, hidden: bool) -> ProbeModel {
        let arch = if hidden {
            Architecture::mlp(6, rate)
        } else {
            Architecture::linear(rate)
        };
        ProbeModel::init(&arch, 3, 3, &mut crate::rng::rng(1)).unwrap()
    }

    #[test]
    fn rows_are_normalized() {
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let s = model(0.1, true).predict_proba_mc(x.view(), 7, 3).unwrap();
        for j in 0..7 {
            for i in 0..2 {
                let sum: f64 = (0..3).map(|c| s.as_array()[[j, i, c]]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let m = model(0.1, false);
        let a = m.predict_proba_mc(x.view(), 5, 9).unwrap();
        let b = m.predict_proba_mc(x.view(), 5, 9).unwrap();
        assert_eq!(a, b);
        let c = m.predict_proba_mc(x.view(), 5, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vanishing_rate_matches_deterministic_prediction() {
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0], [-2.0, 0.5, 0.0]];
        for hidden in [false, true] {
            let m = model(1e-6, hidden);
            let exact = m.predict_proba(x.view()).unwrap();
            let s = m.predict_proba_mc(x.view(), 10, 0).unwrap();
            for j in 0..10 {
                for i in 0..3 {
                    for c in 0..3 {
                        assert!((s.as_array()[[j, i, c]] - exact[[i, c]]).abs() < 1e-3);
                    }
                }
            }
        }
    }

    #[test]
    fn keyed_streams_follow_rows() {
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 1.0]];
        let swapped = array![[1.0, 1.0, 1.0], [0.3, -1.0, 2.0]];
        let m = model(0.2, true);
        let a = m.predict_proba_mc_keyed(x.view(), &[10, 20], 4, 1).unwrap();
        let b = m.predict_proba_mc_keyed(swapped.view(), &[20, 10], 4, 1).unwrap();
        assert_eq!(a.candidate(0), b.candidate(1));
        assert_eq!(a.candidate(1), b.candidate(0));
    }

    #[test]
    fn rejects_zero_rate_and_single_sample() {
        let x = array![[0.3, -1.0, 2.0]];
        assert!(model(0.0, false).predict_proba_mc(x.view(), 5, 0).is_err());
        assert!(model(0.1, false).predict_proba_mc(x.view(), 1, 0).is_err());
    }
}
