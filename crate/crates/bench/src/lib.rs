//! Shared fixtures for the benchmarks: a synthetic pool with a probe
//! trained on its initial labeled set.

use ndarray::{Array2, Axis};
use prepal_core::dataset::{init_pool, SyntheticSpec};
use prepal_core::models::{train, Architecture, ProbeModel, TrainConfig};

pub struct Fixture {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub labeled: Vec<usize>,
    pub candidates: Vec<usize>,
    pub model: ProbeModel,
}

/// `n` documents of dimension `dims` over four classes, `labeled` of them
/// labeled, and the probe fitted to those.
pub fn fixture(n: usize, dims: usize, labeled: usize) -> Fixture {
    let (emb, manifest) = SyntheticSpec {
        n,
        dims,
        holdout: 0,
        ..SyntheticSpec::default()
    }
    .generate()
    .expect("synthetic pool");
    let features = emb.to_f64();
    let labels: Vec<usize> = manifest.labels.iter().map(|l| l.expect("synthetic labels")).collect();
    let pool = init_pool(&manifest, 0, labeled).expect("initial pool");
    let labeled = pool.labeled().to_vec();
    let candidates = pool.unlabeled();
    let x = features.select(Axis(0), &labeled);
    let y: Vec<usize> = labeled.iter().map(|&i| labels[i]).collect();
    let (model, _) = train(&Architecture::linear(0.1), x.view(), &y, manifest.num_classes, &TrainConfig::probe())
        .expect("probe training");
    Fixture {
        features,
        labels,
        labeled,
        candidates,
        model,
    }
}
