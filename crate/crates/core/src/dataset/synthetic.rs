use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::rng;

/// Gaussian class clusters for desk-scale runs.
///
/// Document `i` belongs to class `i mod K` and is drawn from
/// `N(separation * e_class, I_d)`, so class counts differ by at most one and
/// every class mean has norm `separation`. All labels are known.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    dims: usize,
    num_classes: usize,
    separation: f64,
) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least 2 classes"));
    }
    if n < num_classes {
        return Err(Error::invalid(
            "n",
            format!("{n} documents cannot cover {num_classes} classes"),
        ));
    }
    if dims < num_classes {
        return Err(Error::invalid(
            "dims",
            format!("class means sit on coordinate axes, so dims ({dims}) must be >= K ({num_classes})"),
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(
            "separation",
            format!("must be positive, got {separation}"),
        ));
    }

    let mut rng = rng::rng(seed);
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        labels.push(Some(class));
        for j in 0..dims {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if j == class { separation } else { 0.0 };
            data.push((mean + noise) as f32);
        }
    }
    let matrix = EmbeddingMatrix::new(n, dims, data)?;
    let manifest = DatasetManifest {
        name: format!("synthetic-s{seed}-n{n}-d{dims}-k{num_classes}"),
        n,
        num_classes,
        labels,
        texts: None,
        holdout_indices: None,
    };
    Ok((matrix, manifest))
}

/// Parameters of a synthetic dataset, with a random holdout carved out of
/// the `n` documents. The default is the desk-scale benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub dims: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub holdout: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 10_000,
            dims: 32,
            num_classes: 4,
            separation: 2.5,
            holdout: 2_000,
        }
    }
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<(EmbeddingMatrix, DatasetManifest)> {
        let (matrix, manifest) =
            generate_synthetic(self.seed, self.n, self.dims, self.num_classes, self.separation)?;
        let manifest = if self.holdout > 0 {
            manifest.with_random_holdout(self.holdout, self.seed)?
        } else {
            manifest
        };
        Ok((matrix, manifest))
    }
}
