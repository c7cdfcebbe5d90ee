use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::rng;

/// Indices labeled at one iteration (iteration 0 holds the initial set).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acquisition {
    pub iteration: usize,
    pub indices: Vec<usize>,
}

/// The labeled set `I_t`, grown monotonically, and its acquisition history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    in_pool: Vec<bool>,
    is_labeled: Vec<bool>,
    labeled: Vec<usize>,
    acquisition_log: Vec<Acquisition>,
}

impl PoolState {
    /// Empty labeled set over the manifest's pool.
    pub fn empty(manifest: &DatasetManifest) -> Self {
        Self {
            in_pool: manifest.pool_mask(),
            is_labeled: vec![false; manifest.n],
            labeled: Vec::new(),
            acquisition_log: Vec::new(),
        }
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    pub fn is_labeled(&self, index: usize) -> bool {
        self.is_labeled.get(index).copied().unwrap_or(false)
    }

    pub fn in_pool(&self, index: usize) -> bool {
        self.in_pool.get(index).copied().unwrap_or(false)
    }

    pub fn pool_size(&self) -> usize {
        self.in_pool.iter().filter(|&&p| p).count()
    }

    /// Pool documents not yet labeled, ascending.
    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.in_pool.len())
            .filter(|&i| self.in_pool[i] && !self.is_labeled[i])
            .collect()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.pool_size() - self.labeled.len()
    }

    pub fn acquisition_log(&self) -> &[Acquisition] {
        &self.acquisition_log
    }

    /// Records `indices` as labeled at `iteration`.
    pub fn extend(&mut self, iteration: usize, indices: &[usize]) -> Result<()> {
        if let Some(last) = self.acquisition_log.last() {
            if iteration < last.iteration {
                return Err(Error::invalid(
                    "iteration",
                    format!("{iteration} precedes recorded iteration {}", last.iteration),
                ));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &i in indices {
            if !self.in_pool(i) {
                return Err(Error::invalid(
                    "indices",
                    format!("{i} is outside the acquirable pool"),
                ));
            }
            if self.is_labeled[i] || !seen.insert(i) {
                return Err(Error::invalid(
                    "indices",
                    format!("{i} is already labeled"),
                ));
            }
        }
        for &i in indices {
            self.is_labeled[i] = true;
            self.labeled.push(i);
        }
        self.acquisition_log.push(Acquisition {
            iteration,
            indices: indices.to_vec(),
        });
        Ok(())
    }

    /// `I_t`: everything acquired at iterations `<= t`.
    pub fn labeled_through(&self, iteration: usize) -> Vec<usize> {
        self.acquisition_log
            .iter()
            .take_while(|a| a.iteration <= iteration)
            .flat_map(|a| a.indices.iter().copied())
            .collect()
    }
}

/// Draws `I_0`: a uniform random subset of the pool of size `n_init`.
pub fn init_pool(manifest: &DatasetManifest, seed: u64, n_init: usize) -> Result<PoolState> {
    let pool = manifest.pool_indices();
    if n_init > pool.len() {
        return Err(Error::invalid(
            "n_init",
            format!("{n_init} exceeds the pool size {}", pool.len()),
        ));
    }
    let mut rng = rng::rng_for(seed, rng::STREAM_INIT_POOL);
    let mut chosen: Vec<usize> = sample(&mut rng, pool.len(), n_init)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    chosen.sort_unstable();
    let mut state = PoolState::empty(manifest);
    state.extend(0, &chosen)?;
    Ok(state)
}

/// Ground-truth labels for `indices`, in input order.
pub fn oracle_label(manifest: &DatasetManifest, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            if i >= manifest.n {
                return Err(Error::invalid(
                    "indices",
                    format!("{i} out of range for n = {}", manifest.n),
                ));
            }
            manifest
                .label(i)
                .ok_or(Error::UnlabeledInBenchmark { index: i })
        })
        .collect()
}
