use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Wire value for a document whose class is not known yet.
pub const UNKNOWN_LABEL: i64 = -1;

/// Dataset description: labels, optional texts and the evaluation holdout.
///
/// Labels are `None` for documents that still need a human annotator; on
/// the wire they are written as `-1`, never as class 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawManifest", into = "RawManifest")]
pub struct DatasetManifest {
    pub name: String,
    pub n: usize,
    pub num_classes: usize,
    pub labels: Vec<Option<usize>>,
    pub texts: Option<Vec<String>>,
    pub holdout_indices: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    name: String,
    n: usize,
    num_classes: usize,
    labels: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    texts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    holdout_indices: Option<Vec<usize>>,
}

impl TryFrom<RawManifest> for DatasetManifest {
    type Error = Error;

    fn try_from(raw: RawManifest) -> Result<Self> {
        let labels = raw
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| match l {
                UNKNOWN_LABEL => Ok(None),
                l if l >= 0 => Ok(Some(l as usize)),
                l => Err(Error::Validation(format!(
                    "label {l} at index {i} is negative but not the unknown sentinel -1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = DatasetManifest {
            name: raw.name,
            n: raw.n,
            num_classes: raw.num_classes,
            labels,
            texts: raw.texts,
            holdout_indices: raw.holdout_indices,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

impl From<DatasetManifest> for RawManifest {
    fn from(m: DatasetManifest) -> Self {
        RawManifest {
            name: m.name,
            n: m.n,
            num_classes: m.num_classes,
            labels: m
                .labels
                .iter()
                .map(|l| l.map_or(UNKNOWN_LABEL, |c| c as i64))
                .collect(),
            texts: m.texts,
            holdout_indices: m.holdout_indices,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.labels.len() != self.n {
            return Err(Error::Validation(format!(
                "labels has {} entries but n = {}",
                self.labels.len(),
                self.n
            )));
        }
        if let Some((i, c)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= self.num_classes).map(|c| (i, c)))
        {
            return Err(Error::Validation(format!(
                "label {c} at index {i} is not below num_classes = {}",
                self.num_classes
            )));
        }
        if let Some(texts) = &self.texts {
            if texts.len() != self.n {
                return Err(Error::Validation(format!(
                    "texts has {} entries but n = {}",
                    texts.len(),
                    self.n
                )));
            }
        }
        if let Some(holdout) = &self.holdout_indices {
            let mut seen = HashSet::with_capacity(holdout.len());
            for &i in holdout {
                if i >= self.n {
                    return Err(Error::Validation(format!(
                        "holdout index {i} out of range for n = {}",
                        self.n
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Validation(format!("holdout index {i} repeated")));
                }
            }
            if holdout.len() == self.n {
                return Err(Error::Validation("holdout leaves an empty pool".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn holdout(&self) -> &[usize] {
        self.holdout_indices.as_deref().unwrap_or(&[])
    }

    /// `in_pool[i]` is true when document `i` may be acquired.
    pub fn pool_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.n];
        for &i in self.holdout() {
            mask[i] = false;
        }
        mask
    }

    /// Acquirable documents in ascending order.
    pub fn pool_indices(&self) -> Vec<usize> {
        self.pool_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| p.then_some(i))
            .collect()
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied().flatten()
    }

    /// True when every pool document carries a known label.
    pub fn is_fully_labeled(&self) -> bool {
        self.pool_indices().iter().all(|&i| self.labels[i].is_some())
    }

    /// Moves a uniform random subset of `count` documents into the holdout.
    pub fn with_random_holdout(mut self, count: usize, seed: u64) -> Result<Self> {
        if count >= self.n {
            return Err(Error::invalid(
                "holdout",
                format!("{count} holdout documents leave no pool out of {}", self.n),
            ));
        }
        let mut rng = rng::rng_for(seed, rng::STREAM_HOLDOUT);
        let mut holdout = sample(&mut rng, self.n, count).into_vec();
        holdout.sort_unstable();
        self.holdout_indices = Some(holdout);
        self.validate()?;
        Ok(self)
    }
}
