//! Acquisition functions: score unlabeled candidates and pick the batch to
//! label next.

mod batchbald;
mod coreset;
mod dal;
mod uncertainty;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use batchbald::{batchbald_greedy, joint_entropy, joint_mutual_information, BatchBaldConfig};
pub use coreset::coreset_greedy;
pub use dal::discriminative_scores;
pub use uncertainty::{
    bald_scores, egl_scores, entropy, max_entropy_scores, variation_ratio_scores,
};

use crate::error::{Error, Result};
use crate::models::{PredictiveSample, ProbeModel, TrainConfig};
use crate::rng;

const STREAM_RANDOM: u64 = 31;
const STREAM_MC: u64 = 32;
const STREAM_DAL: u64 = 33;
const STREAM_BATCHBALD: u64 = 34;

/// Default number of Monte-Carlo dropout samples.
pub const DEFAULT_MC_SAMPLES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    MaxEntropy,
    VariationRatio,
    Bald,
    #[serde(rename = "batchbald")]
    BatchBald,
    Dal,
    #[serde(rename = "coreset")]
    CoreSet,
    Egl,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Random,
        Strategy::MaxEntropy,
        Strategy::VariationRatio,
        Strategy::Bald,
        Strategy::BatchBald,
        Strategy::Dal,
        Strategy::CoreSet,
        Strategy::Egl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::MaxEntropy => "max_entropy",
            Strategy::VariationRatio => "variation_ratio",
            Strategy::Bald => "bald",
            Strategy::BatchBald => "batchbald",
            Strategy::Dal => "dal",
            Strategy::CoreSet => "coreset",
            Strategy::Egl => "egl",
        }
    }

    /// Whether scoring needs Monte-Carlo dropout samples.
    pub fn needs_dropout(self) -> bool {
        matches!(self, Strategy::Bald | Strategy::BatchBald)
    }

    /// Whether the strategy looks at the dynamic representation rather than
    /// at model predictions.
    pub fn uses_representation(self) -> bool {
        matches!(self, Strategy::Dal | Strategy::CoreSet)
    }

    /// Picks `b` candidates, best first.
    pub fn select(self, ctx: &AcquisitionContext<'_>, b: usize) -> Result<Vec<Pick>> {
        ctx.validate()?;
        match self {
            Strategy::BatchBald => select_batchbald(ctx, b),
            Strategy::CoreSet => select_coreset(ctx, b),
            _ => {
                let score = match self {
                    Strategy::Random => score_random(ctx)?,
                    Strategy::MaxEntropy => score_max_entropy(ctx)?,
                    Strategy::VariationRatio => score_variation_ratio(ctx)?,
                    Strategy::Bald => score_bald(ctx)?,
                    Strategy::Dal => score_dal(ctx)?,
                    Strategy::Egl => score_egl(ctx)?,
                    Strategy::BatchBald | Strategy::CoreSet => unreachable!(),
                };
                top_b_scored(&score, b)
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("acquisition", format!("unknown scorer {s:?}")))
    }
}

/// One acquired candidate with the score it was chosen on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub index: usize,
    pub score: f64,
}

/// Per-candidate utilities; higher is acquired first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub candidate_indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl AcquisitionScore {
    pub fn new(candidate_indices: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        if candidate_indices.len() != scores.len() {
            return Err(Error::invalid(
                "scores",
                format!("{} scores for {} candidates", scores.len(), candidate_indices.len()),
            ));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite score for candidate {}",
                candidate_indices[pos]
            )));
        }
        Ok(Self {
            candidate_indices,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.candidate_indices
            .iter()
            .position(|&i| i == index)
            .map(|p| self.scores[p])
    }
}

/// Everything a scorer may look at during one iteration.
#[derive(Clone, Debug)]
pub struct AcquisitionContext<'a> {
    /// Precomputed representations, the model's input (one row per document).
    pub features: ArrayView2<'a, f64>,
    /// Space used by CoreSet and DAL: the static features, or the hidden
    /// activations of a retrained model.
    pub dynamic_features: ArrayView2<'a, f64>,
    pub model: &'a ProbeModel,
    pub labeled: &'a [usize],
    /// Unlabeled documents eligible for acquisition.
    pub candidates: &'a [usize],
    pub seed: u64,
    pub mc_samples: usize,
    pub batchbald: BatchBaldConfig,
    /// Training regime of the DAL discriminator.
    pub discriminator: TrainConfig,
}

impl<'a> AcquisitionContext<'a> {
    /// A context over static features with default sampling settings.
    pub fn new(
        features: ArrayView2<'a, f64>,
        model: &'a ProbeModel,
        labeled: &'a [usize],
        candidates: &'a [usize],
        seed: u64,
    ) -> Self {
        Self {
            features,
            dynamic_features: features,
            model,
            labeled,
            candidates,
            seed,
            mc_samples: DEFAULT_MC_SAMPLES,
            batchbald: BatchBaldConfig::default(),
            discriminator: TrainConfig::probe(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.dynamic_features.nrows() != n {
            return Err(Error::invalid(
                "dynamic_features",
                format!("{} rows for {n} documents", self.dynamic_features.nrows()),
            ));
        }
        if self.candidates.is_empty() {
            return Err(Error::invalid("candidates", "no unlabeled candidates"));
        }
        let mut seen = vec![false; n];
        for &i in self.labeled {
            if i >= n {
                return Err(Error::invalid("labeled", format!("index {i} out of range")));
            }
            seen[i] = true;
        }
        for &i in self.candidates {
            if i >= n {
                return Err(Error::invalid("candidates", format!("index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::invalid(
                    "candidates",
                    format!("index {i} is labeled or repeated"),
                ));
            }
            seen[i] = true;
        }
        Ok(())
    }

    fn candidate_features(&self) -> Array2<f64> {
        self.features.select(Axis(0), self.candidates)
    }

    fn probabilities(&self) -> Result<Array2<f64>> {
        self.model.predict_proba(self.candidate_features().view())
    }

    fn mc_sample(&self) -> Result<PredictiveSample> {
        if self.model.dropout_rate() <= 0.0 {
            return Err(Error::Unsupported(
                "Monte-Carlo scoring needs a model with a positive dropout rate".into(),
            ));
        }
        self.model.predict_proba_mc_keyed(
            self.candidate_features().view(),
            self.candidates,
            self.mc_samples,
            rng::derive(self.seed, STREAM_MC),
        )
    }

    fn scored(&self, scores: Vec<f64>) -> Result<AcquisitionScore> {
        AcquisitionScore::new(self.candidates.to_vec(), scores)
    }
}

pub fn score_random(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    if ctx.candidates.is_empty() {
        return Err(Error::invalid("candidates", "no unlabeled candidates"));
    }
    let mut rng = rng::rng_for(ctx.seed, STREAM_RANDOM);
    let scores = (0..ctx.candidates.len()).map(|_| rng.random::<f64>()).collect();
    ctx.scored(scores)
}

pub fn score_max_entropy(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    ctx.scored(max_entropy_scores(ctx.probabilities()?.view()))
}

pub fn score_variation_ratio(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    ctx.scored(variation_ratio_scores(ctx.probabilities()?.view()))
}

pub fn score_bald(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    ctx.scored(bald_scores(&ctx.mc_sample()?))
}

pub fn score_dal(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    let config = ctx
        .discriminator
        .clone()
        .with_seed(rng::derive(ctx.seed, STREAM_DAL));
    ctx.scored(discriminative_scores(
        ctx.dynamic_features,
        ctx.labeled,
        ctx.candidates,
        &config,
    )?)
}

pub fn score_egl(ctx: &AcquisitionContext<'_>) -> Result<AcquisitionScore> {
    if !ctx.model.is_linear() {
        return Err(Error::Unsupported(
            "expected gradient length is defined for the linear probe only".into(),
        ));
    }
    let x = ctx.candidate_features();
    let probs = ctx.model.predict_proba(x.view())?;
    ctx.scored(egl_scores(probs.view(), x.view()))
}

pub fn select_batchbald(ctx: &AcquisitionContext<'_>, b: usize) -> Result<Vec<Pick>> {
    let sample = ctx.mc_sample()?;
    batchbald_greedy(
        &sample,
        ctx.candidates,
        b,
        &ctx.batchbald,
        rng::derive(ctx.seed, STREAM_BATCHBALD),
    )
}

pub fn select_coreset(ctx: &AcquisitionContext<'_>, b: usize) -> Result<Vec<Pick>> {
    coreset_greedy(ctx.dynamic_features, ctx.labeled, ctx.candidates, b)
}

/// Positions of the `b` best scores; ties go to the lowest id.
pub(crate) fn top_b_from(scores: &[f64], ids: &[usize], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &c: &usize| {
        scores[c]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[c]))
    };
    if b < order.len() {
        order.select_nth_unstable_by(b, cmp);
        order.truncate(b);
    }
    order.sort_unstable_by(cmp);
    order
}

/// The `b` highest-scoring candidates by descending score, ties broken by
/// ascending index.
pub fn top_b(score: &AcquisitionScore, b: usize) -> Result<Vec<usize>> {
    Ok(top_b_scored(score, b)?.into_iter().map(|p| p.index).collect())
}

pub fn top_b_scored(score: &AcquisitionScore, b: usize) -> Result<Vec<Pick>> {
    if b > score.len() {
        return Err(Error::invalid(
            "b",
            format!("{b} exceeds the {} candidates", score.len()),
        ));
    }
    Ok(top_b_from(&score.scores, &score.candidate_indices, b)
        .into_iter()
        .map(|p| Pick {
            index: score.candidate_indices[p],
            score: score.scores[p],
        })
        .collect())
}
