use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::models::{train, Architecture, TrainConfig};

/// Discriminative scores: fits a fresh binary logistic model separating
/// `labeled` rows (class 0) from `candidates` (class 1) and returns each
/// candidate's probability of being unlabeled.
pub fn discriminative_scores(
    features: ArrayView2<'_, f64>,
    labeled: &[usize],
    candidates: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if labeled.is_empty() || candidates.is_empty() {
        return Err(Error::invalid(
            "labeled",
            "the discriminator needs both labeled and unlabeled rows",
        ));
    }
    let rows: Vec<usize> = labeled.iter().chain(candidates).copied().collect();
    let x: Array2<f64> = features.select(Axis(0), &rows);
    let y: Vec<usize> = (0..rows.len())
        .map(|i| usize::from(i >= labeled.len()))
        .collect();
    let (model, _) = train(&Architecture::linear(0.0), x.view(), &y, 2, config)?;
    let probs = model.predict_proba(x.slice(ndarray::s![labeled.len().., ..]))?;
    Ok(probs.column(1).to_vec())
}
