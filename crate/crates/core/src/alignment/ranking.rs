use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::cosine_similarity;
use crate::scalar::Scalar;

/// Train-sample ids in ascending self-similarity order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedOrder {
    pub ids: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Sorts ascending by score, ties by id.
pub fn rank_scores(ids: &[u32], scores: &[f64]) -> Result<RankedOrder> {
    if ids.len() != scores.len() {
        return Err(Error::Contract(format!("{} ids for {} scores", ids.len(), scores.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("self-similarity score {s}")));
    }
    let mut pairs: Vec<(u32, f64)> = ids.iter().copied().zip(scores.iter().copied()).collect();
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(RankedOrder {
        ids: pairs.iter().map(|p| p.0).collect(),
        scores: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Scores each sample by the mean cosine similarity of its image vector to
/// its two text vectors.
pub fn rank_self_similarity<T: Scalar>(ids: &[u32], img: &[Vec<T>], vlm: &[Vec<T>], llm: &[Vec<T>]) -> Result<RankedOrder> {
    if img.len() != ids.len() || vlm.len() != ids.len() || llm.len() != ids.len() {
        return Err(Error::Contract("embedding counts differ from id count".into()));
    }
    let mut scores = Vec::with_capacity(ids.len());
    for i in 0..ids.len() {
        let a = cosine_similarity(&img[i], &vlm[i])?.f64();
        let b = cosine_similarity(&img[i], &llm[i])?.f64();
        scores.push(0.5 * (a + b));
    }
    rank_scores(ids, &scores)
}
