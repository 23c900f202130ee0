//! Exact cosine retrieval over a grounding space and softmax-thresholded
//! aggregation of the retrieved logits.
//!
//! Every routine is a pure function of an immutable [`GroundingSpace`], so
//! any number of decode sessions can share one space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::RetrievalError;
use crate::store::{squared_norm, GroundingSpace};

/// Spaces at least this large are scored in parallel.
const PARALLEL_SCAN_MIN: usize = 4096;

/// Everything computed while turning one query into aggregated logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Entry indices into the space, best match first.
    pub indices: Vec<usize>,
    /// Cosine similarity of each retrieved entry, non-increasing.
    pub similarities: Vec<f64>,
    /// Softmax of `similarities`.
    pub weights: Vec<f64>,
    /// Positions into `indices` whose weight passed the threshold.
    pub selected: Vec<usize>,
    pub aggregated_logits: Vec<f64>,
}

/// Cosine similarity with double-precision accumulation, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::LengthMismatch(a.len(), b.len()));
    }
    let na = squared_norm(a).sqrt();
    let nb = squared_norm(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }
    Ok(cosine_with_norms(dot(a, b), na, nb))
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[inline]
fn cosine_with_norms(dot: f64, na: f64, nb: f64) -> f64 {
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// The `min(n, |C|)` entries most similar to `query`, by exhaustive scan.
///
/// Ties in similarity go to the lower entry index.
pub fn top_n(
    space: &GroundingSpace,
    query: &[f32],
    n: usize,
) -> Result<(Vec<usize>, Vec<f64>), RetrievalError> {
    if space.is_empty() {
        return Err(RetrievalError::EmptySpace);
    }
    if n == 0 {
        return Err(RetrievalError::InvalidTopN);
    }
    let d = space.dim();
    if query.len() != d {
        return Err(RetrievalError::LengthMismatch(query.len(), d));
    }
    let qn = squared_norm(query).sqrt();
    if qn == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }

    let score = |(i, e): (usize, &[f32])| cosine_with_norms(dot(query, e), qn, space.embedding_norm(i));
    let scores: Vec<f64> = if space.len() >= PARALLEL_SCAN_MIN {
        space
            .embeddings_flat()
            .par_chunks_exact(d)
            .enumerate()
            .map(score)
            .collect()
    } else {
        space
            .embeddings_flat()
            .chunks_exact(d)
            .enumerate()
            .map(score)
            .collect()
    };

    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = n.min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    order.sort_unstable_by(by_rank);
    let sims = order.iter().map(|&i| scores[i]).collect();
    Ok((order, sims))
}

/// Softmax over raw similarities (no temperature).
pub fn softmax_weights(similarities: &[f64]) -> Result<Vec<f64>, RetrievalError> {
    if similarities.is_empty() {
        return Err(RetrievalError::EmptySimilarities);
    }
    if let Some(i) = similarities.iter().position(|s| !s.is_finite()) {
        return Err(RetrievalError::NonFinite(i));
    }
    let max = similarities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Positions whose weight is `>= gamma`. Never empty: if nothing passes,
/// the single heaviest position (lowest on ties) is kept.
pub fn threshold_filter(weights: &[f64], gamma: f64) -> Vec<usize> {
    let selected: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w >= gamma)
        .map(|(i, _)| i)
        .collect();
    if !selected.is_empty() || weights.is_empty() {
        return selected;
    }
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate().skip(1) {
        if w > weights[best] {
            best = i;
        }
    }
    vec![best]
}

/// Weighted mean of the selected entries' logits, with the selected weights
/// renormalized to sum to one.
///
/// `indices` and `weights` are parallel (one per retrieved entry); `selected`
/// holds positions into them.
pub fn aggregate_logits(
    space: &GroundingSpace,
    indices: &[usize],
    selected: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>, RetrievalError> {
    if selected.is_empty() {
        return Err(RetrievalError::EmptySelection);
    }
    let total: f64 = selected.iter().map(|&n| weights[n]).sum();
    let mut out = vec![0f64; space.vocab_size()];
    for &n in selected {
        let w = weights[n] / total;
        for (acc, &l) in out.iter_mut().zip(space.logits(indices[n])) {
            *acc += w * f64::from(l);
        }
    }
    Ok(out)
}

pub fn retrieve_and_aggregate(
    space: &GroundingSpace,
    query: &[f32],
    n: usize,
    gamma: f64,
) -> Result<RetrievalResult, RetrievalError> {
    let (indices, similarities) = top_n(space, query, n)?;
    let weights = softmax_weights(&similarities)?;
    let selected = threshold_filter(&weights, gamma);
    let aggregated_logits = aggregate_logits(space, &indices, &selected, &weights)?;
    Ok(RetrievalResult {
        indices,
        similarities,
        weights,
        selected,
        aggregated_logits,
    })
}
