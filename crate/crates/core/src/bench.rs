//! Retrieval + aggregation latency measurement.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::RetrievalError;
use crate::retrieval::retrieve_and_aggregate;
use crate::store::{GroundingSpace, LogitDtype, SpaceBuilder, SpaceMeta};

/// Per-step budget: twice the roughly 50 ms reported for 30-50k contexts.
pub const DEFAULT_BUDGET_MS: f64 = 100.0;

/// Random space with uniform embeddings in [-1, 1) and logits in [-10, 10).
pub fn synthetic_space(entries: usize, dim: usize, vocab_size: usize, seed: u64) -> GroundingSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = SpaceBuilder::new(SpaceMeta {
        dim,
        vocab_size,
        chunk_size: 8,
        embedder_id: "synthetic".into(),
        model_id: "synthetic".into(),
        logit_dtype: LogitDtype::Float32,
    })
    .expect("synthetic meta is valid");
    let mut e = vec![0f32; dim];
    let mut l = vec![0f32; vocab_size];
    for i in 0..entries {
        e.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        l.iter_mut().for_each(|x| *x = rng.gen_range(-10.0..10.0));
        builder
            .append_parts(&e, &l, i as u32, 1)
            .expect("synthetic entry is valid");
    }
    builder.seal()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub entries: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub trials: usize,
    pub top_n: usize,
    pub gamma: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub memory_bytes: usize,
    pub budget_ms: f64,
    /// `p50_ms <= budget_ms`.
    pub pass: bool,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `trials` calls of retrieve-and-aggregate on random queries.
pub fn run(
    space: &GroundingSpace,
    trials: usize,
    top_n: usize,
    gamma: f64,
    budget_ms: f64,
    seed: u64,
) -> Result<BenchReport, RetrievalError> {
    assert!(trials > 0, "trials must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries: Vec<Vec<f32>> = (0..trials)
        .map(|_| (0..space.dim()).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    // warm caches and the thread pool
    retrieve_and_aggregate(space, &queries[0], top_n, gamma)?;

    let mut times = Vec::with_capacity(trials);
    for q in &queries {
        let start = Instant::now();
        let r = retrieve_and_aggregate(space, q, top_n, gamma)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(r);
    }
    times.sort_by(f64::total_cmp);
    let p50 = percentile(&times, 50.0);
    Ok(BenchReport {
        entries: space.len(),
        dim: space.dim(),
        vocab_size: space.vocab_size(),
        trials,
        top_n,
        gamma,
        p50_ms: p50,
        p95_ms: percentile(&times, 95.0),
        mean_ms: times.iter().sum::<f64>() / trials as f64,
        max_ms: *times.last().unwrap(),
        memory_bytes: space.heap_bytes(),
        budget_ms,
        pass: p50 <= budget_ms,
    })
}
