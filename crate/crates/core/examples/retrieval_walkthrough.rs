//! One retrieval step taken apart: similarity ranking, softmax weights,
//! thresholding, and the blended logits.

use caad::retrieval::{aggregate_logits, softmax_weights, threshold_filter, top_n};
use caad::{LogitDtype, SpaceBuilder, SpaceMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut builder = SpaceBuilder::new(SpaceMeta {
        dim: 2,
        vocab_size: 3,
        chunk_size: 8,
        embedder_id: "demo".into(),
        model_id: "demo".into(),
        logit_dtype: LogitDtype::Float32,
    })?;
    builder.append_parts(&[1.0, 0.0], &[2.0, 0.0, 0.0], 0, 1)?;
    builder.append_parts(&[0.8, 0.6], &[0.0, 2.0, 0.0], 1, 1)?;
    builder.append_parts(&[0.0, 1.0], &[0.0, 0.0, 2.0], 2, 1)?;
    builder.append_parts(&[-1.0, 0.0], &[0.0, 0.0, -4.0], 3, 1)?;
    let space = builder.seal();

    let query = [0.9f32, 0.1];
    let (indices, sims) = top_n(&space, &query, 3)?;
    println!("top 3: {indices:?}");
    println!("cosine: {sims:.4?}");

    let weights = softmax_weights(&sims)?;
    println!("weights: {weights:.4?}");

    for gamma in [0.01, 0.3, 0.9] {
        let selected = threshold_filter(&weights, gamma);
        let agg = aggregate_logits(&space, &indices, &selected, &weights)?;
        let kept: Vec<usize> = selected.iter().map(|&k| indices[k]).collect();
        println!("gamma {gamma:<4}: keeps entries {kept:?}, aggregated {agg:.4?}");
    }
    Ok(())
}
