//! A single stored context that overrides the model's preferred token.
//!
//! The bigram model sees "p A c" three times and "p B c" once, so after "p"
//! it prefers A by ln 2. One stored entry, embedded from the text "p", puts
//! +10 on B; with alpha = 0.5 that adds 5 to B and the first token flips.

use std::sync::Arc;

use caad::backends::toy::{ToyEmbedder, ToyLogitModel, EOS};
use caad::{decode, greedy_decode, Backends, DecodeConfig, Embedder, LogitModel};
use caad::{LogitDtype, SpaceBuilder, SpaceMeta};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = ToyLogitModel::train(["p A c", "p A c", "p A c", "p B c"], 1.0);
    let embedder = ToyEmbedder::default();
    let b = model.token_id("B").unwrap();

    let mut logits = vec![0f32; model.vocab_size()];
    logits[b as usize] = 10.0;
    let mut builder = SpaceBuilder::new(SpaceMeta {
        dim: embedder.dim(),
        vocab_size: model.vocab_size(),
        chunk_size: 8,
        embedder_id: embedder.embedder_id().into(),
        model_id: model.model_id().into(),
        logit_dtype: LogitDtype::Float32,
    })?;
    builder.append_parts(&embedder.embed_text("p")?, &logits, 0, 1)?;
    let space = builder.seal();
    let backends = Backends::new(Arc::new(embedder), Arc::new(model));

    let mut config = DecodeConfig {
        max_new_tokens: 3,
        ..DecodeConfig::default()
    };
    config.stop_token_ids.insert(EOS);

    let greedy = greedy_decode("p", &config, &*backends.model)?;
    let grounded = decode("p", &space, config, &backends)?;
    println!("greedy:   {:?}", greedy.text);
    println!("grounded: {:?}", grounded.text);
    for s in &grounded.trace.steps {
        println!(
            "step {}: model prefers {:?}, grounded picks {:?}",
            s.step,
            backends.model.detokenize(&[s.model_argmax])?,
            backends.model.detokenize(&[s.final_argmax])?
        );
    }
    Ok(())
}
