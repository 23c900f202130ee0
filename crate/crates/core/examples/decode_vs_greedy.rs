//! Grounded decoding next to plain greedy decoding on the sample corpus,
//! with the per-step trace for the first prompt.
//!
//! The toy model is a bigram model, so the logits stored for an answer
//! position depend only on the previous token and the blend rarely changes
//! the output. The trace is the interesting part: it shows which stored
//! answers each step pulled in.

use caad::backends::toy::EOS;
use caad::{build_grounding_space, decode, greedy_decode, read_corpus, toy_backends_for};
use caad::{BuildOptions, DecodeConfig, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let corpus = read_corpus(dir.join("sample_corpus.jsonl"))?;
    let template = PromptTemplate::default();
    let backends = toy_backends_for(&corpus, &template);
    let space = build_grounding_space(&corpus, &backends, &BuildOptions::default())?;

    let mut config = DecodeConfig {
        max_new_tokens: 24,
        ..DecodeConfig::default()
    };
    config.stop_token_ids.insert(EOS);

    let prompts = std::fs::read_to_string(dir.join("prompts.txt"))?;
    for (i, question) in prompts.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let prompt = template.render(question);
        let greedy = greedy_decode(&prompt, &config, &*backends.model)?;
        let grounded = decode(&prompt, &space, config.clone(), &backends)?;
        // a bigram model has little to say; a heavier blend shows the space at work
        let strong = decode(&prompt, &space, DecodeConfig { alpha: 1.0, ..config.clone() }, &backends)?;
        println!("Q: {question}");
        println!("  greedy:      {}", greedy.text);
        println!("  alpha 0.5:   {}", grounded.text);
        println!("  alpha 1.0:   {}", strong.text);

        if i == 0 {
            for s in grounded.trace.steps.iter().take(4) {
                let r = s.retrieval.as_ref().unwrap();
                let sources: Vec<u32> = r.selected.iter().map(|&k| space.entry(r.indices[k]).source_id).collect();
                println!(
                    "    step {}: context {:?}\n      kept {} of {} (from samples {:?}), model {:?} -> final {:?}",
                    s.step,
                    s.context_text,
                    r.selected.len(),
                    r.indices.len(),
                    sources,
                    backends.model.detokenize(&[s.model_argmax])?,
                    backends.model.detokenize(&[s.final_argmax])?,
                );
            }
        }
    }
    Ok(())
}
