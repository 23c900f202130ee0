//! Build a grounding space from the bundled question/answer corpus with the
//! toy backends, save it, and read it back.
//!
//!     cargo run --example build_space -- [OUT.caad]

use std::path::PathBuf;

use caad::{build_grounding_space, read_corpus, toy_backends_for, BuildOptions, GroundingSpace, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/sample_corpus.jsonl");
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("sample_space.caad"));

    let corpus = read_corpus(&corpus_path)?;
    let backends = toy_backends_for(&corpus, &PromptTemplate::default());
    let space = build_grounding_space(&corpus, &backends, &BuildOptions::default())?;
    space.save(&out)?;

    let summary = GroundingSpace::load(&out)?.inspect();
    println!("{} samples -> {} entries at {}", corpus.len(), summary.count, out.display());
    println!("d={} V={} M={}", summary.dim, summary.vocab_size, summary.chunk_size);
    println!("embedder {}\nmodel    {}", summary.embedder_id, summary.model_id);

    // every entry knows where it came from
    for e in space.iter().take(3) {
        let s = &corpus[e.source_id as usize];
        println!("entry from sample {} step {}: {:?}", e.source_id, e.step_index, s.question);
    }
    Ok(())
}
