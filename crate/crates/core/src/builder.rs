//! Grounding space construction from a question/answer corpus.
//!
//! For every answer, a window of the last `M` answer tokens before each
//! position `i` is detokenized and embedded, and paired with the model's
//! next-token logits at `i` given the full prefix (question prompt plus
//! answer tokens before `i`). Positions with no preceding answer token are
//! skipped, so an answer of `T` tokens contributes `T - 1` entries.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::error::BuildError;
use crate::store::{GroundingSpace, LogitDtype, SpaceBuilder, SpaceMeta};

/// One verified question/answer pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub question: String,
    pub answer: String,
}

pub const QA_TEMPLATE: &str =
    "Answer the following question with one or two sentences. Question: {question} Answer:";

/// Wraps a question into the text the model is conditioned on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    /// `template` must contain `{question}`.
    pub fn new(template: impl Into<String>) -> Option<Self> {
        let t = template.into();
        t.contains("{question}").then_some(Self(t))
    }

    pub fn render(&self, question: &str) -> String {
        self.0.replace("{question}", question)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(QA_TEMPLATE.to_string())
    }
}

/// One context window and the answer position it predicts.
///
/// Positions are 0-based: `context` covers the tokens immediately before
/// `target`, and `target` ranges over `1..T`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkSpan {
    pub context: Range<usize>,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunks: Vec<ChunkSpan>,
}

pub fn plan_chunks(answer_len: usize, chunk_size: usize) -> Result<ChunkPlan, BuildError> {
    if chunk_size == 0 {
        return Err(BuildError::InvalidChunkSize);
    }
    if answer_len < 2 {
        return Err(BuildError::AnswerTooShort(answer_len));
    }
    let chunks = (1..answer_len)
        .map(|target| ChunkSpan {
            context: target.saturating_sub(chunk_size)..target,
            target,
        })
        .collect();
    Ok(ChunkPlan { chunks })
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub chunk_size: usize,
    pub logit_dtype: LogitDtype,
    pub template: PromptTemplate,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            chunk_size: 8,
            logit_dtype: LogitDtype::Float32,
            template: PromptTemplate::default(),
        }
    }
}

struct SampleRows {
    embeddings: Vec<Vec<f32>>,
    logits: Vec<Vec<f32>>,
    targets: Vec<usize>,
}

/// Samples are processed concurrently; entries are appended in
/// (sample, position) order regardless of completion order.
pub fn build_grounding_space(
    corpus: &[CorpusSample],
    backends: &Backends,
    options: &BuildOptions,
) -> Result<GroundingSpace, BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus);
    }
    let meta = SpaceMeta {
        dim: backends.embedder.dim(),
        vocab_size: backends.model.vocab_size(),
        chunk_size: options.chunk_size,
        embedder_id: backends.embedder.embedder_id().to_string(),
        model_id: backends.model.model_id().to_string(),
        logit_dtype: options.logit_dtype,
    };
    let mut space = SpaceBuilder::new(meta)?;

    let rows: Vec<Result<SampleRows, BuildError>> = corpus
        .par_iter()
        .map(|sample| sample_rows(sample, backends, options, space.meta()))
        .collect();

    for (sample, rows) in rows.into_iter().enumerate() {
        let wrap = |source: BuildError| BuildError::Sample {
            sample,
            source: Box::new(source),
        };
        let rows = rows.map_err(wrap)?;
        for ((e, l), target) in rows.embeddings.iter().zip(&rows.logits).zip(&rows.targets) {
            space
                .append_parts(e, l, sample as u32, *target as u32)
                .map_err(wrap)?;
        }
    }
    Ok(space.seal())
}

fn sample_rows(
    sample: &CorpusSample,
    backends: &Backends,
    options: &BuildOptions,
    meta: &SpaceMeta,
) -> Result<SampleRows, BuildError> {
    let model = &backends.model;
    let prompt_ids = model.tokenize(&options.template.render(&sample.question))?;
    let answer_ids = model.tokenize(&sample.answer)?;
    let plan = plan_chunks(answer_ids.len(), options.chunk_size)?;

    let texts = plan
        .chunks
        .iter()
        .map(|c| model.detokenize(&answer_ids[c.context.clone()]))
        .collect::<Result<Vec<_>, _>>()?;
    let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let embeddings = backends.embedder.embed(&text_refs)?;
    if embeddings.len() != texts.len() {
        return Err(BuildError::DimensionMismatch {
            what: "embedding batch",
            expected: texts.len(),
            got: embeddings.len(),
        });
    }
    if let Some(e) = embeddings.iter().find(|e| e.len() != meta.dim) {
        return Err(BuildError::DimensionMismatch {
            what: "embedding",
            expected: meta.dim,
            got: e.len(),
        });
    }

    let mut prefix = prompt_ids;
    let prompt_len = prefix.len();
    prefix.extend_from_slice(&answer_ids);
    let logits = plan
        .chunks
        .iter()
        .map(|c| {
            let row = model.next_logits(&prefix[..prompt_len + c.target])?;
            if row.len() != meta.vocab_size {
                return Err(BuildError::DimensionMismatch {
                    what: "logits",
                    expected: meta.vocab_size,
                    got: row.len(),
                });
            }
            Ok(row.into_iter().map(|x| x as f32).collect())
        })
        .collect::<Result<Vec<Vec<f32>>, BuildError>>()?;

    Ok(SampleRows {
        embeddings,
        logits,
        targets: plan.chunks.iter().map(|c| c.target).collect(),
    })
}

/// Parses JSON-lines with string fields `question` and `answer`.
/// Blank lines are ignored; the first bad line aborts with its 1-based number.
pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusSample>, BuildError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| BuildError::CorpusParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: CorpusSample =
            serde_json::from_str(&line).map_err(|e| BuildError::CorpusParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusSample>, BuildError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| BuildError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(BufReader::new(file))
}

/// Training text for a toy LM that knows the corpus: each sample's prompt
/// followed by its answer, one line per sample.
pub fn toy_training_lines(corpus: &[CorpusSample], template: &PromptTemplate) -> Vec<String> {
    corpus
        .iter()
        .map(|s| format!("{} {}", template.render(&s.question), s.answer))
        .collect()
}

/// Toy backends trained on `corpus`.
pub fn toy_backends_for(corpus: &[CorpusSample], template: &PromptTemplate) -> Backends {
    let lines = toy_training_lines(corpus, template);
    Backends::toy(lines.iter().map(String::as_str))
}
