//! Retrieval-grounded greedy decoding.
//!
//! Each step embeds the last `M` tokens of prompt plus generated text,
//! retrieves and aggregates logits from the grounding space, adds them to
//! the model's own next-token logits scaled by `alpha`, and takes the
//! argmax. Retrieval and the model's forward pass are independent within a
//! step and run concurrently.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, LogitModel};
use crate::error::DecodeError;
use crate::retrieval::{retrieve_and_aggregate, RetrievalResult};
use crate::store::GroundingSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub chunk_size: usize,
    pub top_n: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub max_new_tokens: usize,
    pub stop_token_ids: BTreeSet<u32>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            chunk_size: 8,
            top_n: 10,
            gamma: 0.01,
            alpha: 0.5,
            max_new_tokens: 64,
            stop_token_ids: BTreeSet::new(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_string()));
        if self.chunk_size == 0 {
            return bad("chunk size must be at least 1");
        }
        if self.top_n == 0 {
            return bad("top-N must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must satisfy 0 <= gamma < 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must satisfy 0 <= alpha <= 1");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        Ok(())
    }
}

/// What happened at one decoding step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step number.
    pub step: usize,
    /// Detokenized context window that was embedded. Empty in greedy mode.
    pub context_text: String,
    /// `None` when decoding without retrieval.
    pub retrieval: Option<RetrievalResult>,
    pub model_argmax: u32,
    pub final_argmax: u32,
    pub token: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    /// Generated ids, including a terminating stop token if one was hit.
    pub tokens: Vec<u32>,
    /// Detokenized generated ids, stop tokens excluded.
    pub text: String,
    pub trace: DecodeTrace,
}

/// Embeds the detokenized last `min(chunk_size, len)` tokens of `history`.
pub fn current_context_embedding(
    history: &[u32],
    chunk_size: usize,
    backends: &Backends,
) -> Result<(String, Vec<f32>), DecodeError> {
    if history.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let window = &history[history.len().saturating_sub(chunk_size)..];
    let text = backends.model.detokenize(window)?;
    let embedding = backends.embedder.embed_one(&text)?;
    Ok((text, embedding))
}

/// `model + alpha * aggregated`, elementwise.
pub fn integrate_logits(model: &[f64], aggregated: &[f64], alpha: f64) -> Result<Vec<f64>, DecodeError> {
    if model.len() != aggregated.len() {
        return Err(DecodeError::LengthMismatch(model.len(), aggregated.len()));
    }
    Ok(model
        .iter()
        .zip(aggregated)
        .map(|(m, a)| m + alpha * a)
        .collect())
}

/// Greedy choice: the lowest index holding the maximum.
///
/// Softmax is strictly monotone, so this is also the argmax of the
/// normalized distribution.
///
/// # Panics
///
/// If `logits` is empty.
pub fn select_token(logits: &[f64]) -> u32 {
    assert!(!logits.is_empty(), "cannot select from empty logits");
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate().skip(1) {
        if x > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// A decode session bound to one space, one backend pair, and one config.
pub struct Decoder<'a> {
    space: &'a GroundingSpace,
    backends: &'a Backends,
    config: DecodeConfig,
}

impl<'a> Decoder<'a> {
    /// Fails up front if the backends are not the ones the space was built with.
    pub fn new(
        space: &'a GroundingSpace,
        backends: &'a Backends,
        config: DecodeConfig,
    ) -> Result<Self, DecodeError> {
        config.validate()?;
        check_binding(space, backends)?;
        Ok(Self {
            space,
            backends,
            config,
        })
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn decode(&self, prompt: &str) -> Result<DecodeOutput, DecodeError> {
        let model = &*self.backends.model;
        let mut history = model.tokenize(prompt)?;
        if history.is_empty() {
            return Err(DecodeError::EmptyPrompt);
        }
        let prompt_len = history.len();
        let mut trace = DecodeTrace::default();

        for step in 1..=self.config.max_new_tokens {
            let record = match self.step(&history, step) {
                Ok(r) => r,
                Err(source) => {
                    return Err(DecodeError::Step {
                        step,
                        source: Box::new(source),
                        partial: Box::new(trace),
                    })
                }
            };
            let token = record.token;
            trace.steps.push(record);
            history.push(token);
            if self.config.stop_token_ids.contains(&token) {
                break;
            }
        }
        finish(model, history.split_off(prompt_len), trace, &self.config)
    }

    fn step(&self, history: &[u32], step: usize) -> Result<StepRecord, DecodeError> {
        let c = &self.config;
        let (retrieved, model_logits) = rayon::join(
            || -> Result<_, DecodeError> {
                let (text, query) = current_context_embedding(history, c.chunk_size, self.backends)?;
                let r = retrieve_and_aggregate(self.space, &query, c.top_n, c.gamma)?;
                Ok((text, r))
            },
            || self.backends.model.next_logits(history),
        );
        let (context_text, retrieval) = retrieved?;
        let model_logits = model_logits?;
        let final_logits = integrate_logits(&model_logits, &retrieval.aggregated_logits, c.alpha)?;
        let token = select_token(&final_logits);
        Ok(StepRecord {
            step,
            context_text,
            retrieval: Some(retrieval),
            model_argmax: select_token(&model_logits),
            final_argmax: token,
            token,
        })
    }
}

fn check_binding(space: &GroundingSpace, backends: &Backends) -> Result<(), DecodeError> {
    let (emb, model) = (&backends.embedder, &backends.model);
    if space.model_id() != model.model_id() {
        return Err(DecodeError::IdMismatch {
            what: "model_id",
            space: space.model_id().into(),
            backend: model.model_id().into(),
        });
    }
    if space.embedder_id() != emb.embedder_id() {
        return Err(DecodeError::IdMismatch {
            what: "embedder_id",
            space: space.embedder_id().into(),
            backend: emb.embedder_id().into(),
        });
    }
    if space.dim() != emb.dim() {
        return Err(DecodeError::ShapeMismatch {
            what: "embedding dimension",
            space: space.dim(),
            backend: emb.dim(),
        });
    }
    if space.vocab_size() != model.vocab_size() {
        return Err(DecodeError::ShapeMismatch {
            what: "vocabulary size",
            space: space.vocab_size(),
            backend: model.vocab_size(),
        });
    }
    Ok(())
}

fn finish(
    model: &dyn LogitModel,
    tokens: Vec<u32>,
    trace: DecodeTrace,
    config: &DecodeConfig,
) -> Result<DecodeOutput, DecodeError> {
    let visible: Vec<u32> = tokens
        .iter()
        .copied()
        .filter(|t| !config.stop_token_ids.contains(t))
        .collect();
    let text = model.detokenize(&visible)?;
    Ok(DecodeOutput { tokens, text, trace })
}

pub fn decode(
    prompt: &str,
    space: &GroundingSpace,
    config: DecodeConfig,
    backends: &Backends,
) -> Result<DecodeOutput, DecodeError> {
    Decoder::new(space, backends, config)?.decode(prompt)
}

/// Plain greedy decoding with no retrieval at all. Only `max_new_tokens`
/// and `stop_token_ids` of `config` apply.
pub fn greedy_decode(
    prompt: &str,
    config: &DecodeConfig,
    model: &dyn LogitModel,
) -> Result<DecodeOutput, DecodeError> {
    config.validate()?;
    let mut history = model.tokenize(prompt)?;
    if history.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let prompt_len = history.len();
    let mut trace = DecodeTrace::default();
    for step in 1..=config.max_new_tokens {
        let logits = match model.next_logits(&history) {
            Ok(l) => l,
            Err(e) => {
                return Err(DecodeError::Step {
                    step,
                    source: Box::new(e.into()),
                    partial: Box::new(trace),
                })
            }
        };
        let token = select_token(&logits);
        trace.steps.push(StepRecord {
            step,
            context_text: String::new(),
            retrieval: None,
            model_argmax: token,
            final_argmax: token,
            token,
        });
        history.push(token);
        if config.stop_token_ids.contains(&token) {
            break;
        }
    }
    finish(model, history.split_off(prompt_len), trace, config)
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum TraceLine<'a> {
    Header {
        mode: &'a str,
        config: &'a DecodeConfig,
        prompt: &'a str,
    },
    Step(&'a StepRecord),
}

/// Writes a trace as JSON lines: one header line with the config, then one
/// line per step.
pub fn write_trace_jsonl(
    mut out: impl Write,
    mode: &str,
    prompt: &str,
    config: &DecodeConfig,
    trace: &DecodeTrace,
) -> std::io::Result<()> {
    let header = TraceLine::Header { mode, config, prompt };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for step in &trace.steps {
        serde_json::to_writer(&mut out, &TraceLine::Step(step))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
