//! Deterministic in-process stand-ins for a sentence embedder and a causal
//! LM, small enough that every output can be checked by hand.

use std::collections::HashMap;

use super::{fnv1a64, Embedder, LogitModel};
use crate::error::BackendError;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_NGRAM: usize = 3;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];

/// Hashed bag of character n-grams, L2-normalized.
///
/// Counts are integers and the norm is taken in double precision, so the
/// output is identical on every platform.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    dim: usize,
    ngram: usize,
    seed: u64,
    id: String,
}

impl ToyEmbedder {
    pub fn new(dim: usize, ngram: usize, seed: u64) -> Self {
        assert!(dim > 0 && ngram > 0, "dim and n-gram order must be positive");
        Self {
            dim,
            ngram,
            seed,
            id: format!("toy-ngram-d{dim}-n{ngram}-s{seed:x}"),
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        if text.is_empty() {
            return Err(BackendError::Fatal("cannot embed empty text".into()));
        }
        let chars: Vec<char> = text.chars().collect();
        let mut counts = vec![0u64; self.dim];
        let mut buf = String::new();
        let n = self.ngram.min(chars.len());
        for gram in chars.windows(n) {
            buf.clear();
            buf.extend(gram);
            let h = fnv1a64(self.seed, buf.as_bytes());
            counts[(h % self.dim as u64) as usize] += 1;
        }
        let norm = counts
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt();
        Ok(counts.into_iter().map(|c| (c as f64 / norm) as f32).collect())
    }
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM, DEFAULT_NGRAM, 0)
    }
}

impl Embedder for ToyEmbedder {
    fn embedder_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

/// Whitespace-tokenized bigram model with additive smoothing.
///
/// `next_logits` returns `ln(count(prev, v) + k) - ln(sum_u count(prev, u) + k * V)`,
/// a row of proper log-probabilities conditioned on the last token only.
/// Ids 0..3 are `<s>`, `</s>`, `<unk>`; every training line is wrapped in
/// `<s> ... </s>` before counting.
#[derive(Clone, Debug)]
pub struct ToyLogitModel {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    rows: HashMap<u32, Row>,
    smoothing: f64,
    id: String,
}

#[derive(Clone, Debug, Default)]
struct Row {
    counts: HashMap<u32, u64>,
    total: u64,
}

impl ToyLogitModel {
    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>, smoothing: f64) -> Self {
        assert!(smoothing > 0.0, "smoothing constant must be positive");
        let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let mut rows: HashMap<u32, Row> = HashMap::new();
        let mut fingerprint = fnv1a64(0, &smoothing.to_le_bytes());

        for line in lines {
            let mut prev = BOS;
            for word in line.split_whitespace() {
                let id = *index.entry(word.to_string()).or_insert_with(|| {
                    vocab.push(word.to_string());
                    (vocab.len() - 1) as u32
                });
                bump(&mut rows, prev, id);
                prev = id;
                fingerprint = fnv1a64(fingerprint, word.as_bytes());
                fingerprint = fnv1a64(fingerprint, b" ");
            }
            bump(&mut rows, prev, EOS);
            fingerprint = fnv1a64(fingerprint, b"\n");
        }

        let id = format!("toy-bigram-v{}-{fingerprint:016x}", vocab.len());
        Self {
            vocab,
            index,
            rows,
            smoothing,
            id,
        }
    }

    pub fn token_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn bigram_count(&self, prev: u32, next: u32) -> u64 {
        self.rows
            .get(&prev)
            .and_then(|r| r.counts.get(&next))
            .copied()
            .unwrap_or(0)
    }
}

fn bump(rows: &mut HashMap<u32, Row>, prev: u32, next: u32) {
    let row = rows.entry(prev).or_default();
    *row.counts.entry(next).or_insert(0) += 1;
    row.total += 1;
}

impl LogitModel for ToyLogitModel {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Splits on whitespace; unknown words map to `<unk>`.
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        Ok(text
            .split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect())
    }

    /// Joins tokens with single spaces.
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        let words = ids
            .iter()
            .map(|&id| {
                self.token(id)
                    .ok_or_else(|| BackendError::Fatal(format!("token id {id} out of range")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(words.join(" "))
    }

    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>, BackendError> {
        let v = self.vocab.len();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(BackendError::Fatal(format!(
                "token id {bad} out of range for vocabulary of {v}"
            )));
        }
        let prev = *ids
            .last()
            .ok_or_else(|| BackendError::Fatal("next_logits needs at least one token".into()))?;
        let k = self.smoothing;
        let (total, counts) = match self.rows.get(&prev) {
            Some(row) => (row.total as f64, Some(&row.counts)),
            None => (0.0, None),
        };
        let log_z = (total + k * v as f64).ln();
        let mut out = vec![k.ln() - log_z; v];
        if let Some(counts) = counts {
            for (&next, &c) in counts {
                out[next as usize] = (c as f64 + k).ln() - log_z;
            }
        }
        Ok(out)
    }

    fn eos_token_id(&self) -> Option<u32> {
        Some(EOS)
    }
}
