//! Embedding and logit-model contracts.
//!
//! The engine never looks inside a backend. Anything that implements
//! [`Embedder`] and [`LogitModel`] can drive both space construction and
//! decoding: the in-process toy models in [`toy`] or a remote service
//! speaking the JSON wire protocol in [`remote`].

use std::sync::Arc;

use crate::error::BackendError;

pub mod remote;
pub mod toy;

pub use remote::{RemoteConfig, RemoteEmbedder, RemoteLogitModel};
pub use toy::{ToyEmbedder, ToyLogitModel};

/// Maps text to fixed-length vectors. Must be deterministic.
pub trait Embedder: Send + Sync {
    fn embedder_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, BackendError> {
        let mut out = self.embed(&[text])?;
        out.pop()
            .ok_or_else(|| BackendError::Fatal("embedder returned no vector".into()))
    }
}

/// A causal language model seen through its tokenizer and next-token scores.
pub trait LogitModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn vocab_size(&self) -> usize;
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError>;
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError>;
    /// Pre-softmax scores for the token following `ids`.
    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>, BackendError>;
    /// End-of-sequence id, if the model has one.
    fn eos_token_id(&self) -> Option<u32> {
        None
    }
}

/// A bound embedder and logit model.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Arc<dyn Embedder>,
    pub model: Arc<dyn LogitModel>,
}

impl Backends {
    pub fn new(embedder: Arc<dyn Embedder>, model: Arc<dyn LogitModel>) -> Self {
        Self { embedder, model }
    }

    /// Default toy embedder plus a bigram model trained on `lines`.
    pub fn toy<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(
            Arc::new(ToyEmbedder::default()),
            Arc::new(ToyLogitModel::train(lines, toy::DEFAULT_SMOOTHING)),
        )
    }

    pub fn remote(
        embed_endpoint: &str,
        model_endpoint: &str,
        config: RemoteConfig,
    ) -> Result<Self, BackendError> {
        Ok(Self::new(
            Arc::new(RemoteEmbedder::connect(embed_endpoint, config.clone())?),
            Arc::new(RemoteLogitModel::connect(model_endpoint, config)?),
        ))
    }
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("embedder_id", &self.embedder.embedder_id())
            .field("dim", &self.embedder.dim())
            .field("model_id", &self.model.model_id())
            .field("vocab_size", &self.model.vocab_size())
            .finish()
    }
}

/// 64-bit FNV-1a with the seed folded into the offset basis.
pub(crate) fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
