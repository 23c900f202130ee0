//! Retrieval-grounded greedy decoding.
//!
//! A [`GroundingSpace`] holds (context embedding, next-token logits) pairs
//! taken from verified answers. While decoding, the last few tokens are
//! embedded, the most similar stored contexts are retrieved by exact cosine
//! search, their logits are averaged with softmax-thresholded weights, and
//! the result is added to the model's own logits before the argmax.
//!
//! ```no_run
//! use caad::{build_grounding_space, decode, toy_backends_for, BuildOptions, CorpusSample,
//!            DecodeConfig, PromptTemplate};
//!
//! let corpus = vec![CorpusSample {
//!     question: "where is paris".into(),
//!     answer: "paris is the capital of france".into(),
//! }];
//! let backends = toy_backends_for(&corpus, &PromptTemplate::default());
//! let space = build_grounding_space(&corpus, &backends, &BuildOptions::default())?;
//! let out = decode("where is paris", &space, DecodeConfig::default(), &backends)?;
//! println!("{}", out.text);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod backends;
pub mod bench;
pub mod builder;
pub mod cli;
pub mod decoder;
pub mod error;
pub mod retrieval;
pub mod store;

pub use backends::{Backends, Embedder, LogitModel};
pub use builder::{
    build_grounding_space, plan_chunks, read_corpus, toy_backends_for, BuildOptions, ChunkPlan,
    CorpusSample, PromptTemplate,
};
pub use decoder::{decode, greedy_decode, DecodeConfig, DecodeOutput, DecodeTrace, Decoder, StepRecord};
pub use error::{BackendError, BuildError, DecodeError, FormatError, RetrievalError};
pub use retrieval::{retrieve_and_aggregate, RetrievalResult};
pub use store::{GroundingEntry, GroundingSpace, LogitDtype, SpaceBuilder, SpaceMeta};
