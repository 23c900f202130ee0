//! Grounding space storage: the in-memory layout and the `.caad` file format.
//!
//! # File layout
//!
//! ```text
//! offset  size            content
//! 0       8               magic "CAADSPC1"
//! 8       4               header length H, u32 little-endian
//! 12      H               UTF-8 JSON header (see `FileHeader`)
//! 12+H    count * stride  records, each: dim x f32 LE embedding,
//!                         then vocab_size x (f32 | f16) LE logits
//! end-4   4               CRC32 (IEEE) of the record region, u32 LE
//! ```
//!
//! Records have a fixed stride so a reader can seek straight to entry `i`.
//! Provenance (`source_id`, `step_index`) lives in the header as two arrays
//! to keep the record stride equal to the numeric payload.

use std::fs;
use std::path::Path;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{BuildError, FormatError};

pub const MAGIC: [u8; 8] = *b"CAADSPC1";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_ALGORITHM: &str = "crc32";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitDtype {
    Float32,
    Float16,
}

impl LogitDtype {
    pub fn width(self) -> usize {
        match self {
            LogitDtype::Float32 => 4,
            LogitDtype::Float16 => 2,
        }
    }
}

/// One (context embedding, next-token logits) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingEntry {
    pub embedding: Vec<f32>,
    pub logits: Vec<f32>,
    /// Index of the corpus sample this entry came from.
    pub source_id: u32,
    /// Position within that sample's answer of the token the logits predict.
    pub step_index: u32,
}

/// Shape and provenance shared by every entry of a space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceMeta {
    pub dim: usize,
    pub vocab_size: usize,
    pub chunk_size: usize,
    pub embedder_id: String,
    pub model_id: String,
    pub logit_dtype: LogitDtype,
}

impl SpaceMeta {
    fn validate(&self) -> Result<(), BuildError> {
        if self.embedder_id.is_empty() {
            return Err(BuildError::MissingId("embedder_id"));
        }
        if self.model_id.is_empty() {
            return Err(BuildError::MissingId("model_id"));
        }
        if self.chunk_size == 0 {
            return Err(BuildError::InvalidChunkSize);
        }
        if self.dim == 0 {
            return Err(BuildError::DimensionMismatch {
                what: "embedding dimension",
                expected: 1,
                got: 0,
            });
        }
        if self.vocab_size == 0 {
            return Err(BuildError::DimensionMismatch {
                what: "vocabulary size",
                expected: 1,
                got: 0,
            });
        }
        Ok(())
    }

    fn record_stride(&self) -> usize {
        self.dim * 4 + self.vocab_size * self.logit_dtype.width()
    }
}

/// Accumulates entries until [`SpaceBuilder::seal`] turns them into an
/// immutable [`GroundingSpace`].
#[derive(Debug)]
pub struct SpaceBuilder {
    meta: SpaceMeta,
    embeddings: Vec<f32>,
    logits: Vec<f32>,
    source_ids: Vec<u32>,
    step_indices: Vec<u32>,
}

impl SpaceBuilder {
    pub fn new(meta: SpaceMeta) -> Result<Self, BuildError> {
        meta.validate()?;
        Ok(Self {
            meta,
            embeddings: Vec::new(),
            logits: Vec::new(),
            source_ids: Vec::new(),
            step_indices: Vec::new(),
        })
    }

    pub fn meta(&self) -> &SpaceMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn append(&mut self, entry: GroundingEntry) -> Result<(), BuildError> {
        self.append_parts(
            &entry.embedding,
            &entry.logits,
            entry.source_id,
            entry.step_index,
        )
    }

    pub fn append_parts(
        &mut self,
        embedding: &[f32],
        logits: &[f32],
        source_id: u32,
        step_index: u32,
    ) -> Result<(), BuildError> {
        check_vector("embedding", embedding, self.meta.dim)?;
        check_vector("logits", logits, self.meta.vocab_size)?;
        if squared_norm(embedding) == 0.0 {
            return Err(BuildError::ZeroNormEmbedding);
        }
        if self.meta.logit_dtype == LogitDtype::Float16 {
            if let Some(index) = logits.iter().position(|&x| f16::from_f32(x).is_infinite()) {
                return Err(BuildError::NonFinite {
                    what: "logits after float16 rounding",
                    index,
                });
            }
        }
        self.embeddings.extend_from_slice(embedding);
        match self.meta.logit_dtype {
            LogitDtype::Float32 => self.logits.extend_from_slice(logits),
            LogitDtype::Float16 => self
                .logits
                .extend(logits.iter().map(|&x| f16::from_f32(x).to_f32())),
        }
        self.source_ids.push(source_id);
        self.step_indices.push(step_index);
        Ok(())
    }

    pub fn seal(self) -> GroundingSpace {
        let dim = self.meta.dim;
        let norms = self
            .embeddings
            .chunks_exact(dim)
            .map(|e| squared_norm(e).sqrt())
            .collect();
        GroundingSpace {
            meta: self.meta,
            embeddings: self.embeddings,
            logits: self.logits,
            source_ids: self.source_ids,
            step_indices: self.step_indices,
            norms,
        }
    }
}

fn check_vector(what: &'static str, v: &[f32], expected: usize) -> Result<(), BuildError> {
    if v.len() != expected {
        return Err(BuildError::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        });
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(BuildError::NonFinite { what, index });
    }
    Ok(())
}

/// Sum of squares accumulated in double precision, in index order.
pub(crate) fn squared_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Borrowed view of one entry in a sealed space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryRef<'a> {
    pub embedding: &'a [f32],
    pub logits: &'a [f32],
    pub source_id: u32,
    pub step_index: u32,
}

impl EntryRef<'_> {
    pub fn to_owned(&self) -> GroundingEntry {
        GroundingEntry {
            embedding: self.embedding.to_vec(),
            logits: self.logits.to_vec(),
            source_id: self.source_id,
            step_index: self.step_index,
        }
    }
}

/// A sealed, read-only grounding space.
///
/// Embeddings and logits are kept in two flat row-major buffers. Float16
/// spaces hold their logits already rounded through half precision, so the
/// in-memory values are exactly what the file stores.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingSpace {
    meta: SpaceMeta,
    embeddings: Vec<f32>,
    logits: Vec<f32>,
    source_ids: Vec<u32>,
    step_indices: Vec<u32>,
    norms: Vec<f64>,
}

impl GroundingSpace {
    pub fn meta(&self) -> &SpaceMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.meta.vocab_size
    }

    pub fn chunk_size(&self) -> usize {
        self.meta.chunk_size
    }

    pub fn embedder_id(&self) -> &str {
        &self.meta.embedder_id
    }

    pub fn model_id(&self) -> &str {
        &self.meta.model_id
    }

    pub fn logit_dtype(&self) -> LogitDtype {
        self.meta.logit_dtype
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        let d = self.meta.dim;
        &self.embeddings[i * d..(i + 1) * d]
    }

    pub fn logits(&self, i: usize) -> &[f32] {
        let v = self.meta.vocab_size;
        &self.logits[i * v..(i + 1) * v]
    }

    /// L2 norm of embedding `i`, computed once at seal time.
    pub fn embedding_norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    /// All embeddings as one row-major `len x dim` buffer.
    pub fn embeddings_flat(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn entry(&self, i: usize) -> EntryRef<'_> {
        EntryRef {
            embedding: self.embedding(i),
            logits: self.logits(i),
            source_id: self.source_ids[i],
            step_index: self.step_indices[i],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = EntryRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.entry(i))
    }

    /// Approximate resident size of the numeric payload, in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.embeddings.len() * 4
            + self.logits.len() * 4
            + self.norms.len() * 8
            + (self.source_ids.len() + self.step_indices.len()) * 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FileHeader {
            format_version: FORMAT_VERSION,
            dim: self.meta.dim,
            vocab_size: self.meta.vocab_size,
            chunk_size: self.meta.chunk_size,
            count: self.len(),
            embedder_id: self.meta.embedder_id.clone(),
            model_id: self.meta.model_id.clone(),
            logit_dtype: self.meta.logit_dtype,
            checksum: CHECKSUM_ALGORITHM.to_string(),
            record_stride: self.meta.record_stride(),
            source_ids: self.source_ids.clone(),
            step_indices: self.step_indices.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let records_len = self.len() * self.meta.record_stride();

        let mut out = Vec::with_capacity(8 + 4 + header.len() + records_len + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        let records_start = out.len();
        for i in 0..self.len() {
            for x in self.embedding(i) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            match self.meta.logit_dtype {
                LogitDtype::Float32 => {
                    for x in self.logits(i) {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                LogitDtype::Float16 => {
                    for &x in self.logits(i) {
                        out.extend_from_slice(&f16::from_f32(x).to_le_bytes());
                    }
                }
            }
        }
        let crc = crc32fast::hash(&out[records_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < 8 {
            return Err(FormatError::Truncated("magic"));
        }
        let magic: [u8; 8] = bytes[..8].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let header_len = bytes
            .get(8..12)
            .ok_or(FormatError::Truncated("header length"))?;
        let header_len = u32::from_le_bytes(header_len.try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(12..12 + header_len)
            .ok_or(FormatError::Truncated("header"))?;
        let header: FileHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| FormatError::Header(e.to_string()))?;

        if header.format_version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(header.format_version));
        }
        if header.checksum != CHECKSUM_ALGORITHM {
            return Err(FormatError::Header(format!(
                "unknown checksum algorithm {:?}",
                header.checksum
            )));
        }
        let meta = SpaceMeta {
            dim: header.dim,
            vocab_size: header.vocab_size,
            chunk_size: header.chunk_size,
            embedder_id: header.embedder_id,
            model_id: header.model_id,
            logit_dtype: header.logit_dtype,
        };
        let stride = meta.record_stride();
        if header.record_stride != stride {
            return Err(FormatError::Header(format!(
                "record stride {} does not match dim/vocab/dtype ({stride})",
                header.record_stride
            )));
        }
        if header.source_ids.len() != header.count || header.step_indices.len() != header.count
        {
            return Err(FormatError::Header(
                "provenance arrays disagree with record count".into(),
            ));
        }

        let records_start = 12 + header_len;
        let records_len = header
            .count
            .checked_mul(stride)
            .ok_or_else(|| FormatError::Header("record count overflows".into()))?;
        let expected_total = records_start + records_len + 4;
        if bytes.len() < expected_total {
            return Err(FormatError::Truncated("records"));
        }
        if bytes.len() > expected_total {
            return Err(FormatError::Header(format!(
                "{} trailing bytes after checksum",
                bytes.len() - expected_total
            )));
        }
        let records = &bytes[records_start..records_start + records_len];
        let expected_crc = u32::from_le_bytes(bytes[expected_total - 4..].try_into().unwrap());
        let actual_crc = crc32fast::hash(records);
        if expected_crc != actual_crc {
            return Err(FormatError::ChecksumMismatch {
                expected: expected_crc,
                actual: actual_crc,
            });
        }

        let mut builder = SpaceBuilder::new(meta).map_err(|e| FormatError::Header(e.to_string()))?;
        let (d, v) = (builder.meta.dim, builder.meta.vocab_size);
        let mut embedding = vec![0f32; d];
        let mut logits = vec![0f32; v];
        for (index, record) in records.chunks_exact(stride).enumerate() {
            let (emb_bytes, logit_bytes) = record.split_at(d * 4);
            for (dst, src) in embedding.iter_mut().zip(emb_bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(src.try_into().unwrap());
            }
            match builder.meta.logit_dtype {
                LogitDtype::Float32 => {
                    for (dst, src) in logits.iter_mut().zip(logit_bytes.chunks_exact(4)) {
                        *dst = f32::from_le_bytes(src.try_into().unwrap());
                    }
                }
                LogitDtype::Float16 => {
                    for (dst, src) in logits.iter_mut().zip(logit_bytes.chunks_exact(2)) {
                        *dst = f16::from_le_bytes(src.try_into().unwrap()).to_f32();
                    }
                }
            }
            builder
                .append_parts(
                    &embedding,
                    &logits,
                    header.source_ids[index],
                    header.step_indices[index],
                )
                .map_err(|source| FormatError::Record { index, source })?;
        }
        Ok(builder.seal())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Shape, provenance, and per-dimension embedding statistics.
    pub fn inspect(&self) -> SpaceSummary {
        let d = self.meta.dim;
        let n = self.len() as f64;
        let mut mean = vec![0f64; d];
        let mut m2 = vec![0f64; d];
        for e in self.embeddings.chunks_exact(d) {
            for (j, &x) in e.iter().enumerate() {
                mean[j] += f64::from(x);
            }
        }
        if n > 0.0 {
            mean.iter_mut().for_each(|m| *m /= n);
            for e in self.embeddings.chunks_exact(d) {
                for (j, &x) in e.iter().enumerate() {
                    let dx = f64::from(x) - mean[j];
                    m2[j] += dx * dx;
                }
            }
        }
        let std = m2
            .into_iter()
            .map(|s| if n > 0.0 { (s / n).sqrt() } else { 0.0 })
            .collect();
        SpaceSummary {
            count: self.len(),
            dim: d,
            vocab_size: self.meta.vocab_size,
            chunk_size: self.meta.chunk_size,
            logit_dtype: self.meta.logit_dtype,
            embedder_id: self.meta.embedder_id.clone(),
            model_id: self.meta.model_id.clone(),
            embedding_mean: mean,
            embedding_std: std,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    format_version: u32,
    dim: usize,
    vocab_size: usize,
    chunk_size: usize,
    count: usize,
    embedder_id: String,
    model_id: String,
    logit_dtype: LogitDtype,
    checksum: String,
    record_stride: usize,
    source_ids: Vec<u32>,
    step_indices: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceSummary {
    pub count: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub chunk_size: usize,
    pub logit_dtype: LogitDtype,
    pub embedder_id: String,
    pub model_id: String,
    pub embedding_mean: Vec<f64>,
    /// Population standard deviation per dimension.
    pub embedding_std: Vec<f64>,
}
