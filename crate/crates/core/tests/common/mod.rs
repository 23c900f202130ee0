//! Helpers shared by the integration and acceptance suites. The oracles here
//! are written from the definitions and deliberately avoid the library's
//! own retrieval and conversion code.
#![allow(dead_code)]

use std::sync::Arc;

use caad::backends::toy::{ToyEmbedder, ToyLogitModel, EOS};
use caad::backends::Embedder;
use caad::{
    Backends, CorpusSample, GroundingSpace, LogitDtype, LogitModel, SpaceBuilder, SpaceMeta,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample_corpus() -> Vec<CorpusSample> {
    let text = include_str!("../../data/sample_corpus.jsonl");
    caad::builder::parse_corpus(text.as_bytes()).unwrap()
}

const WORDS: &[&str] = &[
    "the", "a", "of", "and", "in", "to", "is", "was", "for", "on", "that", "with", "by", "as",
    "at", "from", "river", "mountain", "city", "capital", "king", "queen", "war", "treaty",
    "science", "theory", "energy", "light", "planet", "star", "moon", "sun", "ocean", "island",
    "north", "south", "east", "west", "century", "year", "born", "died", "wrote", "painted",
    "discovered", "invented", "founded", "built", "ruled", "studied", "known", "famous",
    "largest", "oldest", "first", "second", "third", "many", "several", "most", "some",
    "people", "language", "music", "art", "history", "school", "university", "church", "bridge",
    "road", "trade", "empire", "republic", "army", "navy", "law", "court", "prize", "award",
    "book", "novel", "poem", "song", "film", "play", "theatre", "museum", "library", "garden",
    "forest", "desert", "valley", "lake", "sea", "coast", "border", "region", "province",
    "state", "nation", "government", "election", "president", "minister", "leader", "author",
    "artist", "scientist", "engineer", "doctor", "teacher", "student", "worker", "farmer",
    "water", "fire", "earth", "air", "iron", "gold", "silver", "copper", "stone", "wood",
    "glass", "paper", "ship", "train", "car", "plane", "engine", "machine", "computer",
    "network", "signal", "wave", "field", "force", "mass", "speed", "heat", "cold", "rain",
    "snow", "wind", "storm", "season", "summer", "winter", "spring", "autumn", "morning",
    "evening", "night", "day", "hour", "minute", "early", "late", "new", "old", "great",
    "small", "long", "short", "high", "low", "important", "common", "rare", "ancient",
    "modern", "natural", "public", "private", "national", "local", "central", "major",
];

/// A random corpus of `samples` question/answer pairs whose answers have
/// between `min_len` and `max_len` whitespace tokens.
pub fn synthetic_corpus(seed: u64, samples: usize, min_len: usize, max_len: usize) -> Vec<CorpusSample> {
    let mut r = rng(seed);
    (0..samples)
        .map(|_| {
            let qlen = r.gen_range(3..9);
            let alen = r.gen_range(min_len..=max_len);
            let pick = |r: &mut ChaCha8Rng, n: usize| {
                (0..n)
                    .map(|_| *WORDS.choose(r).unwrap())
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            CorpusSample {
                question: pick(&mut r, qlen),
                answer: pick(&mut r, alen),
            }
        })
        .collect()
}

/// Random prompt of `len` corpus words, possibly with unknown words mixed in.
pub fn random_prompt(r: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| {
            if r.gen_bool(0.1) {
                "zzzunknown"
            } else {
                *WORDS.choose(r).unwrap()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_space(r: &mut ChaCha8Rng, n: usize, d: usize, v: usize) -> GroundingSpace {
    let mut b = SpaceBuilder::new(SpaceMeta {
        dim: d,
        vocab_size: v,
        chunk_size: 8,
        embedder_id: "rand-e".into(),
        model_id: "rand-m".into(),
        logit_dtype: LogitDtype::Float32,
    })
    .unwrap();
    let mut e = vec![0f32; d];
    let mut l = vec![0f32; v];
    for i in 0..n {
        loop {
            e.iter_mut().for_each(|x| *x = r.gen_range(-1.0..1.0));
            if e.iter().any(|&x| x != 0.0) {
                break;
            }
        }
        l.iter_mut().for_each(|x| *x = r.gen_range(-20.0..20.0));
        b.append_parts(&e, &l, i as u32, 1).unwrap();
    }
    b.seal()
}

/// Same entries as `space`, with every stored logit shifted by `c`.
pub fn shifted_space(space: &GroundingSpace, c: f32) -> GroundingSpace {
    let mut b = SpaceBuilder::new(space.meta().clone()).unwrap();
    for e in space.iter() {
        let l: Vec<f32> = e.logits.iter().map(|x| x + c).collect();
        b.append_parts(e.embedding, &l, e.source_id, e.step_index).unwrap();
    }
    b.seal()
}

// ---------------------------------------------------------------------------
// Straight-line recomputation of retrieval and aggregation
// ---------------------------------------------------------------------------

pub struct OracleResult {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
    pub aggregated: Vec<f64>,
}

pub fn oracle_retrieve(space: &GroundingSpace, q: &[f32], n: usize, gamma: f64) -> OracleResult {
    let qn = q.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for i in 0..space.len() {
        let e = space.embedding(i);
        let mut dot = 0f64;
        let mut en = 0f64;
        for j in 0..e.len() {
            dot += q[j] as f64 * e[j] as f64;
            en += e[j] as f64 * e[j] as f64;
        }
        scored.push((i, (dot / (qn * en.sqrt())).clamp(-1.0, 1.0)));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(n);

    let z: f64 = scored.iter().map(|(_, s)| s.exp()).sum();
    let weights: Vec<f64> = scored.iter().map(|(_, s)| s.exp() / z).collect();
    let mut selected: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] >= gamma).collect();
    if selected.is_empty() {
        let mut best = 0;
        for k in 0..weights.len() {
            if weights[k] > weights[best] {
                best = k;
            }
        }
        selected.push(best);
    }
    let ws: f64 = selected.iter().map(|&k| weights[k]).sum();
    let mut aggregated = vec![0f64; space.vocab_size()];
    for &k in &selected {
        let l = space.logits(scored[k].0);
        for v in 0..aggregated.len() {
            aggregated[v] += weights[k] / ws * l[v] as f64;
        }
    }
    OracleResult {
        indices: scored.iter().map(|s| s.0).collect(),
        weights,
        selected,
        aggregated,
    }
}

/// `|a - b| <= tol * max(|a|, |b|)`; purely relative, so zero only matches zero.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ---------------------------------------------------------------------------
// Independent IEEE half-precision conversion
// ---------------------------------------------------------------------------

/// f32 -> binary16 bits with round-to-nearest-even.
pub fn f32_to_f16_bits(x: f32) -> u16 {
    let b = x.to_bits();
    let sign = ((b >> 16) & 0x8000) as u16;
    let exp = ((b >> 23) & 0xff) as i32;
    let man = b & 0x7f_ffff;
    if exp == 0xff {
        return sign | 0x7c00 | if man != 0 { 0x200 } else { 0 };
    }
    let e = exp - 127 + 15;
    if e >= 0x1f {
        return sign | 0x7c00;
    }
    if e <= 0 {
        if e < -10 {
            return sign;
        }
        let m = man | 0x80_0000;
        let shift = (14 - e) as u32;
        let q = m >> shift;
        let rem = m & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        let r = if rem > halfway || (rem == halfway && q & 1 == 1) { q + 1 } else { q };
        return sign | r as u16;
    }
    let mut r = ((e as u32) << 10) | (man >> 13);
    let rem = man & 0x1fff;
    if rem > 0x1000 || (rem == 0x1000 && r & 1 == 1) {
        r += 1;
    }
    sign | r as u16
}

pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = if h & 0x8000 != 0 { -1.0f64 } else { 1.0 };
    let exp = ((h >> 10) & 0x1f) as i32;
    let man = (h & 0x3ff) as f64;
    let v = match exp {
        0 => man * 2f64.powi(-24),
        31 if man == 0.0 => f64::INFINITY,
        31 => f64::NAN,
        _ => (1024.0 + man) * 2f64.powi(exp - 25),
    };
    (sign * v) as f32
}

// ---------------------------------------------------------------------------
// Engineered flip: one stored context pushes token B over the model's A
// ---------------------------------------------------------------------------

/// Toy LM lines: after `p` the model sees A three times and B once.
pub const FLIP_LINES: [&str; 4] = ["p A c", "p A c", "p A c", "p B c"];

pub struct FlipScenario {
    pub backends: Backends,
    pub space: GroundingSpace,
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

pub fn flip_scenario() -> FlipScenario {
    let model = ToyLogitModel::train(FLIP_LINES, 1.0);
    let embedder = ToyEmbedder::default();
    let v = model.vocab_size();
    let (a, b, c) = (
        model.token_id("A").unwrap(),
        model.token_id("B").unwrap(),
        model.token_id("c").unwrap(),
    );
    let mut logits = vec![0f32; v];
    logits[b as usize] = 10.0;
    let mut builder = SpaceBuilder::new(SpaceMeta {
        dim: embedder.dim(),
        vocab_size: v,
        chunk_size: 8,
        embedder_id: embedder.embedder_id().into(),
        model_id: model.model_id().into(),
        logit_dtype: LogitDtype::Float32,
    })
    .unwrap();
    builder
        .append_parts(&embedder.embed_text("p").unwrap(), &logits, 0, 1)
        .unwrap();
    FlipScenario {
        backends: Backends::new(Arc::new(embedder), Arc::new(model)),
        space: builder.seal(),
        a,
        b,
        c,
    }
}

/// Hand evaluation of the flip scenario with alpha = 0.5, V = 7:
///
/// step 1, prev p  (p->A 3, p->B 1; denominator 4 + 7 = 11)
///   model: A = ln(4/11) = -1.012, B = ln(2/11) = -1.705       -> greedy A
///   final: B = -1.705 + 0.5 * 10 = 3.295 > A                  -> grounded B
/// step 2, grounded prev B (B->c 1; denominator 8)
///   model: c = ln(2/8) = -1.386, B = ln(1/8) = -2.079
///   final: B = -2.079 + 5 = 2.921 > c                         -> B (again at step 3)
/// greedy step 2, prev A (A->c 3; denominator 10): c = ln(4/10) -> c
/// greedy step 3, prev c (c->EOS 4): EOS                       -> stop
pub fn flip_expected(s: &FlipScenario) -> (Vec<u32>, Vec<u32>) {
    (vec![s.a, s.c, EOS], vec![s.b, s.b, s.b])
}

/// A LogitModel wrapper counting forward passes.
pub struct Counting<M> {
    pub inner: M,
    pub calls: std::sync::atomic::AtomicUsize,
}

impl<M: LogitModel> LogitModel for Counting<M> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, caad::BackendError> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String, caad::BackendError> {
        self.inner.detokenize(ids)
    }
    fn next_logits(&self, ids: &[u32]) -> Result<Vec<f64>, caad::BackendError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.inner.next_logits(ids)
    }
    fn eos_token_id(&self) -> Option<u32> {
        self.inner.eos_token_id()
    }
}
