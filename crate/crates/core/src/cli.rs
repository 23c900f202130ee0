//! Command-line front end. `main.rs` only parses arguments and calls [`run`].

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::backends::{Backends, RemoteConfig};
use crate::bench;
use crate::builder::{build_grounding_space, read_corpus, toy_backends_for, BuildOptions, PromptTemplate};
use crate::decoder::{greedy_decode, write_trace_jsonl, DecodeConfig, DecodeOutput, Decoder};
use crate::store::{GroundingSpace, LogitDtype};

#[derive(Debug, Parser)]
#[command(name = "caad", version, about = "Retrieval-grounded greedy decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a grounding space from a JSON-lines question/answer corpus.
    Build(BuildArgs),
    /// Generate a continuation of one prompt.
    Decode(DecodeArgs),
    /// Run greedy and grounded decoding side by side over a prompts file.
    Compare(CompareArgs),
    /// Measure retrieval + aggregation latency.
    Bench(BenchArgs),
    /// Print shape, provenance, and embedding statistics of a space.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    Float32,
    Float16,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Use the in-process toy embedder and bigram LM trained on --corpus.
    #[arg(long)]
    pub toy_backends: bool,
    #[arg(long, env = "CAAD_EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,
    #[arg(long, env = "CAAD_MODEL_ENDPOINT")]
    pub model_endpoint: Option<String>,
    /// Per-request deadline for remote backends, in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub timeout_secs: f64,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub chunk_size: usize,
    #[arg(long, value_enum, default_value_t = DtypeArg::Float32)]
    pub logit_dtype: DtypeArg,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DecodeOptions {
    #[arg(long)]
    pub space: PathBuf,
    /// Training corpus for --toy-backends; must be the one the space was built from.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Context window in tokens. Defaults to the space's chunk size.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// Wrap each prompt in the question-answering template before decoding.
    #[arg(long)]
    pub qa_template: bool,
    #[command(flatten)]
    pub backends: BackendArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub prompt: String,
    /// Plain greedy decoding, no retrieval.
    #[arg(long)]
    pub greedy: bool,
    /// Write the per-step trace here as JSON lines.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub options: DecodeOptions,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// One prompt per line; blank lines are skipped.
    #[arg(long)]
    pub prompts_file: PathBuf,
    #[command(flatten)]
    pub options: DecodeOptions,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark this space instead of a synthetic one.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    pub entries: usize,
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 512)]
    pub vocab: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    #[arg(long, default_value_t = bench::DEFAULT_BUDGET_MS)]
    pub budget_ms: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

type CliResult = Result<(), String>;

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cli.command {
        Command::Build(a) => cmd_build(a, out),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            1
        }
    }
}

enum BackendChoice {
    Toy(PathBuf),
    Remote { embed: String, model: String, config: RemoteConfig },
}

fn choose_backends(args: &BackendArgs, toy_corpus: Option<&Path>) -> Result<BackendChoice, String> {
    // --toy-backends wins over endpoints, which may come from the environment
    if args.toy_backends {
        let corpus = toy_corpus.ok_or("--toy-backends needs --corpus to train the toy model")?;
        return Ok(BackendChoice::Toy(corpus.to_path_buf()));
    }
    match (&args.embed_endpoint, &args.model_endpoint) {
        (Some(e), Some(m)) => {
            if !(args.timeout_secs > 0.0 && args.timeout_secs.is_finite()) {
                return Err("--timeout-secs must be positive".into());
            }
            Ok(BackendChoice::Remote {
                embed: e.clone(),
                model: m.clone(),
                config: RemoteConfig {
                    timeout: Duration::from_secs_f64(args.timeout_secs),
                    ..RemoteConfig::default()
                },
            })
        }
        (None, None) => Err("no backends: pass --toy-backends or --embed-endpoint and --model-endpoint".into()),
        _ => Err("--embed-endpoint and --model-endpoint must be given together".into()),
    }
}

fn connect(choice: BackendChoice) -> Result<Backends, String> {
    match choice {
        BackendChoice::Toy(path) => {
            let corpus = read_corpus(&path).map_err(|e| e.to_string())?;
            Ok(toy_backends_for(&corpus, &PromptTemplate::default()))
        }
        BackendChoice::Remote { embed, model, config } => {
            Backends::remote(&embed, &model, config).map_err(|e| e.to_string())
        }
    }
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> CliResult {
    serde_json::to_writer_pretty(&mut *out, value).map_err(|e| e.to_string())?;
    writeln!(out).map_err(|e| e.to_string())
}

fn cmd_build(a: BuildArgs, out: &mut dyn Write) -> CliResult {
    if a.chunk_size == 0 {
        return Err("--chunk-size must be at least 1".into());
    }
    let choice = choose_backends(&a.backends, Some(&a.corpus))?;
    if a.out.exists() {
        return Err(format!("{} already exists; refusing to overwrite", a.out.display()));
    }
    let start = Instant::now();
    let corpus = read_corpus(&a.corpus).map_err(|e| e.to_string())?;
    if corpus.is_empty() {
        return Err("empty corpus".into());
    }
    let backends = connect(choice)?;
    let options = BuildOptions {
        chunk_size: a.chunk_size,
        logit_dtype: match a.logit_dtype {
            DtypeArg::Float32 => LogitDtype::Float32,
            DtypeArg::Float16 => LogitDtype::Float16,
        },
        template: PromptTemplate::default(),
    };
    let space = build_grounding_space(&corpus, &backends, &options).map_err(|e| e.to_string())?;
    let bytes = space.to_bytes();
    fs::write(&a.out, &bytes).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let summary = json!({
        "path": a.out.display().to_string(),
        "samples": corpus.len(),
        "count": space.len(),
        "dim": space.dim(),
        "vocab_size": space.vocab_size(),
        "chunk_size": space.chunk_size(),
        "logit_dtype": space.logit_dtype(),
        "embedder_id": space.embedder_id(),
        "model_id": space.model_id(),
        "file_bytes": bytes.len(),
        "file_crc32": format!("{:08x}", crc32fast::hash(&bytes)),
        "elapsed_ms": elapsed_ms,
    });
    match a.format {
        Format::Json => emit_json(out, &summary),
        Format::Text => writeln!(
            out,
            "wrote {} entries (d={}, V={}, M={}) from {} samples to {} in {:.1} ms",
            space.len(),
            space.dim(),
            space.vocab_size(),
            space.chunk_size(),
            corpus.len(),
            a.out.display(),
            elapsed_ms
        )
        .map_err(|e| e.to_string()),
    }
}

struct Session {
    space: GroundingSpace,
    backends: Backends,
    config: DecodeConfig,
    qa_template: bool,
}

impl Session {
    fn open(o: &DecodeOptions) -> Result<Self, String> {
        let choice = choose_backends(&o.backends, o.corpus.as_deref())?;
        let space = GroundingSpace::load(&o.space).map_err(|e| format!("{}: {e}", o.space.display()))?;
        let backends = connect(choice)?;
        let mut config = DecodeConfig {
            chunk_size: o.chunk_size.unwrap_or(space.chunk_size()),
            top_n: o.top_n,
            gamma: o.gamma,
            alpha: o.alpha,
            max_new_tokens: o.max_tokens,
            ..DecodeConfig::default()
        };
        config.stop_token_ids.extend(backends.model.eos_token_id());
        config.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            space,
            backends,
            config,
            qa_template: o.qa_template,
        })
    }

    fn prompt(&self, raw: &str) -> String {
        if self.qa_template {
            PromptTemplate::default().render(raw)
        } else {
            raw.to_string()
        }
    }

    fn grounded(&self, prompt: &str) -> Result<DecodeOutput, String> {
        Decoder::new(&self.space, &self.backends, self.config.clone())
            .and_then(|d| d.decode(prompt))
            .map_err(|e| e.to_string())
    }

    fn greedy(&self, prompt: &str) -> Result<DecodeOutput, String> {
        greedy_decode(prompt, &self.config, &*self.backends.model).map_err(|e| e.to_string())
    }
}

fn cmd_decode(a: DecodeArgs, out: &mut dyn Write) -> CliResult {
    let session = Session::open(&a.options)?;
    let prompt = session.prompt(&a.prompt);
    let (mode, result) = if a.greedy {
        ("greedy", session.greedy(&prompt)?)
    } else {
        ("grounded", session.grounded(&prompt)?)
    };
    if let Some(path) = &a.trace_out {
        let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_trace_jsonl(&mut w, mode, &prompt, &session.config, &result.trace)
            .and_then(|_| w.flush())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    match a.options.format {
        Format::Json => emit_json(
            out,
            &json!({
                "mode": mode,
                "prompt": prompt,
                "text": result.text,
                "tokens": result.tokens,
                "config": session.config,
            }),
        ),
        Format::Text => writeln!(out, "{}", result.text).map_err(|e| e.to_string()),
    }
}

/// 1-based step of the first differing token, or -1 if the sequences match.
pub fn divergence_step(a: &[u32], b: &[u32]) -> i64 {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => i as i64 + 1,
        None if a.len() != b.len() => a.len().min(b.len()) as i64 + 1,
        None => -1,
    }
}

#[derive(Serialize)]
struct CompareRow {
    prompt: String,
    greedy: String,
    grounded: String,
    divergence_step: i64,
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(&a.prompts_file).map_err(|e| format!("{}: {e}", a.prompts_file.display()))?;
    let prompts: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if prompts.is_empty() {
        return Err("empty prompts file".into());
    }
    let session = Session::open(&a.options)?;
    let mut rows = Vec::with_capacity(prompts.len());
    for raw in prompts {
        let prompt = session.prompt(raw);
        let (greedy, grounded) = rayon::join(|| session.greedy(&prompt), || session.grounded(&prompt));
        let (greedy, grounded) = (greedy?, grounded?);
        rows.push(CompareRow {
            prompt: raw.to_string(),
            divergence_step: divergence_step(&greedy.tokens, &grounded.tokens),
            greedy: greedy.text,
            grounded: grounded.text,
        });
    }
    match a.options.format {
        Format::Json => emit_json(out, &json!({ "config": session.config, "rows": rows })),
        Format::Text => {
            let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| e.to_string());
            w(out, "prompt\tgreedy\tgrounded\tdivergence".into())?;
            for r in &rows {
                w(out, format!("{}\t{}\t{}\t{}", r.prompt, r.greedy, r.grounded, r.divergence_step))?;
            }
            Ok(())
        }
    }
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> CliResult {
    if a.trials == 0 {
        return Err("--trials must be at least 1".into());
    }
    if a.top_n == 0 {
        return Err("--top-n must be at least 1".into());
    }
    let space = match &a.space {
        Some(p) => GroundingSpace::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => {
            if a.entries == 0 || a.dim == 0 || a.vocab == 0 {
                return Err("--entries, --dim and --vocab must be positive".into());
            }
            bench::synthetic_space(a.entries, a.dim, a.vocab, a.seed)
        }
    };
    let report = bench::run(&space, a.trials, a.top_n, a.gamma, a.budget_ms, a.seed.wrapping_add(1))
        .map_err(|e| e.to_string())?;
    match a.format {
        Format::Json => emit_json(out, &report),
        Format::Text => writeln!(
            out,
            "{} entries, d={}, V={}: p50 {:.3} ms, p95 {:.3} ms over {} trials, {:.1} MiB; budget {} ms: {}",
            report.entries,
            report.dim,
            report.vocab_size,
            report.p50_ms,
            report.p95_ms,
            report.trials,
            report.memory_bytes as f64 / (1024.0 * 1024.0),
            report.budget_ms,
            if report.pass { "PASS" } else { "FAIL" }
        )
        .map_err(|e| e.to_string()),
    }
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> CliResult {
    let space = GroundingSpace::load(&a.space).map_err(|e| format!("{}: {e}", a.space.display()))?;
    let summary = space.inspect();
    match a.format {
        Format::Json => emit_json(out, &summary),
        Format::Text => writeln!(
            out,
            "{} entries, d={}, V={}, M={}, logits {:?}\nembedder: {}\nmodel: {}",
            summary.count,
            summary.dim,
            summary.vocab_size,
            summary.chunk_size,
            summary.logit_dtype,
            summary.embedder_id,
            summary.model_id
        )
        .map_err(|e| e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence() {
        assert_eq!(divergence_step(&[1, 2, 3], &[1, 2, 3]), -1);
        assert_eq!(divergence_step(&[1, 2, 3], &[4, 2, 3]), 1);
        assert_eq!(divergence_step(&[1, 2, 3], &[1, 2, 9]), 3);
        assert_eq!(divergence_step(&[1, 2], &[1, 2, 3]), 3);
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "caad", "decode", "--space", "s.caad", "--prompt", "hi", "--alpha", "0", "--gamma", "0.1",
            "--toy-backends", "--corpus", "c.jsonl",
        ])
        .unwrap();
        match cli.command {
            Command::Decode(d) => {
                assert_eq!(d.options.alpha, 0.0);
                assert_eq!(d.options.gamma, 0.1);
                assert_eq!(d.options.top_n, 10);
                assert!(d.options.backends.toy_backends);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn backend_choice_requires_consistent_flags() {
        let args = |toy, e: Option<&str>, m: Option<&str>| BackendArgs {
            toy_backends: toy,
            embed_endpoint: e.map(String::from),
            model_endpoint: m.map(String::from),
            timeout_secs: 30.0,
        };
        assert!(choose_backends(&args(false, None, None), None).is_err());
        assert!(choose_backends(&args(true, None, None), None).is_err());
        assert!(choose_backends(&args(false, Some("http://x"), None), None).is_err());
        assert!(matches!(
            choose_backends(&args(true, None, None), Some(Path::new("c"))),
            Ok(BackendChoice::Toy(_))
        ));
        assert!(matches!(
            choose_backends(&args(false, Some("http://a"), Some("http://b")), None),
            Ok(BackendChoice::Remote { .. })
        ));
    }
}
