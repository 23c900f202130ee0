mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use caad::backends::remote::{RemoteConfig, RemoteEmbedder, RemoteLogitModel};
use caad::backends::toy::{ToyEmbedder, ToyLogitModel};
use caad::{build_grounding_space, toy_backends_for, Backends, BuildOptions, Embedder, LogitModel, PromptTemplate};
use serde_json::{json, Value};

type Handler = Arc<dyn Fn(&str, &Value) -> (u16, String) + Send + Sync>;

/// Starts a one-request-per-connection HTTP/1.1 server on an ephemeral port.
fn serve(handler: Handler) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            std::thread::spawn(move || {
                let _ = handle(stream, &*handler);
            });
        }
    });
    format!("http://127.0.0.1:{port}")
}

fn handle(stream: TcpStream, handler: &(dyn Fn(&str, &Value) -> (u16, String) + Send + Sync)) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let (code, text) = handler(&path, &value);
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    )?;
    out.flush()
}

fn ok(v: Value) -> (u16, String) {
    (200, v.to_string())
}

fn ids(v: &Value) -> Vec<u32> {
    serde_json::from_value(v["token_ids"].clone()).unwrap()
}

/// Exposes in-process toy backends over the wire protocol.
fn serve_toy(embedder: ToyEmbedder, model: ToyLogitModel) -> String {
    serve(Arc::new(move |path, body| match path {
        "/v1/info" => ok(json!({
            "embedder_id": embedder.embedder_id(),
            "dim": embedder.dim(),
            "model_id": model.model_id(),
            "vocab_size": model.vocab_size(),
        })),
        "/v1/embed" => {
            let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            match embedder.embed(&refs) {
                Ok(v) => ok(json!({ "vectors": v })),
                Err(e) => (400, json!({ "error": e.to_string() }).to_string()),
            }
        }
        "/v1/tokenize" => ok(json!({ "token_ids": model.tokenize(body["text"].as_str().unwrap()).unwrap() })),
        "/v1/detokenize" => ok(json!({ "text": model.detokenize(&ids(body)).unwrap() })),
        "/v1/logits" => match model.next_logits(&ids(body)) {
            Ok(l) => ok(json!({ "logits": l })),
            Err(e) => (400, json!({ "error": e.to_string() }).to_string()),
        },
        _ => (404, json!({ "error": "no such route" }).to_string()),
    }))
}

fn fixed(info: Value, route: &'static str, reply: (u16, String)) -> String {
    serve(Arc::new(move |path, _| {
        if path == "/v1/info" {
            ok(info.clone())
        } else if path == route {
            reply.clone()
        } else {
            (404, "{}".into())
        }
    }))
}

fn model_info(v: usize) -> Value {
    json!({ "model_id": "mock", "vocab_size": v })
}

fn fast() -> RemoteConfig {
    RemoteConfig {
        timeout: Duration::from_millis(400),
        max_in_flight: 4,
    }
}

#[test]
fn remote_toy_backends_honour_the_same_contract() {
    let corpus = common::sample_corpus();
    let template = PromptTemplate::default();
    let local = toy_backends_for(&corpus, &template);
    let lines = caad::builder::toy_training_lines(&corpus, &template);
    let url = serve_toy(
        ToyEmbedder::default(),
        ToyLogitModel::train(lines.iter().map(String::as_str), 1.0),
    );
    let remote = Backends::remote(&url, &url, RemoteConfig::default()).unwrap();

    assert_eq!(remote.embedder.embedder_id(), local.embedder.embedder_id());
    assert_eq!(remote.model.model_id(), local.model.model_id());
    assert_eq!(remote.model.vocab_size(), local.model.vocab_size());
    let text = template.render("What is the capital of France?");
    let toks = remote.model.tokenize(&text).unwrap();
    assert_eq!(toks, local.model.tokenize(&text).unwrap());
    assert_eq!(remote.model.detokenize(&toks).unwrap(), local.model.detokenize(&toks).unwrap());
    assert_eq!(remote.model.next_logits(&toks).unwrap(), local.model.next_logits(&toks).unwrap());
    assert_eq!(
        remote.embedder.embed(&["a b", "the cat"]).unwrap(),
        local.embedder.embed(&["a b", "the cat"]).unwrap()
    );

    let opts = BuildOptions::default();
    let a = build_grounding_space(&corpus, &local, &opts).unwrap();
    let b = build_grounding_space(&corpus, &remote, &opts).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());

    let cfg = caad::DecodeConfig {
        max_new_tokens: 12,
        ..Default::default()
    };
    let x = caad::decode(&text, &a, cfg.clone(), &local).unwrap();
    let y = caad::decode(&text, &a, cfg, &remote).unwrap();
    assert_eq!(x.tokens, y.tokens);
}

#[test]
fn tokenize_hello_world_golden() {
    let url = serve_toy(ToyEmbedder::default(), ToyLogitModel::train(["hello world"], 1.0));
    let model = RemoteLogitModel::connect(&url, RemoteConfig::default()).unwrap();
    assert_eq!(model.tokenize("hello world").unwrap(), vec![3, 4]);
    assert_eq!(model.tokenize("hello there").unwrap(), vec![3, 2]);
    assert_eq!(model.detokenize(&[0, 3, 4, 1]).unwrap(), "<s> hello world </s>");
}

#[test]
fn embedding_of_wrong_length_is_fatal() {
    let url = fixed(
        json!({ "embedder_id": "mock", "dim": 384 }),
        "/v1/embed",
        ok(json!({ "vectors": [vec![0.5; 383]] })),
    );
    let e = RemoteEmbedder::connect(&url, fast()).unwrap();
    let err = e.embed(&["x"]).unwrap_err();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains("383"), "{err}");

    let url = fixed(
        json!({ "embedder_id": "mock", "dim": 384 }),
        "/v1/embed",
        ok(json!({ "vectors": [vec![0.5; 384]] })),
    );
    assert_eq!(RemoteEmbedder::connect(&url, fast()).unwrap().embed(&["x"]).unwrap()[0].len(), 384);
}

#[test]
fn vector_count_mismatch_is_fatal() {
    let url = fixed(
        json!({ "embedder_id": "mock", "dim": 2 }),
        "/v1/embed",
        ok(json!({ "vectors": [[1.0, 0.0]] })),
    );
    let err = RemoteEmbedder::connect(&url, fast()).unwrap().embed(&["a", "b"]).unwrap_err();
    assert!(!err.is_retryable());
}

#[test]
fn logits_shape_and_values_are_checked() {
    let url = fixed(model_info(4), "/v1/logits", ok(json!({ "logits": [0.0, 1.0, 2.0] })));
    let err = RemoteLogitModel::connect(&url, fast()).unwrap().next_logits(&[1]).unwrap_err();
    assert!(!err.is_retryable());

    let url = fixed(model_info(2), "/v1/tokenize", ok(json!({ "token_ids": [0, 7] })));
    let err = RemoteLogitModel::connect(&url, fast()).unwrap().tokenize("x").unwrap_err();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains('7'));
}

#[test]
fn empty_logits_request_fails_without_a_round_trip() {
    let url = fixed(model_info(4), "/v1/logits", ok(json!({ "logits": [0.0, 0.0, 0.0, 0.0] })));
    let m = RemoteLogitModel::connect(&url, fast()).unwrap();
    assert!(!m.next_logits(&[]).unwrap_err().is_retryable());
    assert_eq!(m.next_logits(&[3]).unwrap(), vec![0.0; 4]);
}

#[test]
fn status_codes_map_to_error_kinds() {
    let bad_request = (400, json!({ "error": "bad ids" }).to_string());
    let url = fixed(model_info(4), "/v1/logits", bad_request);
    let err = RemoteLogitModel::connect(&url, fast()).unwrap().next_logits(&[1]).unwrap_err();
    assert!(!err.is_retryable());
    assert!(err.to_string().contains("bad ids"), "{err}");

    let url = fixed(model_info(4), "/v1/logits", (503, "overloaded".into()));
    let err = RemoteLogitModel::connect(&url, fast()).unwrap().next_logits(&[1]).unwrap_err();
    assert!(err.is_retryable(), "{err}");

    let url = fixed(model_info(4), "/v1/logits", (200, "{\"logits\": [1, 2".into()));
    let err = RemoteLogitModel::connect(&url, fast()).unwrap().next_logits(&[1]).unwrap_err();
    assert!(!err.is_retryable(), "{err}");
}

#[test]
fn slow_endpoint_times_out_as_retryable() {
    let url = serve(Arc::new(|path, _| {
        if path == "/v1/info" {
            return ok(model_info(2));
        }
        std::thread::sleep(Duration::from_secs(2));
        ok(json!({ "logits": [0.0, 0.0] }))
    }));
    let m = RemoteLogitModel::connect(&url, fast()).unwrap();
    let err = m.next_logits(&[1]).unwrap_err();
    assert!(err.is_retryable(), "{err}");
}

#[test]
fn unreachable_endpoint_is_retryable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = RemoteLogitModel::connect(&format!("http://127.0.0.1:{port}"), fast()).unwrap_err();
    assert!(err.is_retryable());
}

#[test]
fn handshake_requires_identity_and_shape() {
    let url = fixed(json!({ "embedder_id": "e" }), "/v1/embed", (404, "{}".into()));
    assert!(!RemoteEmbedder::connect(&url, fast()).unwrap_err().is_retryable());
    let url = fixed(json!({ "vocab_size": 10 }), "/v1/logits", (404, "{}".into()));
    assert!(!RemoteLogitModel::connect(&url, fast()).unwrap_err().is_retryable());
}

