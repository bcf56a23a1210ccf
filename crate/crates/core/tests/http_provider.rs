use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use posbias::providers::{EmbeddingCache, Provider, ProviderConfig, ProviderKind};
use posbias::Error;
use serde_json::{json, Value};

#[derive(Default)]
struct Log {
    bodies: Vec<Value>,
    auth: Vec<Option<String>>,
}

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
    log: Arc<Mutex<Log>>,
}

/// Deterministic 4-d vector for a text.
fn vector_for(text: &str) -> Vec<f64> {
    let words = text.split_whitespace().count() as f64;
    let bytes = text.len() as f64;
    let vowels = text.chars().filter(|c| "aeiou".contains(*c)).count() as f64;
    vec![words, bytes / 10.0, vowels, 1.0]
}

fn read_request(stream: &mut TcpStream) -> Option<(Option<String>, Value)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut length = 0;
    let mut auth = None;
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        let (name, value) = trimmed.split_once(':')?;
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "authorization" => auth = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((auth, serde_json::from_slice(&body).ok()?))
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        429 => "Too Many Requests",
        _ => "Server Error",
    };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

/// `script(n)` picks the status for the n-th request (0-based); 200 replies
/// embed every input.
fn serve(cohere: bool, script: impl Fn(usize) -> u16 + Send + Sync + 'static) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let log = Arc::new(Mutex::new(Log::default()));
    let script = Arc::new(script);
    {
        let hits = hits.clone();
        let log = log.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let hits = hits.clone();
                let log = log.clone();
                let script = script.clone();
                std::thread::spawn(move || {
                    let Some((auth, body)) = read_request(&mut stream) else { return };
                    let n = hits.fetch_add(1, Ordering::SeqCst);
                    {
                        let mut log = log.lock().unwrap();
                        log.bodies.push(body.clone());
                        log.auth.push(auth);
                    }
                    let status = script(n);
                    if status != 200 {
                        respond(&mut stream, status, r#"{"error":"scripted"}"#);
                        return;
                    }
                    let inputs: Vec<String> = body["input"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|v| v.as_str().unwrap().to_string())
                        .collect();
                    let reply = if cohere {
                        json!({"embeddings": inputs.iter().map(|t| vector_for(t)).collect::<Vec<_>>()})
                    } else {
                        // Out of order on purpose; clients must sort by index.
                        let data: Vec<Value> = inputs
                            .iter()
                            .enumerate()
                            .rev()
                            .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": vector_for(t)}))
                            .collect();
                        json!({"object": "list", "data": data})
                    };
                    respond(&mut stream, 200, &reply.to_string());
                });
            }
        });
    }
    MockServer { url, hits, log }
}

fn config(server: &MockServer, kind: ProviderKind) -> ProviderConfig {
    let mut c = ProviderConfig::openai("mock", &server.url, "mock-model", 512);
    c.kind = kind;
    c.retry_base_ms = 1;
    c
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("text number {i} about a quiet harbor")).collect()
}

#[test]
fn openai_shape_batches_and_orders() {
    let server = serve(false, |_| 200);
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), None).unwrap();
    let inputs = texts(150);
    let out = provider.embed(&inputs).unwrap();
    assert_eq!(out.len(), 150);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert_eq!(provider.upstream_requests(), 3);
    for (text, v) in inputs.iter().zip(&out) {
        let raw = vector_for(text);
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in v.values.iter().zip(&raw) {
            assert!((a - b / norm).abs() < 1e-12);
        }
        assert!(v.normalized);
        assert_eq!(v.model_id, "mock-model");
    }
    let log = server.log.lock().unwrap();
    let mut sizes: Vec<usize> = log.bodies.iter().map(|b| b["input"].as_array().unwrap().len()).collect();
    sizes.sort();
    assert_eq!(sizes, vec![22, 64, 64]);
    for body in &log.bodies {
        assert_eq!(body["model"], "mock-model");
        assert!(body.get("input_type").is_none());
    }
}

#[test]
fn duplicates_are_sent_once() {
    let server = serve(false, |_| 200);
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), None).unwrap();
    let out = provider.embed(&["same words", "other words", "same words"]).unwrap();
    assert_eq!(out[0], out[2]);
    let log = server.log.lock().unwrap();
    assert_eq!(log.bodies.len(), 1);
    assert_eq!(log.bodies[0]["input"].as_array().unwrap().len(), 2);
}

#[test]
fn cohere_shape_sends_input_type() {
    let server = serve(true, |_| 200);
    let mut c = config(&server, ProviderKind::HttpCohereShape);
    c.input_type = "search_query".into();
    let provider = Provider::new(c, None).unwrap();
    let out = provider.embed(&["alpha beta", "gamma"]).unwrap();
    assert_eq!(out.len(), 2);
    let log = server.log.lock().unwrap();
    assert_eq!(log.bodies[0]["input_type"], "search_query");
    assert_eq!(log.bodies[0]["input"], json!(["alpha beta", "gamma"]));
}

#[test]
fn api_key_is_sent_as_bearer_token() {
    let server = serve(false, |_| 200);
    let mut c = config(&server, ProviderKind::HttpOpenaiShape);
    c.api_key_env = Some("POSBIAS_TEST_MOCK_KEY".into());
    std::env::set_var("POSBIAS_TEST_MOCK_KEY", "sk-test");
    let provider = Provider::new(c, None).unwrap();
    provider.embed(&["hello there"]).unwrap();
    assert_eq!(server.log.lock().unwrap().auth[0].as_deref(), Some("Bearer sk-test"));
}

#[test]
fn missing_api_key_fails_at_construction() {
    let server = serve(false, |_| 200);
    let mut c = config(&server, ProviderKind::HttpOpenaiShape);
    c.api_key_env = Some("POSBIAS_TEST_DEFINITELY_UNSET".into());
    assert!(matches!(Provider::new(c, None), Err(Error::MissingApiKey(_))));
    assert_eq!(server.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let server = serve(false, |n| match n {
        0 => 429,
        1 => 503,
        _ => 200,
    });
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), None).unwrap();
    let out = provider.embed(&["one text"]).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_five_attempts() {
    let server = serve(false, |_| 500);
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), None).unwrap();
    match provider.embed(&["one text"]) {
        Err(Error::Upstream { attempts, .. }) => assert_eq!(attempts, 5),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(false, |_| 400);
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), None).unwrap();
    match provider.embed(&["one text"]) {
        Err(Error::Upstream { attempts, message, .. }) => {
            assert_eq!(attempts, 1);
            assert!(message.contains("400"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn warm_cache_skips_the_network() {
    let server = serve(false, |_| 200);
    let dir = tempfile::tempdir().unwrap();
    let inputs = texts(10);
    let first = {
        let cache = Arc::new(EmbeddingCache::open(dir.path()).unwrap());
        let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), Some(cache)).unwrap();
        provider.embed(&inputs).unwrap()
    };
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    let cache = Arc::new(EmbeddingCache::open(dir.path()).unwrap());
    let provider = Provider::new(config(&server, ProviderKind::HttpOpenaiShape), Some(cache)).unwrap();
    let second = provider.embed(&inputs).unwrap();
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    assert_eq!(provider.upstream_requests(), 0);
    assert_eq!(first, second);
}
