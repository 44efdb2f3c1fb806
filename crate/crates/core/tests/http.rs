use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value as Json};

use semops::lm::http::{HttpBackend, HttpConfig};
use semops::lm::{LmBackend, LmError, LmRequest, RetryPolicy, TRUE_FALSE};
use semops::{sem_filter, Column, FilterOptions, Langex, Session, Table};

type Handler = dyn Fn(usize, &Json) -> (u16, String) + Send + Sync;

struct Server {
    base_url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<(Option<String>, Json)>>>,
}

/// Minimal chat-completions endpoint; `handler` sees the hit number and the
/// parsed request body.
fn serve(handler: impl Fn(usize, &Json) -> (u16, String) + Send + Sync + 'static) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    let (h, b) = (Arc::clone(&hits), Arc::clone(&bodies));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut auth, mut line) = (0, None, String::new());
            reader.read_line(&mut line).unwrap();
            assert!(line.starts_with("POST /v1/chat/completions "), "{line}");
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                let (name, value) = l.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Json = serde_json::from_slice(&body).unwrap();
            let n = h.fetch_add(1, Ordering::SeqCst);
            let (status, text) = handler(n, &body);
            b.lock().unwrap().push((auth, body));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    Server { base_url, hits, bodies }
}

fn config(base_url: &str) -> HttpConfig {
    HttpConfig {
        id: "remote".into(),
        base_url: base_url.into(),
        model: "test-model".into(),
        api_key_env: None,
        timeout_secs: 10,
        top_logprobs: 5,
    }
}

fn labelled_reply(answer: &str, p: f64) -> String {
    let other = if answer == "True" { "False" } else { "True" };
    json!({
        "choices": [{
            "message": {"content": answer},
            "logprobs": {"content": [{
                "token": answer,
                "logprob": p.ln(),
                "top_logprobs": [{"token": answer, "logprob": p.ln()}, {"token": other, "logprob": (1.0 - p).ln()}]
            }]}
        }]
    })
    .to_string()
}

fn fast_retry(attempts: u32) -> RetryPolicy {
    RetryPolicy {
        attempts,
        initial_backoff: Duration::from_millis(5),
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    let server = serve(|n, _| if n < 2 { (503, "busy".into()) } else { (200, labelled_reply("True", 0.9)) });
    let session = Session::builder()
        .backend(HttpBackend::new(config(&server.base_url)).unwrap())
        .retry(fast_retry(3))
        .build();
    let table = Table::new(vec![Column::text("claim", ["water is wet"])]).unwrap();
    let out = sem_filter(&session, &table, &Langex::parse("{claim}").unwrap(), &FilterOptions::default()).unwrap();
    assert_eq!(out.row_count(), 1);
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    assert_eq!(session.meter().total().failed_calls, 0);

    let bodies = server.bodies.lock().unwrap();
    let body = &bodies[2].1;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["logprobs"], true);
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(body["messages"][1]["content"].as_str().unwrap().contains("water is wet"));
}

#[test]
fn exhausted_retries_count_as_failures() {
    let server = serve(|_, _| (500, "down".into()));
    let session = Session::builder()
        .backend(HttpBackend::new(config(&server.base_url)).unwrap())
        .retry(fast_retry(2))
        .build();
    let table = Table::new(vec![Column::text("claim", ["a"])]).unwrap();
    let out = sem_filter(&session, &table, &Langex::parse("{claim}").unwrap(), &FilterOptions::default()).unwrap();
    assert_eq!(out.row_count(), 0);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);
    assert_eq!(session.meter().total().failed_calls, 1);
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(|_, _| (400, "bad request".into()));
    let backend = HttpBackend::new(config(&server.base_url)).unwrap();
    let err = backend.complete(&LmRequest::new("sys", "hi")).unwrap_err();
    assert!(matches!(err, LmError::Status { code: 400, .. }));
    assert!(!err.is_retryable());
}

#[test]
fn logprobs_become_label_confidence() {
    let server = serve(|_, _| (200, labelled_reply("False", 0.75)));
    let backend = HttpBackend::new(config(&server.base_url)).unwrap();
    let r = backend.complete(&LmRequest::new("sys", "claim").with_labels(&TRUE_FALSE)).unwrap();
    let (label, confidence) = semops::lm::label_confidence(&r).unwrap();
    assert_eq!(label, "False");
    assert!((confidence - 0.75).abs() < 1e-9);
}

#[test]
fn bearer_token_comes_from_the_environment() {
    let server = serve(|_, _| (200, json!({"choices": [{"message": {"content": "ok"}}]}).to_string()));
    std::env::set_var("SEMOPS_TEST_KEY", "sekrit");
    let mut cfg = config(&server.base_url);
    cfg.api_key_env = Some("SEMOPS_TEST_KEY".into());
    let r = HttpBackend::new(cfg).unwrap().complete(&LmRequest::new("sys", "hi")).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(server.bodies.lock().unwrap()[0].0.as_deref(), Some("Bearer sekrit"));

    let mut missing = config(&server.base_url);
    missing.api_key_env = Some("SEMOPS_TEST_KEY_UNSET".into());
    assert!(matches!(HttpBackend::new(missing), Err(LmError::Config(_))));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(config(&format!("http://127.0.0.1:{port}"))).unwrap();
    let err = backend.complete(&LmRequest::new("sys", "hi")).unwrap_err();
    assert!(matches!(err, LmError::Transport(_)), "{err}");
    assert!(err.is_retryable());
}
