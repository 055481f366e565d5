//! The HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use incubator_core::gateway::ApiKey;
use incubator_core::{
    BackendConfig, Gateway, GatewayError, GenerationRequest, Message, RetryPolicy, Role,
};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn reply(status: u16, body: &str) -> Reply {
    Reply {
        status,
        body: body.to_string(),
        delay: Duration::ZERO,
    }
}

/// Serves one scripted reply per connection, then stops.
fn serve(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for r in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null),
            });
            thread::sleep(r.delay);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                r.status,
                r.body.len(),
                r.body
            );
        }
    });
    (url, seen)
}

fn config(url: &str) -> BackendConfig {
    let mut c = BackendConfig::new(url, "test-model");
    c.api_key = Some(ApiKey::new("sk-test"));
    c.retry = RetryPolicy {
        max_attempts: 3,
        backoff_base: Duration::from_millis(1),
    };
    c.request_timeout = Duration::from_secs(5);
    c
}

fn gateway(url: &str) -> Gateway {
    Gateway::http(&config(url), &config(url)).unwrap()
}

fn request() -> GenerationRequest {
    GenerationRequest::new(vec![Message::new(Role::User, "hi")], 0.7, 64, Some(42)).unwrap()
}

const CHAT_OK: &str =
    r#"{"choices":[{"message":{"role":"assistant","content":"{\"a\": \"x\"}"}}]}"#;

#[test]
fn chat_completion_request_shape() {
    let (url, seen) = serve(vec![reply(200, CHAT_OK)]);
    let out = gateway(&url).complete(&request()).unwrap();
    assert_eq!(out, r#"{"a": "x"}"#);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "test-model");
    assert_eq!(b["messages"][0]["role"], "user");
    assert_eq!(b["messages"][0]["content"], "hi");
    assert_eq!(b["temperature"], 0.7);
    assert_eq!(b["max_tokens"], 64);
    assert_eq!(b["seed"], 42);
}

#[test]
fn transient_failure_is_retried() {
    let (url, seen) = serve(vec![
        reply(503, "{}"),
        reply(429, "{}"),
        reply(200, CHAT_OK),
    ]);
    assert!(gateway(&url).complete(&request()).is_ok());
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_exhaust_with_status() {
    let (url, seen) = serve(vec![reply(500, "{}"), reply(500, "{}"), reply(500, "{}")]);
    match gateway(&url).complete(&request()) {
        Err(GatewayError::Transport {
            status: Some(500),
            attempts: 3,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![reply(401, "{}"), reply(200, CHAT_OK)]);
    assert!(matches!(
        gateway(&url).complete(&request()),
        Err(GatewayError::Auth(401))
    ));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn embeddings_reordered_and_normalized() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#;
    let (url, seen) = serve(vec![reply(200, body)]);
    let out = gateway(&url)
        .embed(&["first".to_string(), "second".to_string()])
        .unwrap();
    assert_eq!(out[0].values(), [0.6, 0.8]);
    assert_eq!(out[1].values(), [0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/embeddings");
    assert_eq!(seen[0].body["input"][1], "second");
}

#[test]
fn malformed_response_is_reported() {
    let (url, _) = serve(vec![reply(200, r#"{"unexpected": true}"#)]);
    assert!(matches!(
        gateway(&url).complete(&request()),
        Err(GatewayError::InvalidResponse(_))
    ));
}

#[test]
fn unreachable_endpoint() {
    let url = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    match gateway(&url).complete(&request()) {
        Err(GatewayError::Transport {
            status: None,
            attempts: 3,
            ..
        }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn slow_endpoint_times_out() {
    let slow = || Reply {
        status: 200,
        body: CHAT_OK.into(),
        delay: Duration::from_millis(600),
    };
    let (url, _) = serve(vec![slow(), slow()]);
    let mut c = config(&url);
    c.request_timeout = Duration::from_millis(150);
    c.retry.max_attempts = 2;
    let gw = Gateway::http(&c, &c).unwrap();
    assert!(matches!(
        gw.complete(&request()),
        Err(GatewayError::Timeout { attempts: 2 })
    ));
}

#[test]
fn api_key_is_redacted_in_debug_output() {
    let c = config("http://127.0.0.1:1");
    assert!(!format!("{c:?}").contains("sk-test"));
}
