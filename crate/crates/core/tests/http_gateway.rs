//! Remote backends against a scripted HTTP server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use lpo::gateway::http::{HttpChatBackend, HttpEmbedBackend};
use lpo::gateway::{Budget, ChatRequest, Gateway, GatewayError, RetryPolicy};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves `replies` in order, one connection each, and records requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                authorization,
                body: serde_json::from_slice(&raw).unwrap(),
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen, handle)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        backoff_base: Duration::from_millis(5),
    }
}

const CHAT_OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Sentiment: Positive"}}],"usage":{"prompt_tokens":7,"completion_tokens":3}}"#;

#[test]
fn chat_retries_server_errors_then_succeeds() {
    let (url, seen, server) = serve(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, CHAT_OK.into()),
    ]);
    let backend = HttpChatBackend::new(&url, "chat-model", Some("sk-test".into()), Duration::from_secs(5));
    let gateway = Gateway::new(backend).with_retry(fast_retry());
    let budget = Budget::new(10, 1_000).unwrap();
    let reply = gateway
        .chat(&ChatRequest::new("hi").with_temperature(0.0).with_max_tokens(32), &budget)
        .unwrap();
    server.join().unwrap();
    assert_eq!(reply.text, "Sentiment: Positive");
    assert_eq!(gateway.attempts(), 3);
    assert_eq!(budget.snapshot().calls, 1);
    assert_eq!(budget.snapshot().total_tokens(), 10);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[2].path, "/v1/chat/completions");
    assert_eq!(seen[2].authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[2].body["model"], "chat-model");
    assert_eq!(seen[2].body["messages"][0]["content"], "hi");
    assert_eq!(seen[2].body["max_tokens"], 32);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, server) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let gateway = Gateway::new(HttpChatBackend::new(&url, "m", None, Duration::from_secs(5))).with_retry(fast_retry());
    let err = gateway.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, GatewayError::Rejected { status: 400, .. }), "{err:?}");
    assert_eq!(gateway.attempts(), 1);
    assert_eq!(seen.lock().unwrap()[0].authorization, None);
}

#[test]
fn rate_limits_are_retried() {
    let (url, _, server) = serve(vec![(429, "{}".into()), (200, CHAT_OK.into())]);
    let gateway = Gateway::new(HttpChatBackend::new(&url, "m", None, Duration::from_secs(5))).with_retry(fast_retry());
    gateway.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap();
    server.join().unwrap();
    assert_eq!(gateway.attempts(), 2);
}

#[test]
fn malformed_replies_are_reported() {
    let (url, _, server) = serve(vec![(200, r#"{"choices":[]}"#.into())]);
    let gateway = Gateway::new(HttpChatBackend::new(&url, "m", None, Duration::from_secs(5))).with_retry(fast_retry());
    let err = gateway.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap_err();
    server.join().unwrap();
    assert!(matches!(err, GatewayError::Malformed(_)), "{err:?}");
}

#[test]
fn unreachable_endpoint_gives_up_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpChatBackend::new(&format!("http://127.0.0.1:{port}"), "m", None, Duration::from_secs(2));
    let gateway = Gateway::new(backend).with_retry(fast_retry());
    let err = gateway.chat(&ChatRequest::new("x"), &Budget::unlimited()).unwrap_err();
    assert!(matches!(err, GatewayError::Unreachable { attempts: 3, .. }), "{err:?}");
}

#[test]
fn embeddings_are_reordered_by_index() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}],"usage":{"prompt_tokens":4,"total_tokens":4}}"#;
    let (url, seen, server) = serve(vec![(200, body.into())]);
    let gateway = Gateway::new(HttpEmbedBackend::new(&url, "embed-model", None, Duration::from_secs(5)));
    let vectors = gateway
        .embed(&["first".to_string(), "second".to_string()], &Budget::unlimited())
        .unwrap();
    server.join().unwrap();
    assert_eq!(vectors[0].values(), &[1.0, 0.0]);
    assert_eq!(vectors[1].values(), &[0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"][1], "second");
}

#[test]
fn soft_prompts_never_reach_the_wire() {
    let backend = HttpChatBackend::new("http://127.0.0.1:9", "m", None, Duration::from_millis(100));
    let gateway = Gateway::new(backend);
    let budget = Budget::unlimited();
    let err = gateway
        .chat(&ChatRequest::new("x").with_soft_prompt(vec![0.1, 0.2]), &budget)
        .unwrap_err();
    assert!(matches!(err, GatewayError::InvalidRequest(_)), "{err:?}");
    assert_eq!(budget.snapshot().calls, 0);
    assert_eq!(gateway.attempts(), 0);
}
