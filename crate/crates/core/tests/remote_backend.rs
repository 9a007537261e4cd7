//! The HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use agent_forge::providers::{
    ChatModel, Embedder, GenerationRequest, ProviderError, RemoteBackend, RetryPolicy,
};
use agent_forge::sim::PixelGrid;

struct Recorded {
    path: String,
    authorization: String,
    body: Value,
}

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Recorded>>>,
    handle: JoinHandle<()>,
}

/// Serves one scripted `(status, body)` per connection, then exits.
fn serve(script: Vec<(u16, Value)>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let (mut length, mut authorization) = (0usize, String::new());
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
                    "authorization" => authorization = value.trim().to_string(),
                    _ => {}
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Recorded {
                path: request_line
                    .split(' ')
                    .nth(1)
                    .unwrap_or_default()
                    .to_string(),
                authorization,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let payload = body.to_string();
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    Server { url, seen, handle }
}

fn backend(url: &str, attempts: u32) -> RemoteBackend {
    RemoteBackend::new(url, "secret", "test-model").with_retry(RetryPolicy {
        attempts,
        initial_backoff: Duration::from_millis(1),
    })
}

fn chat_reply(text: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]})
}

#[test]
fn rate_limit_is_retried_then_succeeds() {
    let server = serve(vec![
        (429, json!({"error": "slow down"})),
        (200, chat_reply("hello")),
    ]);
    let request = GenerationRequest::new("system prompt")
        .text("describe this")
        .image(Arc::new(PixelGrid::filled(4, 4, 128)))
        .with_seed(9);
    let reply = backend(&server.url, 3).chat_generate(&request).unwrap();
    assert_eq!(reply, "hello");
    server.handle.join().unwrap();
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let last = &seen[1];
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(last.authorization, "Bearer secret");
    assert_eq!(last.body["model"], "test-model");
    assert_eq!(last.body["seed"], 9);
    assert_eq!(last.body["messages"][0]["content"], "system prompt");
    let parts = last.body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts[0]["text"], "describe this");
    assert!(parts[1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
}

#[test]
fn client_errors_are_not_retried() {
    let server = serve(vec![(400, json!({"error": "bad request"}))]);
    let err = backend(&server.url, 3)
        .chat_generate(&GenerationRequest::new("s").text("u"))
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Http { status: 400, .. }),
        "{err}"
    );
    server.handle.join().unwrap();
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn server_errors_exhaust_the_budget() {
    let server = serve(vec![(503, json!({})), (503, json!({})), (503, json!({}))]);
    let err = backend(&server.url, 3)
        .chat_generate(&GenerationRequest::new("s").text("u"))
        .unwrap_err();
    assert!(
        matches!(err, ProviderError::Http { status: 503, .. }),
        "{err}"
    );
    server.handle.join().unwrap();
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn missing_content_is_a_decode_error() {
    let server = serve(vec![(200, json!({"choices": []}))]);
    let err = backend(&server.url, 1)
        .chat_generate(&GenerationRequest::new("s").text("u"))
        .unwrap_err();
    assert!(matches!(err, ProviderError::Decode { .. }), "{err}");
    server.handle.join().unwrap();
}

#[test]
fn embeddings_are_reordered_normalized_and_dimension_checked() {
    let server = serve(vec![
        (
            200,
            json!({"data": [
                {"index": 1, "embedding": [0.0, 2.0, 0.0]},
                {"index": 0, "embedding": [3.0, 0.0, 4.0]},
            ]}),
        ),
        (
            200,
            json!({"data": [{"index": 0, "embedding": [1.0, 0.0]}]}),
        ),
    ]);
    let remote = backend(&server.url, 1);
    let vectors = remote
        .embed_texts(&["a".to_string(), "b".to_string()])
        .unwrap();
    assert_eq!(vectors[0].0, vec![0.6, 0.0, 0.8]);
    assert_eq!(vectors[1].0, vec![0.0, 1.0, 0.0]);
    assert_eq!(remote.dimension(), 3);
    let err = remote.embed_texts(&["c".to_string()]).unwrap_err();
    assert!(matches!(err, ProviderError::Invariant(_)), "{err}");
    server.handle.join().unwrap();
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], json!(["a", "b"]));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = backend(&format!("http://127.0.0.1:{port}"), 2)
        .chat_generate(&GenerationRequest::new("s").text("u"))
        .unwrap_err();
    assert!(matches!(err, ProviderError::Transport { .. }), "{err}");
}
