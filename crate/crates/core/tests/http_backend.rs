//! HTTP adapter tests against a canned local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::time::Duration;

use arise_core::backend::http::{HttpBackend, HttpConfig};
use arise_core::backend::{BackendError, GenerationRequest, PolicyBackend, ScoreRequest};
use serde_json::Value;

/// One canned exchange: the server returns `status` and `body`, and sends
/// the parsed request (path, JSON body) back through the channel.
struct Exchange {
    status: u16,
    body: String,
}

/// Serves the given exchanges in order on a fresh local port.
fn serve(exchanges: Vec<Exchange>) -> (String, mpsc::Receiver<(String, Value)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for exchange in exchanges {
            let (mut stream, _) = listener.accept().unwrap();
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap().to_owned();
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            let parsed: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            tx.send((path, parsed)).unwrap();
            let response = format!(
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                exchange.status,
                exchange.body.len(),
                exchange.body
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}"), rx)
}

fn chat_body(contents: &[&str]) -> String {
    let choices: Vec<Value> = contents
        .iter()
        .map(|c| serde_json::json!({"message": {"role": "assistant", "content": c}}))
        .collect();
    serde_json::json!({ "choices": choices }).to_string()
}

fn fast_config(endpoint: &str) -> HttpConfig {
    let mut config = HttpConfig::new(endpoint, "test-model");
    config.retry_base = Duration::from_millis(1);
    config.timeout = Duration::from_secs(5);
    config
}

#[test]
fn generate_posts_chat_request_and_returns_all_choices() {
    let (endpoint, rx) = serve(vec![Exchange {
        status: 200,
        body: chat_body(&["first", "second"]),
    }]);
    let mut config = fast_config(&endpoint);
    config.api_key = Some("sk-test".into());
    let backend = HttpBackend::new(config).unwrap();
    let req = GenerationRequest::new("hello", 0.7)
        .with_samples(2)
        .with_max_tokens(64);
    let out = backend.generate(&req).unwrap();
    assert_eq!(out, vec!["first".to_string(), "second".to_string()]);

    let (path, body) = rx.recv().unwrap();
    assert_eq!(path, "/v1/chat/completions");
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "hello");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["n"], 2);
    assert_eq!(body["max_tokens"], 64);
}

#[test]
fn generate_retries_server_errors_then_succeeds() {
    let (endpoint, _rx) = serve(vec![
        Exchange {
            status: 500,
            body: "{}".into(),
        },
        Exchange {
            status: 200,
            body: chat_body(&["recovered"]),
        },
    ]);
    let backend = HttpBackend::new(fast_config(&endpoint)).unwrap();
    let out = backend
        .generate(&GenerationRequest::new("hello", 0.0))
        .unwrap();
    assert_eq!(out, vec!["recovered".to_string()]);
}

#[test]
fn generate_gives_up_after_max_retries() {
    let (endpoint, _rx) = serve(vec![
        Exchange {
            status: 500,
            body: "{}".into(),
        },
        Exchange {
            status: 500,
            body: "{}".into(),
        },
        Exchange {
            status: 500,
            body: "{}".into(),
        },
    ]);
    let backend = HttpBackend::new(fast_config(&endpoint)).unwrap();
    let err = backend
        .generate(&GenerationRequest::new("hello", 0.0))
        .unwrap_err();
    match err {
        BackendError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other}"),
    }
    assert!(err.is_retryable());
}

#[test]
fn client_errors_are_not_retried() {
    let (endpoint, _rx) = serve(vec![Exchange {
        status: 400,
        body: r#"{"error":"bad request"}"#.into(),
    }]);
    let backend = HttpBackend::new(fast_config(&endpoint)).unwrap();
    let err = backend
        .generate(&GenerationRequest::new("hello", 0.0))
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)));
}

#[test]
fn score_sequence_extracts_target_aligned_logprobs() {
    // Echoed prompt "The sky is blue" with context "The sky " (8 bytes):
    // tokens at offsets 0, 4, 8, 11; the last two belong to the target.
    let body = serde_json::json!({
        "choices": [{
            "text": "The sky is blue",
            "logprobs": {
                "tokens": ["The", " sky", " is", " blue"],
                "token_logprobs": [Value::Null, -0.5, -1.25, -0.75],
                "text_offset": [0, 3, 8, 11],
            }
        }]
    })
    .to_string();
    let (endpoint, rx) = serve(vec![Exchange { status: 200, body }]);
    let backend = HttpBackend::new(fast_config(&endpoint)).unwrap();
    let resp = backend
        .score_sequence(&ScoreRequest {
            context: "The sky ".into(),
            target: "is blue".into(),
        })
        .unwrap();
    assert_eq!(resp.token_logprobs, vec![-1.25, -0.75]);
    assert_eq!(resp.token_count, 2);
    assert_eq!(resp.mean_logprob(), -1.0);

    let (path, body) = rx.recv().unwrap();
    assert_eq!(path, "/v1/completions");
    assert_eq!(body["prompt"], "The sky is blue");
    assert_eq!(body["echo"], true);
    assert_eq!(body["max_tokens"], 0);
}

#[test]
fn missing_logprobs_is_a_capability_error() {
    let body = serde_json::json!({"choices": [{"text": "x"}]}).to_string();
    let (endpoint, _rx) = serve(vec![Exchange { status: 200, body }]);
    let backend = HttpBackend::new(fast_config(&endpoint)).unwrap();
    let err = backend
        .score_sequence(&ScoreRequest {
            context: "c".into(),
            target: "t".into(),
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::Capability(_)));
}

#[test]
fn scoring_can_use_a_separate_endpoint_and_model() {
    let gen_body = chat_body(&["hi"]);
    let (gen_endpoint, gen_rx) = serve(vec![Exchange {
        status: 200,
        body: gen_body,
    }]);
    let score_body = serde_json::json!({
        "choices": [{
            "logprobs": {"token_logprobs": [Value::Null, -2.0], "text_offset": [0, 1]}
        }]
    })
    .to_string();
    let (score_endpoint, score_rx) = serve(vec![Exchange {
        status: 200,
        body: score_body,
    }]);

    let mut config = fast_config(&gen_endpoint);
    config.scoring_endpoint_url = Some(score_endpoint);
    config.scoring_model = Some("scorer".into());
    let backend = HttpBackend::new(config).unwrap();

    backend
        .generate(&GenerationRequest::new("hello", 0.0))
        .unwrap();
    let (_, gen_req) = gen_rx.recv().unwrap();
    assert_eq!(gen_req["model"], "test-model");

    backend
        .score_sequence(&ScoreRequest {
            context: "c".into(),
            target: "t".into(),
        })
        .unwrap();
    let (score_path, score_req) = score_rx.recv().unwrap();
    assert_eq!(score_path, "/v1/completions");
    assert_eq!(score_req["model"], "scorer");
}
