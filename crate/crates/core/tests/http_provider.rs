//! Wire contract of the HTTP backends against a local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use dcm_core::config::{Config, ProviderKind};
use dcm_core::provider::{slots, CallLog, Gateway, LlmRole, ProviderError};

#[derive(Debug, Clone)]
struct Seen {
    path: String,
    authorization: Option<String>,
    body: serde_json::Value,
}

/// Serves the canned `(status, body)` replies in order, recording requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let (mut length, mut authorization) = (0usize, None);
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                let header = header.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut raw = vec![0u8; length];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                authorization,
                body: serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null),
            });
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(endpoint: &str, key_env: &str) -> Config {
    Config {
        provider: ProviderKind::Http,
        chat_endpoint: endpoint.into(),
        embed_endpoint: endpoint.into(),
        chat_model: "tiny-chat".into(),
        embed_model: "tiny-embed".into(),
        embedding_dim: 3,
        retries: 1,
        request_timeout_seconds: 5.0,
        api_key_env: key_env.into(),
        ..Config::default()
    }
}

fn chat_reply(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

#[test]
fn chat_request_and_response_shape() {
    let (endpoint, seen) = serve(vec![(200, chat_reply("RANK: 1,0"))]);
    std::env::set_var("DCM_TEST_KEY_CHAT", "sekrit");
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_CHAT"), &[]).unwrap();
    let mut log = CallLog::new();
    let reply = gw
        .chat(LlmRole::Selector, &slots([("problem", "max x"), ("paths", "[#0] a\n[#1] b")]), &mut log)
        .unwrap();
    assert_eq!(reply, "RANK: 1,0");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sekrit"));
    assert_eq!(seen[0].body["model"], "tiny-chat");
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
    assert!(seen[0].body["messages"][0]["content"].as_str().unwrap().contains("max x"));
    assert_eq!(log.len(), 1);
}

#[test]
fn embeddings_are_normalized() {
    let body = serde_json::json!({"data": [{"embedding": [3.0, 0.0, 4.0]}]}).to_string();
    let (endpoint, seen) = serve(vec![(200, body)]);
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_UNSET"), &[]).unwrap();
    let e = gw.embed("hello").unwrap();
    assert_eq!(e.as_slice(), &[0.6, 0.0, 0.8]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], "hello");
    assert_eq!(seen[0].body["model"], "tiny-embed");
    assert!(seen[0].authorization.is_none());
}

#[test]
fn wrong_embedding_dimension_is_rejected() {
    let body = serde_json::json!({"data": [{"embedding": [1.0, 2.0]}]}).to_string();
    let (endpoint, _) = serve(vec![(200, body)]);
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_UNSET"), &[]).unwrap();
    assert!(matches!(gw.embed("x"), Err(ProviderError::DimensionMismatch { expected: 3, got: 2 })));
}

#[test]
fn server_errors_are_retried() {
    let (endpoint, seen) = serve(vec![(503, "{}".into()), (200, chat_reply("PASS"))]);
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_UNSET"), &[]).unwrap();
    let reply = gw
        .chat(LlmRole::Verifier, &slots([("candidate", "m"), ("cluster_summary", "- c")]), &mut CallLog::new())
        .unwrap();
    assert_eq!(reply, "PASS");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (endpoint, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into()), (200, chat_reply("PASS"))]);
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_UNSET"), &[]).unwrap();
    let err = gw
        .chat(LlmRole::Verifier, &slots([("candidate", "m"), ("cluster_summary", "- c")]), &mut CallLog::new())
        .unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 1, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn empty_completion_is_an_error() {
    let (endpoint, _) = serve(vec![(200, chat_reply("  "))]);
    let gw = Gateway::from_config(&config(&endpoint, "DCM_TEST_KEY_UNSET"), &[]).unwrap();
    let err = gw
        .chat(LlmRole::Verifier, &slots([("candidate", "m"), ("cluster_summary", "- c")]), &mut CallLog::new())
        .unwrap_err();
    assert!(matches!(err, ProviderError::EmptyCompletion));
}
