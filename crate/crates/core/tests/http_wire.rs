//! Wire-level checks of the chat client against a minimal HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use companion_core::backend::{BackendError, ChatBackend, HttpBackend};
use companion_core::{BackendHandle, ChatMessage, Sampling};
use serde_json::{json, Value};

struct Captured {
    request_line: String,
    body: Value,
}

/// Serves one request with the given status and body, reporting what it got.
fn serve_once(status: u16, reply: String) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        tx.send(Captured {
            request_line: request_line.trim().to_string(),
            body: serde_json::from_slice(&body).unwrap(),
        })
        .unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
            reply.len()
        )
        .unwrap();
    });
    (base, rx)
}

fn backend(base: &str) -> HttpBackend {
    HttpBackend::new(BackendHandle::new(base, "test-model")).unwrap()
}

#[test]
fn posts_openai_shaped_request_and_reads_hidden_states() {
    let reply = json!({
        "id": "x",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": "Step text."}}],
        "hidden_states": {"28": [0.25, -1.5]}
    });
    let (base, rx) = serve_once(200, reply.to_string());
    let sampling = Sampling::companion();
    let out = backend(&format!("{base}/"))
        .complete(&[ChatMessage::user("hello")], &sampling)
        .unwrap();
    assert_eq!(out.content, "Step text.");
    assert_eq!(out.hidden_states.unwrap()[&28], vec![0.25, -1.5]);

    let got = rx.recv().unwrap();
    assert_eq!(got.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(got.body["model"], "test-model");
    assert_eq!(
        got.body["messages"],
        json!([{"role": "user", "content": "hello"}])
    );
    assert_eq!(got.body["temperature"], 0.3);
    assert_eq!(got.body["max_tokens"], 80);
}

#[test]
fn error_status_is_reported_with_body() {
    let (base, _rx) = serve_once(503, "{\"error\":\"overloaded\"}".into());
    let err = backend(&base)
        .complete(&[ChatMessage::user("hi")], &Sampling::agent())
        .unwrap_err();
    match err {
        BackendError::Status { status, body } => {
            assert_eq!(status, 503);
            assert!(body.contains("overloaded"));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_reply_is_a_backend_error() {
    let (base, _rx) = serve_once(200, "{\"choices\": []}".into());
    let err = backend(&base)
        .complete(&[ChatMessage::user("hi")], &Sampling::agent())
        .unwrap_err();
    assert!(matches!(err, BackendError::Malformed(_)), "{err:?}");
}
