use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use phenomap::llm_client::{
    BackendConfig, BackendError, BackendKind, HttpConfig, LlmClient, RetryPolicy, WireShape,
};

#[derive(Debug, Clone)]
struct Seen {
    authorization: Option<String>,
    body: serde_json::Value,
}

fn read_request(stream: &mut TcpStream) -> Seen {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    let mut authorization = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => authorization = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Seen {
        authorization,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

/// Serves the scripted (status, body) responses in order, one per connection.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            log.lock().unwrap().push(read_request(&mut stream));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn client(http: HttpConfig, max_attempts: u32) -> LlmClient {
    LlmClient::from_config(&BackendConfig {
        kind: BackendKind::Http,
        http,
        retry: RetryPolicy {
            max_attempts,
            backoff_base_ms: 1,
        },
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn retries_transient_failures_then_succeeds() {
    let (url, seen) = serve(vec![
        (503, "{}".into()),
        (503, "{}".into()),
        (200, r#"{"text":"Answer: (a) Yes."}"#.into()),
    ]);
    let c = client(
        HttpConfig {
            endpoint: url,
            ..Default::default()
        },
        4,
    );
    assert_eq!(c.complete_prompt("is it?").unwrap(), "Answer: (a) Yes.");
    let stats = c.stats();
    assert_eq!((stats.calls, stats.attempts, stats.failures), (1, 3, 0));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[2].body["prompt"], "is it?");
    assert_eq!(seen[2].body["max_output_tokens"], 512);
    assert_eq!(seen[2].authorization, None);
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, _) = serve(vec![(429, "{}".into()), (429, "{}".into())]);
    let c = client(
        HttpConfig {
            endpoint: url,
            ..Default::default()
        },
        2,
    );
    assert!(matches!(
        c.complete_prompt("x"),
        Err(BackendError::Exhausted { attempts: 2, .. })
    ));
    assert_eq!(c.stats().failures, 1);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let c = client(
        HttpConfig {
            endpoint: url,
            ..Default::default()
        },
        4,
    );
    assert!(matches!(
        c.complete_prompt("x"),
        Err(BackendError::Fatal {
            status: Some(400),
            ..
        })
    ));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn chat_shape_with_bearer_credential() {
    std::env::set_var("PHENOMAP_TEST_TOKEN", "s3cret");
    let (url, seen) = serve(vec![(
        200,
        r#"{"choices":[{"message":{"content":"Answer: no"}}]}"#.into(),
    )]);
    let c = client(
        HttpConfig {
            endpoint: url,
            shape: WireShape::Chat,
            model: Some("m1".into()),
            credential_env: Some("PHENOMAP_TEST_TOKEN".into()),
            ..Default::default()
        },
        1,
    );
    assert_eq!(c.complete_prompt("hello").unwrap(), "Answer: no");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer s3cret"));
    assert_eq!(seen[0].body["model"], "m1");
    assert_eq!(seen[0].body["messages"][0]["content"], "hello");
}
