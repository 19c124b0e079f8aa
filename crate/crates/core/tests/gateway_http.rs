use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use benchaudit_core::gateway::{Dialect, Gateway, GatewayError, HttpTransport, ModelSpec, RetryPolicy, Usage};
use benchaudit_core::protocol::{ContextBudget, PromptPair};

/// Serves the scripted (status, body) responses in order, one per connection,
/// and captures each request body.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut headers = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(format!("{headers}\n{}", String::from_utf8(buf).unwrap()));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn pair() -> PromptPair {
    PromptPair::new("system text".into(), "user text".into(), "v1", ContextBudget::default())
}

#[test]
fn http_500_twice_then_success() {
    let ok = r#"{"choices":[{"message":{"content":"[]"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#;
    let (url, seen) = serve(vec![(500, "{}".into()), (500, "{}".into()), (200, ok.into())]);
    let spec = ModelSpec { endpoint: Some(url), ..ModelSpec::named("gpt-test") };
    let gw = Gateway::new(Arc::new(HttpTransport::new().unwrap())).with_retry(RetryPolicy::immediate());
    let c = gw.complete(&spec, &pair(), "task").unwrap();
    assert_eq!(c.text, "[]");
    assert_eq!(c.retry_count, 2);
    assert_eq!(c.usage, Usage { input_tokens: 12, output_tokens: 3 });
    assert_eq!(gw.network_count(), 3);
    let requests = seen.lock().unwrap();
    assert!(requests[2].contains("\"max_tokens\":4096"));
    assert!(requests[2].contains("system text"));
}

#[test]
fn anthropic_dialect_and_auth_header() {
    let ok = r#"{"content":[{"type":"text","text":"hello"}],"usage":{"input_tokens":7,"output_tokens":1}}"#;
    let (url, seen) = serve(vec![(200, ok.into())]);
    std::env::set_var("BENCHAUDIT_TEST_KEY", "secret-123");
    let spec = ModelSpec {
        endpoint: Some(url),
        dialect: Dialect::Anthropic,
        api_key_env: Some("BENCHAUDIT_TEST_KEY".into()),
        ..ModelSpec::named("claude-test")
    };
    let gw = Gateway::new(Arc::new(HttpTransport::new().unwrap()));
    let c = gw.complete(&spec, &pair(), "task").unwrap();
    assert_eq!(c.text, "hello");
    let req = &seen.lock().unwrap()[0];
    assert!(req.contains("x-api-key: secret-123"));
    assert!(req.contains("\"system\":\"system text\""));
}

#[test]
fn permanent_http_error_is_not_retried() {
    let (url, _) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let spec = ModelSpec { endpoint: Some(url), ..ModelSpec::named("m") };
    let gw = Gateway::new(Arc::new(HttpTransport::new().unwrap())).with_retry(RetryPolicy::immediate());
    match gw.complete(&spec, &pair(), "t") {
        Err(GatewayError::ProviderError { status, body }) => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(gw.attempt_count(), 1);
}

#[test]
fn missing_credentials() {
    let spec = ModelSpec {
        endpoint: Some("http://127.0.0.1:9/".into()),
        api_key_env: Some("BENCHAUDIT_DEFINITELY_UNSET".into()),
        ..ModelSpec::named("m")
    };
    let gw = Gateway::new(Arc::new(HttpTransport::new().unwrap()));
    assert_eq!(
        gw.complete(&spec, &pair(), "t").unwrap_err(),
        GatewayError::AuthMissing { env: "BENCHAUDIT_DEFINITELY_UNSET".into() }
    );
}

#[test]
fn connection_refused_exhausts_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let spec = ModelSpec { endpoint: Some(format!("http://127.0.0.1:{port}/")), max_retries: 1, ..ModelSpec::named("m") };
    let gw = Gateway::new(Arc::new(HttpTransport::new().unwrap())).with_retry(RetryPolicy::immediate());
    assert!(matches!(gw.complete(&spec, &pair(), "t"), Err(GatewayError::RetriesExhausted { attempts: 2, .. })));
}
