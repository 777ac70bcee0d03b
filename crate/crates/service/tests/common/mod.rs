#![allow(dead_code)]

use std::sync::Arc;

use qisp_core::QispConfig;
use qisp_service::{ManualClock, Service, ServiceOptions, WriterHandle};
use reqwest::{Client, RequestBuilder, Response};
use serde_json::{json, Value};

pub const T0: u64 = 1_700_000_000_000;
pub const USER1: &str = "demo-token-user-1";
pub const USER2: &str = "demo-token-user-2";
pub const USER3: &str = "demo-token-user-3";
pub const ADMIN: &str = "demo-token-admin";

pub struct TestServer {
    pub base: String,
    pub clock: Arc<ManualClock>,
    pub writer: WriterHandle,
    pub client: Client,
}

impl TestServer {
    pub async fn start() -> TestServer {
        let mut cfg = QispConfig::default_inquire();
        cfg.journal_path = None;
        TestServer::with_config(cfg).await
    }

    pub async fn with_config(cfg: QispConfig) -> TestServer {
        let clock = Arc::new(ManualClock::new(T0));
        let service = Service::start(
            cfg,
            ServiceOptions {
                clock: clock.clone(),
                ticker: false,
                ..Default::default()
            },
        )
        .unwrap();
        let writer = service.writer().clone();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(service.serve(listener, std::future::pending()));
        TestServer {
            base,
            clock,
            writer,
            client: Client::new(),
        }
    }

    pub fn get(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub fn post(&self, path: &str, token: &str, body: &Value) -> RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(token).json(body)
    }

    pub fn delete(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.delete(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub async fn reserve(&self, token: &str, body: Value) -> Response {
        self.post("/api/reservations", token, &body).send().await.unwrap()
    }

    /// Advances the clock and runs one scheduler tick.
    pub async fn tick_to(&self, ms: u64) {
        self.clock.set(ms);
        self.writer.tick().await.unwrap();
    }
}

pub fn reservation(resources: &[(&str, u8)], start: u64, end: u64) -> Value {
    json!({
        "resources": resources.iter().map(|(k, c)| json!({"kind": k, "channel": c})).collect::<Vec<_>>(),
        "window": {"start_ms": start, "end_ms": end},
    })
}

/// Minimal server-sent-events reader over a streaming response.
pub struct SseReader {
    stream: futures::stream::BoxStream<'static, reqwest::Result<bytes::Bytes>>,
    buf: String,
}

impl SseReader {
    pub async fn open(s: &TestServer, token: &str) -> SseReader {
        use futures::StreamExt;
        let r = s.get("/api/status/stream", token).send().await.unwrap();
        assert_eq!(r.status(), reqwest::StatusCode::OK);
        SseReader {
            stream: r.bytes_stream().boxed(),
            buf: String::new(),
        }
    }

    /// Next `(event, data)` pair, skipping keep-alive comments.
    pub async fn next(&mut self) -> (String, Value) {
        use futures::StreamExt;
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut event = String::from("message");
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    continue;
                }
                return (event, serde_json::from_str(&data).unwrap());
            }
            let chunk = tokio::time::timeout(std::time::Duration::from_secs(60), self.stream.next())
                .await
                .expect("event within 60 s")
                .expect("stream open")
                .unwrap();
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    pub async fn next_of(&mut self, kind: &str) -> Value {
        loop {
            let (event, data) = self.next().await;
            if event == kind {
                return data;
            }
        }
    }
}
