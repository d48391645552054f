//! A thin JSON client for tests.

use reqwest::{Client, Method};
use serde_json::Value;

#[derive(Clone)]
pub struct Api {
    pub client: Client,
    pub base: String,
    pub writer_key: String,
}

impl Api {
    pub fn new(base: impl Into<String>, writer_key: impl Into<String>) -> Self {
        Api {
            client: Client::new(),
            base: base.into(),
            writer_key: writer_key.into(),
        }
    }

    async fn send(&self, req: reqwest::RequestBuilder, body: Option<Value>) -> (u16, Value) {
        let req = match body {
            Some(b) => req.json(&b),
            None => req,
        };
        let resp = req.send().await.expect("request failed");
        let status = resp.status().as_u16();
        let text = resp.text().await.expect("body");
        let value = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        (status, value)
    }

    pub async fn writer(&self, method: Method, path: &str, body: Option<Value>) -> (u16, Value) {
        let req = self
            .client
            .request(method, format!("{}{path}", self.base))
            .header("x-writer-key", &self.writer_key);
        self.send(req, body).await
    }

    pub async fn worker(
        &self,
        token: &str,
        method: Method,
        path: &str,
        body: Option<Value>,
        idempotency_key: Option<&str>,
    ) -> (u16, Value) {
        let mut req = self
            .client
            .request(method, format!("{}{path}", self.base))
            .header("x-worker-token", token);
        if let Some(k) = idempotency_key {
            req = req.header("idempotency-key", k);
        }
        self.send(req, body).await
    }

    pub async fn raw(&self, method: Method, path: &str, headers: &[(&str, &str)]) -> u16 {
        let mut req = self.client.request(method, format!("{}{path}", self.base));
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        req.send().await.expect("request failed").status().as_u16()
    }

    /// Moves the service's manual clock forward.
    pub async fn advance(&self, ms: i64) {
        let (status, body) = self
            .writer(Method::POST, "/admin/clock", Some(serde_json::json!({ "advance_ms": ms })))
            .await;
        assert_eq!(status, 200, "{body}");
    }
}
