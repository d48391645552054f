use reqwest::Method;
use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::SimError;

/// A response that reached the client, successful or not.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// The machine-readable error code of a failed call.
    pub fn code(&self) -> String {
        self.body["error"].as_str().unwrap_or("HTTP_ERROR").to_string()
    }
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    writer_key: String,
}

impl Client {
    pub fn new(base: &str, writer_key: &str) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base.trim_end_matches('/').to_string(),
            writer_key: writer_key.to_string(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn send(&self, req: reqwest::RequestBuilder, body: Option<&Value>) -> Result<Reply, SimError> {
        let req = match body {
            Some(b) => req.json(b),
            None => req,
        };
        let unreachable = |e: reqwest::Error| SimError::ServerUnreachable {
            url: self.base.clone(),
            message: e.to_string(),
        };
        let resp = req.send().await.map_err(unreachable)?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(unreachable)?;
        let body = if text.is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text).unwrap_or(Value::String(text))
        };
        Ok(Reply { status, body })
    }

    pub async fn writer(&self, method: Method, path: &str, body: Option<&Value>) -> Result<Reply, SimError> {
        let req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header("x-writer-key", &self.writer_key);
        self.send(req, body).await
    }

    /// A writer call that must succeed, decoded as `T`.
    pub async fn writer_ok<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&Value>,
    ) -> Result<T, SimError> {
        let reply = self.writer(method.clone(), path, body).await?;
        if !reply.ok() {
            return Err(SimError::Api {
                call: format!("{method} {path}"),
                status: reply.status,
                body: reply.body.to_string(),
            });
        }
        serde_json::from_value(reply.body).map_err(|e| SimError::Protocol(format!("{method} {path}: {e}")))
    }

    pub async fn worker(
        &self,
        token: &str,
        path: &str,
        body: Option<&Value>,
        idempotency_key: &str,
    ) -> Result<Reply, SimError> {
        let req = self
            .http
            .post(format!("{}{path}", self.base))
            .header("x-worker-token", token)
            .header("idempotency-key", idempotency_key);
        self.send(req, body).await
    }
}
