use axum::http::HeaderMap;
use heteroglossia_core::WorkerId;

pub const WRITER_KEY_HEADER: &str = "x-writer-key";
pub const WORKER_TOKEN_HEADER: &str = "x-worker-token";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

const MAX_TOKEN_LEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Auth {
    Writer,
    Worker(WorkerId),
    Denied,
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// A worker token is any short printable string without whitespace.
pub fn valid_token(token: &str) -> bool {
    !token.is_empty() && token.len() <= MAX_TOKEN_LEN && token.chars().all(|c| c.is_ascii_graphic())
}

pub fn authenticate(headers: &HeaderMap, writer_key: &str) -> Auth {
    if let Some(key) = header(headers, WRITER_KEY_HEADER) {
        return if constant_time_eq(key.as_bytes(), writer_key.as_bytes()) {
            Auth::Writer
        } else {
            Auth::Denied
        };
    }
    match header(headers, WORKER_TOKEN_HEADER) {
        Some(token) if valid_token(token) => Auth::Worker(WorkerId::new(token)),
        _ => Auth::Denied,
    }
}

pub fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    header(headers, IDEMPOTENCY_HEADER)
        .map(str::trim)
        .filter(|k| valid_token(k))
        .map(str::to_string)
}
