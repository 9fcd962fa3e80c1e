use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, HttpJson};
use crate::util::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: String,
}

impl CompletionRequest {
    pub fn id(&self) -> String {
        format!("cmp-{:016x}", stable_hash(self.prompt.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
}

/// A text-completion service. Implementations must be callable from many
/// threads at once.
pub trait CompletionBackend: Send + Sync {
    /// Recorded in the cache and in `rewrite_meta`.
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FixtureMode {
    Echo,
    Empty,
}

/// In-process deterministic backend for tests and offline runs.
///
/// `echo` rewrites the query line of the prompt into
/// `"{query}, seen again (variant xxxx)"` followed by a junk second line, so
/// post-processing is exercised too.
#[derive(Debug)]
pub struct FixtureBackend {
    mode: FixtureMode,
    fail_first: usize,
    calls: AtomicUsize,
}

impl FixtureBackend {
    pub fn echo() -> Self {
        Self {
            mode: FixtureMode::Echo,
            fail_first: 0,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn empty() -> Self {
        Self {
            mode: FixtureMode::Empty,
            ..Self::echo()
        }
    }

    /// The first `n` calls return an error.
    pub fn failing_first(mut self, n: usize) -> Self {
        self.fail_first = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for FixtureBackend {
    fn id(&self) -> String {
        match self.mode {
            FixtureMode::Echo => "fixture-echo".into(),
            FixtureMode::Empty => "fixture-empty".into(),
        }
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_first {
            return Err(BackendError::new(request.id(), format!("fixture failure {}", n + 1)));
        }
        let text = match self.mode {
            FixtureMode::Empty => String::new(),
            FixtureMode::Echo => {
                let query = request.prompt.lines().last().unwrap_or_default();
                let query = query.strip_suffix("=>").unwrap_or(query).trim();
                let variant = stable_hash(request.prompt.as_bytes()) & 0xffff;
                format!(" {query}, seen again (variant {variant:04x})\nunrelated continuation")
            }
        };
        Ok(CompletionResponse { text })
    }
}

/// JSON completion endpoint; see [`CompletionRequest`] for the body.
pub struct HttpCompletion {
    http: HttpJson,
}

impl HttpCompletion {
    pub const ENDPOINT_VAR: &'static str = "COMPLETION_ENDPOINT";
    pub const API_KEY_VAR: &'static str = "COMPLETION_API_KEY";

    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            http: HttpJson::new(endpoint, api_key),
        }
    }

    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(Self::ENDPOINT_VAR).ok()?;
        Some(Self::new(endpoint, std::env::var(Self::API_KEY_VAR).ok()))
    }
}

impl CompletionBackend for HttpCompletion {
    fn id(&self) -> String {
        format!("http:{}", self.http.endpoint)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.http.post(&request.id(), request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 0.9,
            max_tokens: 64,
            stop: "\n".into(),
        }
    }

    #[test]
    fn echo_uses_query_line() {
        let b = FixtureBackend::echo();
        let out = b.complete(&req("task\na => b\nthe dog =>")).unwrap();
        assert!(out.text.starts_with(" the dog, seen again"));
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn failing_then_ok() {
        let b = FixtureBackend::echo().failing_first(2);
        assert!(b.complete(&req("x =>")).is_err());
        assert!(b.complete(&req("x =>")).is_err());
        assert!(b.complete(&req("x =>")).is_ok());
    }

    #[test]
    fn http_unreachable_is_backend_error() {
        let b = HttpCompletion::new("http://127.0.0.1:9/complete", None);
        let err = b.complete(&req("x =>")).unwrap_err();
        assert!(err.request_id.starts_with("cmp-"));
    }
}
