//! Shared pieces of the pluggable remote backends (completion and translation).

use serde::{de::DeserializeOwned, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("backend request {request_id} failed: {message}")]
pub struct BackendError {
    pub request_id: String,
    pub message: String,
}

impl BackendError {
    pub fn new(request_id: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            request_id: request_id.into(),
            message: message.into(),
        }
    }
}

/// Minimal JSON-over-HTTP transport.
#[derive(Debug, Clone)]
pub struct HttpJson {
    pub endpoint: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpJson {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(120))
            .build();
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent,
        }
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        request_id: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .set("Content-Type", "application/json")
            .set("X-Request-Id", request_id);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(body).map_err(|e| BackendError::new(request_id, e.to_string()))?;
        let resp = req
            .send_json(body)
            .map_err(|e| BackendError::new(request_id, e.to_string()))?;
        resp.into_json::<Resp>()
            .map_err(|e| BackendError::new(request_id, format!("bad response body: {e}")))
    }
}
