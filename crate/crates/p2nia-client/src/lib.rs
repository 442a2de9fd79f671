//! Blocking HTTP client for a running platform service.
//!
//! Speaks the service's three routes and converts transport-level
//! failures into protocol errors, so callers deal in the same types as
//! the in-process protocol functions: send an
//! [`AuditRequest`](p2nia_core::protocol::AuditRequest), get back an
//! [`AuditRelease`](p2nia_core::protocol::AuditRelease).

use p2nia_core::protocol::{AuditRelease, AuditRequest, PlatformInfo};
use p2nia_core::{Error, Result};

pub struct PlatformClient {
    base_url: String,
    http: reqwest::blocking::Client,
}

fn wire(err: reqwest::Error) -> Error {
    Error::Protocol(format!("transport failure: {err}"))
}

/// Pull the server's error message out of a non-success response body,
/// falling back to the raw text.
fn server_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["error"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.trim().to_string())
}

impl PlatformClient {
    pub fn new(base_url: &str) -> Result<PlatformClient> {
        let base_url = base_url.trim_end_matches('/').to_string();
        if !base_url.starts_with("http://") && !base_url.starts_with("https://") {
            return Err(Error::Protocol(format!(
                "server URL must start with http:// or https://, got {base_url:?}"
            )));
        }
        Ok(PlatformClient {
            base_url,
            http: reqwest::blocking::Client::builder().build().map_err(wire)?,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<()> {
        let response = self
            .http
            .get(format!("{}/api/v1/health", self.base_url))
            .send()
            .map_err(wire)?;
        if !response.status().is_success() {
            return Err(Error::Protocol(format!(
                "health check failed with status {}",
                response.status()
            )));
        }
        Ok(())
    }

    pub fn info(&self) -> Result<PlatformInfo> {
        let response = self
            .http
            .get(format!("{}/api/v1/info", self.base_url))
            .send()
            .map_err(wire)?;
        if !response.status().is_success() {
            return Err(Error::Protocol(format!(
                "info request failed with status {}",
                response.status()
            )));
        }
        response.json().map_err(wire)
    }

    /// Submit one audit request and parse the release document. A 422
    /// from the server surfaces as the platform's rejection reason.
    pub fn audit(&self, request: &AuditRequest) -> Result<AuditRelease> {
        let response = self
            .http
            .post(format!("{}/api/v1/audit", self.base_url))
            .body(request.to_json()?)
            .send()
            .map_err(wire)?;
        let status = response.status();
        let body = response.text().map_err(wire)?;
        if status == reqwest::StatusCode::UNPROCESSABLE_ENTITY {
            return Err(Error::Rejected(server_message(&body)));
        }
        if !status.is_success() {
            return Err(Error::Protocol(format!(
                "audit request failed with status {status}: {}",
                server_message(&body)
            )));
        }
        AuditRelease::from_document(&body)
    }
}
