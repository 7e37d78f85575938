//! Blocking HTTP client for real model servers.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::header::{AUTHORIZATION, CONTENT_TYPE};
use reqwest::StatusCode;

use super::wire::{decode_reply, encode_request, error_message, route};
use super::{BackendEndpoint, CapabilityKind, Reply, Request, Transport, TransportError};

pub const CHAT_API_KEY_ENV: &str = "SYNTHPIPE_CHAT_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: Client,
    chat_api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(chat_api_key: Option<String>) -> Self {
        Self {
            client: Client::builder().build().expect("http client builds"),
            chat_api_key,
        }
    }

    pub fn from_env() -> Self {
        Self::new(std::env::var(CHAT_API_KEY_ENV).ok().filter(|k| !k.is_empty()))
    }

    fn url(endpoint: &BackendEndpoint) -> String {
        format!("{}{}", endpoint.base_url.trim_end_matches('/'), route(endpoint.kind))
    }
}

/// Maps an HTTP status to the transport error it represents.
pub fn classify_status(status: u16, message: String) -> TransportError {
    match status {
        408 | 504 => TransportError::Timeout,
        429 | 500..=599 => TransportError::Transient(format!("{status}: {message}")),
        _ => TransportError::Rejected {
            status: Some(status),
            message,
        },
    }
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &BackendEndpoint, request: &Request) -> Result<Reply, TransportError> {
        let mut req = self
            .client
            .post(Self::url(endpoint))
            .timeout(Duration::from_secs_f64(endpoint.timeout_secs))
            .header(CONTENT_TYPE, "application/json")
            .body(encode_request(request));
        if endpoint.kind == CapabilityKind::Chat {
            if let Some(key) = &self.chat_api_key {
                req = req.header(AUTHORIZATION, format!("Bearer {key}"));
            }
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Transient(e.to_string())
            }
        })?;
        if status != StatusCode::OK {
            return Err(classify_status(status.as_u16(), error_message(&bytes)));
        }
        decode_reply(endpoint.kind, &bytes).map_err(|e| TransportError::Protocol(e.to_string()))
    }
}
