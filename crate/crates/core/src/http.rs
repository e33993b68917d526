//! Blocking JSON-over-HTTP plumbing shared by the judge, generator, verifier
//! and embedding clients.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HttpError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl HttpError {
    /// Timeouts, connection failures, 5xx and undecodable bodies are retried.
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Timeout | HttpError::Transport(_) | HttpError::Malformed(_) => true,
            HttpError::Status(code) => *code >= 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    retries: u32,
}

impl JsonClient {
    pub fn new(timeout: Duration, retries: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, retries }
    }

    /// One POST, no retries.
    pub fn post_once<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, HttpError> {
        let mut resp = self
            .agent
            .post(url)
            .send_json(body)
            .map_err(classify)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(HttpError::Status(status));
        }
        let text = resp.body_mut().read_to_string().map_err(classify)?;
        serde_json::from_str(&text).map_err(|e| HttpError::Malformed(e.to_string()))
    }

    /// POST with up to `retries` additional attempts on transient failures.
    /// The error of the last attempt is returned.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, HttpError> {
        retry(self.retries, || self.post_once(url, body))
    }

    /// Like [`post`](Self::post) but with a caller-side validation step whose
    /// failure also counts as a malformed (retryable) response.
    pub fn post_validated<B, R, T, F>(&self, url: &str, body: &B, check: F) -> Result<T, HttpError>
    where
        B: Serialize,
        R: DeserializeOwned,
        F: Fn(R) -> Result<T, String>,
    {
        retry(self.retries, || {
            let raw: R = self.post_once(url, body)?;
            check(raw).map_err(HttpError::Malformed)
        })
    }
}

pub fn retry<T>(retries: u32, mut call: impl FnMut() -> Result<T, HttpError>) -> Result<T, HttpError> {
    let mut attempt = 0;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt < retries => attempt += 1,
            Err(e) => return Err(e),
        }
    }
}

fn classify(err: ureq::Error) -> HttpError {
    match err {
        ureq::Error::Timeout(_) => HttpError::Timeout,
        ureq::Error::Io(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) =>
        {
            HttpError::Timeout
        }
        ureq::Error::StatusCode(code) => HttpError::Status(code),
        ureq::Error::Json(e) => HttpError::Malformed(e.to_string()),
        other => HttpError::Transport(other.to_string()),
    }
}

/// Counting semaphore bounding concurrent outbound requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.current.lock().expect("in-flight lock poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("in-flight lock poisoned");
        }
        *n += 1;
        InFlightGuard { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("in-flight lock poisoned")
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.limit.current.lock().expect("in-flight lock poisoned");
        *n -= 1;
        self.limit.freed.notify_one();
    }
}
