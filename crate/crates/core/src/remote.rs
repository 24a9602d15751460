//! Blocking JSON-over-HTTP helper shared by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum RemoteError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("remote returned status {0}")]
    Status(u16),
    #[error("{0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Decode(String),
}

/// POSTs `body` as JSON and decodes the JSON response. `timeout` bounds the
/// whole exchange.
pub fn post_json<B, R>(url: &str, body: &B, timeout: Duration) -> Result<R, RemoteError>
where
    B: Serialize + ?Sized,
    R: DeserializeOwned,
{
    post_json_with_headers(url, body, timeout, &[])
}

pub fn post_json_with_headers<B, R>(
    url: &str,
    body: &B,
    timeout: Duration,
    headers: &[(&str, String)],
) -> Result<R, RemoteError>
where
    B: Serialize + ?Sized,
    R: DeserializeOwned,
{
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into();
    let mut request = agent.post(url);
    for (name, value) in headers {
        request = request.header(*name, value);
    }
    let mut response = request.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout(timeout),
        ureq::Error::StatusCode(code) => RemoteError::Status(code),
        other => RemoteError::Transport(other.to_string()),
    })?;
    response.body_mut().read_json::<R>().map_err(|e| match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout(timeout),
        other => RemoteError::Decode(other.to_string()),
    })
}
