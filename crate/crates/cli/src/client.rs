//! Blocking HTTP client for the node API.

use std::time::Duration;

use halaltrace_node::ErrorBody;
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub struct NodeClient {
    base: String,
    http: Client,
}

impl NodeClient {
    pub fn new(base: &str) -> Result<NodeClient, CliError> {
        let http = Client::builder().timeout(Duration::from_secs(60)).build().map_err(|e| CliError::Transport(e.to_string()))?;
        Ok(NodeClient { base: base.to_string(), http })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send(&self, request: RequestBuilder) -> Result<Response, CliError> {
        let response = request.send().map_err(|e| CliError::Transport(e.to_string()))?;
        if response.status().is_success() {
            return Ok(response);
        }
        let status = response.status().as_u16();
        let text = response.text().unwrap_or_default();
        let body = serde_json::from_str::<ErrorBody>(&text)
            .unwrap_or(ErrorBody { code: "http_error".into(), field: None, detail: text });
        Err(CliError::Api { status, body })
    }

    fn json<T: DeserializeOwned>(response: Response) -> Result<T, CliError> {
        response.json().map_err(|e| CliError::Failed(format!("unexpected response: {e}")))
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, CliError> {
        Self::json(self.send(self.http.get(self.url(path)))?)
    }

    pub fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, CliError> {
        Self::json(self.send(self.http.post(self.url(path)).json(body))?)
    }

    /// POSTs JSON and returns the raw body with one response header.
    pub fn post_for_bytes<B: Serialize + ?Sized>(&self, path: &str, body: &B, header: &str) -> Result<(Vec<u8>, Option<String>), CliError> {
        let response = self.send(self.http.post(self.url(path)).json(body))?;
        let value = response.headers().get(header).and_then(|v| v.to_str().ok()).map(String::from);
        let bytes = response.bytes().map_err(|e| CliError::Transport(e.to_string()))?;
        Ok((bytes.to_vec(), value))
    }

    pub fn post_bytes<T: DeserializeOwned>(&self, path: &str, content_type: &str, bytes: Vec<u8>) -> Result<T, CliError> {
        Self::json(self.send(self.http.post(self.url(path)).header(reqwest::header::CONTENT_TYPE, content_type).body(bytes))?)
    }
}
