//! Remote chat-completion backend.
//!
//! The request is a role instruction plus the JSON context as the user turn;
//! the reply text must be a JSON document. Provider wire formats live in
//! [`Provider`]; credentials are read from the environment at call time.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentBackend, AgentRequest, BackendReply, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// `POST {base}/chat/completions` with a bearer token.
    #[default]
    OpenaiCompatible,
    /// `POST {base}/v1/messages` with an `x-api-key` header.
    Anthropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    #[serde(default)]
    pub provider: Provider,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub context_limit: Option<u64>,
}

fn default_timeout() -> u64 {
    120
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend { config, agent }
    }

    fn api_key(&self) -> Result<String, TransportError> {
        std::env::var(&self.config.api_key_env)
            .map_err(|_| TransportError(format!("environment variable {} is not set", self.config.api_key_env)))
    }

    fn endpoint(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.provider {
            Provider::OpenaiCompatible => format!("{base}/chat/completions"),
            Provider::Anthropic => format!("{base}/v1/messages"),
        }
    }

    fn body(&self, request: &AgentRequest) -> Value {
        let user = request.context.to_string();
        let system = request.role.instruction();
        match self.config.provider {
            Provider::OpenaiCompatible => json!({
                "model": self.config.model,
                "max_tokens": request.max_response_tokens,
                "response_format": {"type": "json_object"},
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
            }),
            Provider::Anthropic => json!({
                "model": self.config.model,
                "max_tokens": request.max_response_tokens,
                "system": system,
                "messages": [{"role": "user", "content": user}],
            }),
        }
    }

    /// Pulls the reply text and token usage out of a provider response.
    fn unpack(&self, payload: &Value) -> Result<(String, Option<u64>), TransportError> {
        let (text, tokens) = match self.config.provider {
            Provider::OpenaiCompatible => (
                payload.pointer("/choices/0/message/content").and_then(Value::as_str),
                payload.pointer("/usage/total_tokens").and_then(Value::as_u64),
            ),
            Provider::Anthropic => (
                payload.pointer("/content/0/text").and_then(Value::as_str),
                match (
                    payload.pointer("/usage/input_tokens").and_then(Value::as_u64),
                    payload.pointer("/usage/output_tokens").and_then(Value::as_u64),
                ) {
                    (Some(i), Some(o)) => Some(i + o),
                    _ => None,
                },
            ),
        };
        let text = text.ok_or_else(|| TransportError("provider response carries no message text".into()))?;
        Ok((text.to_owned(), tokens))
    }
}

/// Parses model output as JSON, tolerating a surrounding code fence.
pub fn parse_reply_text(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    let inner = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(inner.trim()).map_err(|e| format!("reply is not JSON: {e}"))
}

impl AgentBackend for RemoteBackend {
    fn complete(&self, request: &AgentRequest) -> Result<BackendReply, TransportError> {
        let key = self.api_key()?;
        let req = self.agent.post(&self.endpoint());
        let req = match self.config.provider {
            Provider::OpenaiCompatible => req.header("Authorization", &format!("Bearer {key}")),
            Provider::Anthropic => req
                .header("x-api-key", &key)
                .header("anthropic-version", "2023-06-01"),
        };
        let mut resp = req
            .send_json(self.body(request))
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        let payload: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError(format!("HTTP {status}: {e}")))?;
        if !status.is_success() {
            return Err(TransportError(format!("HTTP {status}: {payload}")));
        }
        let (text, tokens) = self.unpack(&payload)?;
        // unparseable text becomes a string value so the schema gate rejects
        // it and the retry carries a repair note
        let content = parse_reply_text(&text).unwrap_or(Value::String(text));
        Ok(BackendReply { content, tokens })
    }

    fn backoff_on_retry(&self) -> bool {
        true
    }

    fn context_limit(&self) -> Option<u64> {
        self.config.context_limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::AgentRole;

    fn backend(provider: Provider) -> RemoteBackend {
        RemoteBackend::new(RemoteConfig {
            provider,
            base_url: "http://localhost:9/".into(),
            model: "m".into(),
            api_key_env: "SUPERVISOR_TEST_UNSET_KEY".into(),
            timeout_secs: 1,
            context_limit: None,
        })
    }

    #[test]
    fn fenced_json_is_accepted() {
        assert_eq!(parse_reply_text("```json\n{\"a\": 1}\n```").unwrap(), json!({"a": 1}));
        assert_eq!(parse_reply_text(" {\"a\": 1} ").unwrap(), json!({"a": 1}));
        assert!(parse_reply_text("sure, here you go").is_err());
    }

    #[test]
    fn provider_shapes() {
        let req = AgentRequest::new(AgentRole::Reader, "r", json!({"paper": "x"}));
        let oa = backend(Provider::OpenaiCompatible);
        assert_eq!(oa.endpoint(), "http://localhost:9/chat/completions");
        assert_eq!(oa.body(&req)["messages"][1]["content"], "{\"paper\":\"x\"}");
        let (text, tokens) = oa
            .unpack(&json!({"choices": [{"message": {"content": "{}"}}], "usage": {"total_tokens": 12}}))
            .unwrap();
        assert_eq!((text.as_str(), tokens), ("{}", Some(12)));

        let an = backend(Provider::Anthropic);
        assert_eq!(an.endpoint(), "http://localhost:9/v1/messages");
        assert!(an.body(&req)["system"].as_str().unwrap().contains("summary"));
        let (_, tokens) = an
            .unpack(&json!({"content": [{"type": "text", "text": "{}"}], "usage": {"input_tokens": 3, "output_tokens": 4}}))
            .unwrap();
        assert_eq!(tokens, Some(7));
    }

    #[test]
    fn missing_credentials_fail_before_network() {
        let err = backend(Provider::OpenaiCompatible)
            .complete(&AgentRequest::new(AgentRole::Reader, "r", json!({})))
            .unwrap_err();
        assert!(err.0.contains("SUPERVISOR_TEST_UNSET_KEY"));
    }
}
