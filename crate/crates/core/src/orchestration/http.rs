use std::time::Duration;

use serde_json::{json, Value};

use super::client::{ChatMessage, EndpointConfig, EndpointError, LlmClient};

/// Chat-completion style JSON endpoint. Field names and reply locations
/// come from [`EndpointConfig`].
pub struct HttpClient {
    config: EndpointConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    /// Reads the api key from the environment variable named in `config`.
    pub fn from_env(config: EndpointConfig) -> Result<Self, EndpointError> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| EndpointError::MissingApiKey(config.api_key_env.clone()))?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: EndpointConfig, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient { config, api_key, agent }
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, EndpointError> {
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let mut resp = self
            .agent
            .post(&url)
            .header(
                &self.config.auth_header,
                &format!("{}{}", self.config.auth_prefix, self.api_key),
            )
            .send_json(&body)
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(EndpointError::Status { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| EndpointError::Malformed(e.to_string()))
    }
}

impl LlmClient for HttpClient {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let mut body = json!({ "model": self.config.model });
        body[&self.config.messages_field] = serde_json::to_value(messages).expect("messages serialize");
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let reply = self.post(&self.config.chat_path, body)?;
        reply
            .pointer(&self.config.chat_reply_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| EndpointError::Malformed(format!("no string at {}", self.config.chat_reply_pointer)))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EndpointError> {
        let mut body = json!({ "model": self.config.embedding_model });
        body[&self.config.input_field] = json!(text);
        let reply = self.post(&self.config.embed_path, body)?;
        reply
            .pointer(&self.config.embedding_pointer)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| EndpointError::Malformed(format!("no number array at {}", self.config.embedding_pointer)))
    }
}
