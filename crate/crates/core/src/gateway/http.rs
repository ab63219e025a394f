use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionRequest, GatewayConfig, GatewayError, LlmBackend};

/// Chat-completions style backend: posts `{model, temperature, messages}` and
/// reads `choices[0].message.content`.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::InvalidConfig("real backend needs an endpoint".into()))?;
        if config.model.is_empty() {
            return Err(GatewayError::InvalidConfig("real backend needs a model name".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        Ok(HttpBackend {
            client,
            endpoint,
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        let mut call = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call
            .send()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GatewayError::BackendUnavailable(format!("endpoint returned {status}")));
        }
        let value: Value = resp
            .json()
            .map_err(|e| GatewayError::BackendUnavailable(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| GatewayError::BackendUnavailable("response has no message content".into()))
    }

    fn verifies_relevance(&self) -> bool {
        true
    }
}
