//! Evaluation backends: the in-process engine, cloud-style HTTP APIs, a
//! local daemon, and the bundled mock. Each backend returns the model's
//! text; JSON payloads are flattened to plain strings before
//! classification.

use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::feedback::FeedbackState;
use crate::infer::{generate, ModelWeights, Sampling, WeightSource};
use crate::tokenizer::Tokenizer;

/// Environment variables holding API keys for the cloud backends.
pub const ENV_OPENAI_KEY: &str = "ELM_OPENAI_KEY";
pub const ENV_GEMINI_KEY: &str = "ELM_GEMINI_KEY";
pub const ENV_GROK_KEY: &str = "ELM_GROK_KEY";

/// Backend discriminator; serialized into every log record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BackendKind {
    #[serde(rename = "local-engine")]
    LocalEngine,
    #[serde(rename = "http-openai-style")]
    HttpOpenaiStyle,
    #[serde(rename = "http-gemini-style")]
    HttpGeminiStyle,
    #[serde(rename = "http-grok-style")]
    HttpGrokStyle,
    #[serde(rename = "http-daemon-style")]
    HttpDaemonStyle,
    #[serde(rename = "mock")]
    Mock,
}

impl BackendKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "local-engine" => BackendKind::LocalEngine,
            "http-openai-style" => BackendKind::HttpOpenaiStyle,
            "http-gemini-style" => BackendKind::HttpGeminiStyle,
            "http-grok-style" => BackendKind::HttpGrokStyle,
            "http-daemon-style" => BackendKind::HttpDaemonStyle,
            "mock" => BackendKind::Mock,
            other => return Err(Error::Config(format!("unknown backend `{other}`"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::LocalEngine => "local-engine",
            BackendKind::HttpOpenaiStyle => "http-openai-style",
            BackendKind::HttpGeminiStyle => "http-gemini-style",
            BackendKind::HttpGrokStyle => "http-grok-style",
            BackendKind::HttpDaemonStyle => "http-daemon-style",
            BackendKind::Mock => "mock",
        }
    }

    /// Cooling between consecutive requests when the caller does not
    /// override it: 30 s cloud-style, 60 s local daemon, none otherwise.
    pub fn default_cooling(&self) -> Duration {
        match self {
            BackendKind::HttpOpenaiStyle | BackendKind::HttpGeminiStyle | BackendKind::HttpGrokStyle => {
                Duration::from_secs(30)
            }
            BackendKind::HttpDaemonStyle => Duration::from_secs(60),
            BackendKind::LocalEngine | BackendKind::Mock => Duration::ZERO,
        }
    }

    fn needs_key(&self) -> Option<&'static str> {
        match self {
            BackendKind::HttpOpenaiStyle => Some(ENV_OPENAI_KEY),
            BackendKind::HttpGeminiStyle => Some(ENV_GEMINI_KEY),
            BackendKind::HttpGrokStyle => Some(ENV_GROK_KEY),
            _ => None,
        }
    }
}

/// A target the battery runner can query sequentially.
pub trait Backend {
    fn kind(&self) -> BackendKind;
    fn model_name(&self) -> &str;
    /// One prompt in, the model's text out.
    fn send(&mut self, prompt: &str) -> Result<String>;
    /// Called with every classified decision; closes the feedback loop on
    /// backends that carry one.
    fn observe(&mut self, _decision: u8) -> Result<()> {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Response extractors, one per wire shape. Public so fixture tests can pin
// them against captured JSON.

/// chat-completions: choices[0].message.content.
pub fn extract_chat_completion(v: &Value) -> Result<String> {
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Backend("response lacks choices[0].message.content".into()))
}

/// generate-content: candidates[0].content.parts[*].text, concatenated.
pub fn extract_generate_content(v: &Value) -> Result<String> {
    let parts = v["candidates"][0]["content"]["parts"]
        .as_array()
        .ok_or_else(|| Error::Backend("response lacks candidates[0].content.parts".into()))?;
    let text: String = parts
        .iter()
        .filter_map(|p| p["text"].as_str())
        .collect::<Vec<_>>()
        .join("");
    if text.is_empty() && !parts.is_empty() && parts.iter().all(|p| p["text"].is_null()) {
        return Err(Error::Backend("no text parts in candidate".into()));
    }
    Ok(text)
}

/// local daemon: the `response` field.
pub fn extract_daemon(v: &Value) -> Result<String> {
    v["response"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Backend("response lacks `response` field".into()))
}

/// mock shape: the `text` field.
pub fn extract_mock(v: &Value) -> Result<String> {
    v["text"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| Error::Backend("response lacks `text` field".into()))
}

// ---------------------------------------------------------------------------

/// HTTP backend speaking one of the four wire shapes.
#[derive(Debug)]
pub struct HttpBackend {
    kind: BackendKind,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `endpoint` is the base URL (no trailing path). Cloud styles require
    /// their key env var unless `api_key` is passed explicitly.
    pub fn new(
        kind: BackendKind,
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
    ) -> Result<Self> {
        if kind == BackendKind::LocalEngine {
            return Err(Error::Config(
                "local-engine is not an HTTP backend".into(),
            ));
        }
        let api_key = match (api_key, kind.needs_key()) {
            (Some(k), _) => Some(k),
            (None, Some(var)) => match std::env::var(var) {
                Ok(k) if !k.is_empty() => Some(k),
                _ => {
                    return Err(Error::Config(format!(
                        "backend {} requires an API key in ${var}",
                        kind.as_str()
                    )))
                }
            },
            (None, None) => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(format!("failed to build HTTP client: {e}")))?;
        Ok(Self {
            kind,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    fn request(&self, prompt: &str) -> (String, Value) {
        match self.kind {
            BackendKind::HttpOpenaiStyle | BackendKind::HttpGrokStyle => (
                format!("{}/v1/chat/completions", self.endpoint),
                serde_json::json!({
                    "model": self.model,
                    "messages": [{"role": "user", "content": prompt}]
                }),
            ),
            BackendKind::HttpGeminiStyle => (
                format!(
                    "{}/v1beta/models/{}:generateContent",
                    self.endpoint, self.model
                ),
                serde_json::json!({
                    "contents": [{"parts": [{"text": prompt}]}]
                }),
            ),
            BackendKind::HttpDaemonStyle => (
                format!("{}/api/generate", self.endpoint),
                serde_json::json!({
                    "model": self.model,
                    "prompt": prompt,
                    "stream": false
                }),
            ),
            BackendKind::Mock => (
                format!("{}/mock/generate", self.endpoint),
                serde_json::json!({ "prompt": prompt }),
            ),
            BackendKind::LocalEngine => unreachable!("rejected in new()"),
        }
    }

    fn extract(&self, v: &Value) -> Result<String> {
        match self.kind {
            BackendKind::HttpOpenaiStyle | BackendKind::HttpGrokStyle => extract_chat_completion(v),
            BackendKind::HttpGeminiStyle => extract_generate_content(v),
            BackendKind::HttpDaemonStyle => extract_daemon(v),
            BackendKind::Mock => extract_mock(v),
            BackendKind::LocalEngine => unreachable!(),
        }
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn model_name(&self) -> &str {
        &self.model
    }

    fn send(&mut self, prompt: &str) -> Result<String> {
        let (url, body) = self.request(prompt);
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = match self.kind {
                BackendKind::HttpGeminiStyle => req.header("x-goog-api-key", key),
                _ => req.bearer_auth(key),
            };
        }
        let resp = req
            .send()
            .map_err(|e| Error::Backend(format!("transport failure: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Error::Config(format!(
                "authentication rejected by {url} ({status})"
            )));
        }
        if !status.is_success() {
            return Err(Error::Backend(format!("HTTP {status} from {url}")));
        }
        let v: Value = resp
            .json()
            .map_err(|e| Error::Backend(format!("non-JSON response: {e}")))?;
        self.extract(&v)
    }
}

/// In-process engine backend; optionally carries a feedback loop that the
/// runner closes by calling `observe` after classifying each response.
pub struct LocalEngineBackend<W: WeightSource> {
    weights: W,
    tokenizer: Tokenizer,
    model_name: String,
    max_tokens: usize,
    sampling: Sampling,
    feedback: Option<FeedbackState>,
}

impl<W: WeightSource> LocalEngineBackend<W> {
    pub fn new(
        weights: W,
        tokenizer: Tokenizer,
        model_name: &str,
        max_tokens: usize,
        sampling: Sampling,
    ) -> Self {
        Self {
            weights,
            tokenizer,
            model_name: model_name.to_string(),
            max_tokens,
            sampling,
            feedback: None,
        }
    }

    pub fn with_feedback(mut self, feedback: FeedbackState) -> Self {
        self.feedback = Some(feedback);
        self
    }

    pub fn feedback(&self) -> Option<&FeedbackState> {
        self.feedback.as_ref()
    }

    pub fn into_feedback(self) -> Option<FeedbackState> {
        self.feedback
    }
}

impl LocalEngineBackend<ModelWeights> {
    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }
}

impl<W: WeightSource> Backend for LocalEngineBackend<W> {
    fn kind(&self) -> BackendKind {
        BackendKind::LocalEngine
    }

    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn send(&mut self, prompt: &str) -> Result<String> {
        let cw = self.feedback.as_ref().map(|f| f.weights().clone());
        let out = generate(
            &mut self.weights,
            &self.tokenizer,
            prompt,
            self.max_tokens,
            self.sampling,
            cw.as_ref(),
        )?;
        Ok(out.text)
    }

    fn observe(&mut self, decision: u8) -> Result<()> {
        if let Some(f) = self.feedback.as_mut() {
            f.observe(decision)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_names_roundtrip() {
        for kind in [
            BackendKind::LocalEngine,
            BackendKind::HttpOpenaiStyle,
            BackendKind::HttpGeminiStyle,
            BackendKind::HttpGrokStyle,
            BackendKind::HttpDaemonStyle,
            BackendKind::Mock,
        ] {
            assert_eq!(BackendKind::parse(kind.as_str()).unwrap(), kind);
        }
        assert!(BackendKind::parse("carrier-pigeon").is_err());
    }

    #[test]
    fn cooling_defaults_match_the_protocol() {
        assert_eq!(
            BackendKind::HttpOpenaiStyle.default_cooling(),
            Duration::from_secs(30)
        );
        assert_eq!(
            BackendKind::HttpDaemonStyle.default_cooling(),
            Duration::from_secs(60)
        );
        assert_eq!(BackendKind::Mock.default_cooling(), Duration::ZERO);
        assert_eq!(BackendKind::LocalEngine.default_cooling(), Duration::ZERO);
    }

    #[test]
    fn cloud_backend_without_key_is_a_config_error() {
        std::env::remove_var(ENV_OPENAI_KEY);
        let err =
            HttpBackend::new(BackendKind::HttpOpenaiStyle, "http://x", "m", None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn extractors_pull_the_right_fields() {
        let chat: Value = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": " 0."}}]
        });
        assert_eq!(extract_chat_completion(&chat).unwrap(), " 0.");

        let gem: Value = serde_json::json!({
            "candidates": [{"content": {"parts": [{"text": "I "}, {"text": "refuse"}]}}]
        });
        assert_eq!(extract_generate_content(&gem).unwrap(), "I refuse");

        let daemon: Value = serde_json::json!({"response": "1", "done": true});
        assert_eq!(extract_daemon(&daemon).unwrap(), "1");

        let mock: Value = serde_json::json!({"text": "0"});
        assert_eq!(extract_mock(&mock).unwrap(), "0");

        assert!(extract_chat_completion(&mock).is_err());
        assert!(extract_daemon(&chat).is_err());
    }
}
