//! JSON-over-HTTP backends. One POST per call; the reply body is JSON.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Detection, GatewayError, Grounder, GroundingResult, MaskResult, MultimodalModel, PromptSpec, SegmentationResult,
    Segmenter, TextModel,
};
use crate::acquisition::ImageRecord;
use crate::raster::{BitMask, Rle};

pub const ENV_TEXT: &str = "DATASETAGENT_TEXT_ENDPOINT";
pub const ENV_MM: &str = "DATASETAGENT_MM_ENDPOINT";
pub const ENV_GROUND: &str = "DATASETAGENT_GROUND_ENDPOINT";
pub const ENV_SEG: &str = "DATASETAGENT_SEG_ENDPOINT";

/// Endpoint settings. Empty endpoints are filled from the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub text_endpoint: String,
    pub multimodal_endpoint: String,
    pub ground_endpoint: String,
    pub segment_endpoint: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: String,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn resolve(&self, env_var: &str) -> Result<Endpoint, GatewayError> {
        let configured = match env_var {
            ENV_TEXT => &self.text_endpoint,
            ENV_MM => &self.multimodal_endpoint,
            ENV_GROUND => &self.ground_endpoint,
            _ => &self.segment_endpoint,
        };
        let url = if configured.is_empty() { std::env::var(env_var).unwrap_or_default() } else { configured.clone() };
        if url.is_empty() {
            return Err(GatewayError::BackendUnavailable(format!("no endpoint configured (set {env_var})")));
        }
        let api_key = (!self.api_key_env.is_empty()).then(|| std::env::var(&self.api_key_env).ok()).flatten();
        let timeout = Duration::from_millis(if self.timeout_ms == 0 { 60_000 } else { self.timeout_ms });
        Ok(Endpoint { url, model: self.model.clone(), api_key, timeout })
    }
}

struct Client {
    ep: Endpoint,
    agent: ureq::Agent,
}

impl Client {
    fn new(ep: Endpoint) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(ep.timeout)).build().into();
        Self { ep, agent }
    }

    fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        let mut req = self.agent.post(&self.ep.url).header("content-type", "application/json");
        if let Some(k) = &self.ep.api_key {
            req = req.header("authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| match e {
            ureq::Error::Timeout(t) => GatewayError::Timeout(t.to_string()),
            ureq::Error::StatusCode(code) if code < 500 && code != 429 => {
                GatewayError::InvalidReply(format!("http status {code}"))
            }
            other => GatewayError::BackendUnavailable(other.to_string()),
        })?;
        let text = resp.body_mut().read_to_string().map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::InvalidReply(format!("reply is not JSON: {e}")))
    }

    fn image_payload(record: &ImageRecord) -> Result<String, GatewayError> {
        let png = record.image.encode_png().map_err(|e| GatewayError::Precondition(e.to_string()))?;
        Ok(base64::engine::general_purpose::STANDARD.encode(png))
    }
}

/// Accepts `{"text": ...}` or a chat-completions style reply.
fn reply_text(v: &Value) -> Option<String> {
    v.get("text")
        .and_then(Value::as_str)
        .or_else(|| v.pointer("/choices/0/message/content").and_then(Value::as_str))
        .map(str::to_string)
}

pub struct HttpText(Client);

impl HttpText {
    pub fn new(ep: Endpoint) -> Self {
        Self(Client::new(ep))
    }
}

impl TextModel for HttpText {
    fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        let v = self.0.post(&json!({"model": self.0.ep.model, "prompt": prompt}))?;
        reply_text(&v).ok_or_else(|| GatewayError::InvalidReply("reply has no text".into()))
    }
}

pub struct HttpMultimodal(Client);

impl HttpMultimodal {
    pub fn new(ep: Endpoint) -> Self {
        Self(Client::new(ep))
    }
}

impl MultimodalModel for HttpMultimodal {
    fn analyze(&self, record: &ImageRecord, prompt: &str) -> Result<Value, GatewayError> {
        let v = self.0.post(&json!({
            "model": self.0.ep.model,
            "prompt": prompt,
            "image_id": record.id,
            "image_png_base64": Client::image_payload(record)?,
        }))?;
        // a text reply is expected to carry the JSON document
        match reply_text(&v) {
            Some(t) => Ok(Value::String(t)),
            None => Ok(v),
        }
    }
}

#[derive(Deserialize)]
struct WireMask {
    class: String,
    instance_id: u32,
    confidence: f64,
    rle: Rle,
    #[serde(default)]
    stuff: bool,
}

pub struct HttpGrounder(Client);

impl HttpGrounder {
    pub fn new(ep: Endpoint) -> Self {
        Self(Client::new(ep))
    }
}

impl Grounder for HttpGrounder {
    fn ground(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<GroundingResult, GatewayError> {
        let v = self.0.post(&json!({
            "model": self.0.ep.model,
            "prompts": prompts,
            "image_png_base64": Client::image_payload(record)?,
        }))?;
        let detections: Vec<Detection> = serde_json::from_value(v.get("detections").cloned().unwrap_or(Value::Null))
            .map_err(|e| GatewayError::InvalidReply(e.to_string()))?;
        Ok(GroundingResult { detections })
    }
}

pub struct HttpSegmenter(Client);

impl HttpSegmenter {
    pub fn new(ep: Endpoint) -> Self {
        Self(Client::new(ep))
    }
}

impl Segmenter for HttpSegmenter {
    fn segment(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<SegmentationResult, GatewayError> {
        let v = self.0.post(&json!({
            "model": self.0.ep.model,
            "prompts": prompts,
            "image_png_base64": Client::image_payload(record)?,
        }))?;
        let wire: Vec<WireMask> = serde_json::from_value(v.get("masks").cloned().unwrap_or(Value::Null))
            .map_err(|e| GatewayError::InvalidReply(e.to_string()))?;
        let masks = wire
            .into_iter()
            .map(|m| {
                let mask = BitMask::from_rle(&m.rle).map_err(|e| GatewayError::InvalidReply(e.to_string()))?;
                Ok(MaskResult { class: m.class, instance_id: m.instance_id, mask, confidence: m.confidence, stuff: m.stuff })
            })
            .collect::<Result<_, GatewayError>>()?;
        Ok(SegmentationResult { masks })
    }
}
