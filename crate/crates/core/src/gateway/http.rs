use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, FinishReason, GatewayError, MessageRole, Usage};

/// OpenAI-compatible `chat/completions` client.
///
/// Image references (`sha256:<hex>`) are resolved against a blob directory
/// and sent inline as base64 data URLs.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    blob_dir: Option<PathBuf>,
    vision: bool,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            timeout: Duration::from_secs(120),
            blob_dir: None,
            vision: true,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_blob_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.blob_dir = Some(dir.into());
        self
    }

    pub fn with_vision(mut self, vision: bool) -> Self {
        self.vision = vision;
        self
    }

    fn image_url(&self, reference: &str) -> Option<String> {
        let hash = reference.strip_prefix("sha256:").unwrap_or(reference);
        let path = self.blob_dir.as_ref()?.join(hash);
        let bytes = std::fs::read(path).ok()?;
        let media = sniff_media_type(&bytes);
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        Some(format!("data:{media};base64,{b64}"))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    MessageRole::System => "system",
                    MessageRole::User => "user",
                    MessageRole::Assistant => "assistant",
                };
                let images: Vec<String> = m.image_refs.iter().filter_map(|r| self.image_url(r)).collect();
                if images.is_empty() {
                    json!({"role": role, "content": m.content})
                } else {
                    let mut parts = vec![json!({"type": "text", "text": m.content})];
                    parts.extend(
                        images
                            .into_iter()
                            .map(|url| json!({"type": "image_url", "image_url": {"url": url}})),
                    );
                    json!({"role": role, "content": parts})
                }
            })
            .collect();
        json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let mut call = client.post(&self.endpoint).json(&self.body(request));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(GatewayError::Provider {
                status: status.as_u16(),
                excerpt: text.chars().take(200).collect(),
            });
        }
        parse_completion(&text)
    }

    fn supports_vision(&self) -> bool {
        self.vision
    }
}

fn classify(e: reqwest::Error) -> GatewayError {
    if e.is_timeout() {
        GatewayError::Timeout
    } else {
        GatewayError::Network {
            message: e.to_string(),
            retryable: e.is_connect() || e.is_request() || e.is_body(),
        }
    }
}

fn parse_completion(text: &str) -> Result<ChatResponse, GatewayError> {
    let bad = |why: &str| GatewayError::Provider {
        status: 200,
        excerpt: format!("{why}: {}", text.chars().take(160).collect::<String>()),
    };
    let v: Value = serde_json::from_str(text).map_err(|_| bad("malformed JSON"))?;
    let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(|| bad("no choices"))?;
    let content = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("no message content"))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    let usage = Usage {
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok(ChatResponse { content, finish_reason, usage })
}

pub fn sniff_media_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "image/jpeg"
    } else if bytes.starts_with(b"GIF8") {
        "image/gif"
    } else if bytes.len() > 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}
