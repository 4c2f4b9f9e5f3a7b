//! Chat-completions HTTP backend.
//!
//! Speaks the common chat-completions JSON dialect: a `messages` array
//! with text/image-url parts, optional `seed` and `logprobs`, bearer
//! auth from an environment variable named in the endpoint config.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AttemptOutcome, CompletionRequest, CompletionResponse, FinishReason, PromptPart};

/// Remote endpoint configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEndpoint {
    /// Full URL of the chat-completions route.
    pub url: String,
    /// Model name sent in the request body.
    pub model: String,
    /// Name of the environment variable holding the API key; empty for
    /// unauthenticated endpoints.
    #[serde(default)]
    pub api_key_env: String,
    /// Maximum concurrently in-flight requests to this endpoint.
    #[serde(default = "default_cap")]
    pub in_flight_cap: usize,
    /// Request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_cap() -> usize {
    4
}

fn default_timeout() -> u64 {
    300
}

pub(crate) struct HttpBackend {
    cfg: HttpEndpoint,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub(crate) fn new(cfg: HttpEndpoint) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(cfg.timeout_secs))
            .build()
            .expect("http client");
        Self { cfg, client }
    }

    pub(crate) fn attempt(&self, req: &CompletionRequest) -> AttemptOutcome {
        let body = match build_body(&self.cfg.model, req) {
            Ok(b) => b,
            Err(reason) => return AttemptOutcome::Permanent(reason),
        };
        let mut http_req = self.client.post(&self.cfg.url).json(&body);
        if !self.cfg.api_key_env.is_empty() {
            match std::env::var(&self.cfg.api_key_env) {
                Ok(key) => http_req = http_req.bearer_auth(key),
                Err(_) => {
                    return AttemptOutcome::Permanent(format!(
                        "API key variable '{}' is not set",
                        self.cfg.api_key_env
                    ))
                }
            }
        }
        let resp = match http_req.send() {
            Ok(r) => r,
            Err(e) => return AttemptOutcome::Transient(format!("request failed: {e}")),
        };
        let status = resp.status();
        if status.is_success() {
            match resp.json::<ChatResponse>() {
                Ok(parsed) => match parse_response(parsed) {
                    Ok(out) => AttemptOutcome::Reply(out),
                    Err(reason) => AttemptOutcome::Permanent(reason),
                },
                Err(e) => AttemptOutcome::Permanent(format!("unparseable response body: {e}")),
            }
        } else if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            AttemptOutcome::Transient(format!("status {status}"))
        } else {
            AttemptOutcome::Permanent(format!("status {status}"))
        }
    }
}

/// Build the chat-completions request body.
pub(crate) fn build_body(model: &str, req: &CompletionRequest) -> Result<serde_json::Value, String> {
    let mut content = Vec::new();
    for part in &req.prompt_parts {
        match part {
            PromptPart::Text(t) => content.push(json!({"type": "text", "text": t})),
            PromptPart::Image(r) => {
                let url = image_url(r)?;
                content.push(json!({"type": "image_url", "image_url": {"url": url}}));
            }
        }
    }
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "temperature": req.temperature,
        "max_tokens": req.max_output_units,
        "seed": req.seed,
    });
    if req.want_logprobs {
        body["logprobs"] = json!(true);
    }
    Ok(body)
}

/// Pass `data:` URIs through; read file paths and inline them as base64
/// data URIs so record files stay free of raw binary.
fn image_url(image_ref: &str) -> Result<String, String> {
    if image_ref.starts_with("data:") || image_ref.starts_with("http://") || image_ref.starts_with("https://") {
        return Ok(image_ref.to_string());
    }
    let bytes =
        std::fs::read(image_ref).map_err(|e| format!("cannot read image '{image_ref}': {e}"))?;
    let mime = match std::path::Path::new(image_ref)
        .extension()
        .and_then(|e| e.to_str())
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    Ok(format!("data:{mime};base64,{}", base64_encode(&bytes)))
}

fn base64_encode(bytes: &[u8]) -> String {
    const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = u32::from(b[0]) << 16 | u32::from(b[1]) << 8 | u32::from(b[2]);
        out.push(ALPHABET[(n >> 18) as usize & 63] as char);
        out.push(ALPHABET[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 { ALPHABET[(n >> 6) as usize & 63] as char } else { '=' });
        out.push(if chunk.len() > 2 { ALPHABET[n as usize & 63] as char } else { '=' });
    }
    out
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<LogprobsBlock>,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

#[derive(Debug, Deserialize)]
struct LogprobsBlock {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    token: String,
    logprob: f64,
}

fn parse_response(parsed: ChatResponse) -> Result<CompletionResponse, String> {
    let choice = parsed.choices.into_iter().next().ok_or("response has no choices")?;
    let refused = choice.message.refusal.is_some();
    let text = choice.message.content.unwrap_or_default();
    let finish_reason = if refused {
        FinishReason::Refused
    } else {
        match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Truncated,
            Some("content_filter") => FinishReason::Refused,
            _ => FinishReason::Complete,
        }
    };
    let (token_logprobs, token_texts) = match choice.logprobs.and_then(|l| l.content) {
        Some(entries) if !entries.is_empty() => {
            let mut lps = Vec::with_capacity(entries.len());
            let mut texts = Vec::with_capacity(entries.len());
            for e in entries {
                // Some servers report tiny positive rounding noise.
                lps.push(e.logprob.min(0.0));
                texts.push(e.token);
            }
            (Some(lps), Some(texts))
        }
        _ => (None, None),
    };
    Ok(CompletionResponse {
        text,
        token_logprobs,
        token_texts,
        finish_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_includes_parts_seed_and_logprobs_flag() {
        let req = CompletionRequest::new(
            "ep",
            vec![
                PromptPart::Text("solve this".into()),
                PromptPart::Image("data:image/png;base64,AAAA".into()),
            ],
            99,
        )
        .temperature(1.0)
        .want_logprobs(true);
        let body = build_body("test-model", &req).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["seed"], 99);
        assert_eq!(body["temperature"], 1.0);
        assert_eq!(body["logprobs"], true);
        let content = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 2);
        assert_eq!(content[0]["type"], "text");
        assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,AAAA");
    }

    #[test]
    fn response_parse_maps_finish_and_logprobs() {
        let raw = serde_json::json!({
            "choices": [{
                "message": {"content": "Answer: 4"},
                "finish_reason": "stop",
                "logprobs": {"content": [
                    {"token": "Answer:", "logprob": -0.1},
                    {"token": " 4", "logprob": -0.2}
                ]}
            }]
        });
        let parsed: ChatResponse = serde_json::from_value(raw).unwrap();
        let resp = parse_response(parsed).unwrap();
        assert_eq!(resp.text, "Answer: 4");
        assert_eq!(resp.finish_reason, FinishReason::Complete);
        assert_eq!(resp.token_logprobs.unwrap(), vec![-0.1, -0.2]);
        assert_eq!(resp.token_texts.unwrap(), vec!["Answer:", " 4"]);
    }

    #[test]
    fn truncated_finish_reason() {
        let raw = serde_json::json!({
            "choices": [{"message": {"content": "partial"}, "finish_reason": "length"}]
        });
        let parsed: ChatResponse = serde_json::from_value(raw).unwrap();
        assert_eq!(parse_response(parsed).unwrap().finish_reason, FinishReason::Truncated);
    }

    #[test]
    fn base64_matches_known_vectors() {
        assert_eq!(base64_encode(b""), "");
        assert_eq!(base64_encode(b"f"), "Zg==");
        assert_eq!(base64_encode(b"fo"), "Zm8=");
        assert_eq!(base64_encode(b"foo"), "Zm9v");
        assert_eq!(base64_encode(b"foobar"), "Zm9vYmFy");
    }
}
