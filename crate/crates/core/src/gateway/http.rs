//! OpenAI-compatible wire client: `/v1/chat/completions`, `/v1/embeddings`,
//! and perplexity scoring via the completions endpoint with log-probability
//! echo. Transport failures and 5xx responses are retried with exponential
//! backoff; 4xx responses are not.

use std::time::Duration;

use super::{
    Backend, ChatRequest, ChatResponse, FinishReason, GatewayError, PerplexityResult,
    ProviderProfile,
};

const MAX_ATTEMPTS: usize = 3;

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

impl Default for HttpBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            backoff_base: Duration::from_millis(250),
        }
    }

    /// Shrink the retry backoff (tests exercising the failure path).
    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn endpoint(&self, profile: &ProviderProfile, path: &str) -> String {
        format!("{}{}", profile.endpoint.trim_end_matches('/'), path)
    }

    fn post_json(
        &self,
        profile: &ProviderProfile,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let url = self.endpoint(profile, path);
        let mut last_detail = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            let mut request = self
                .client
                .post(&url)
                .timeout(Duration::from_secs(profile.request_timeout_secs))
                .json(body);
            if let Some(env_name) = &profile.api_key_env {
                if let Ok(key) = std::env::var(env_name) {
                    request = request.bearer_auth(key);
                }
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response.json::<serde_json::Value>().map_err(|e| {
                            GatewayError::MalformedPayload(format!("invalid JSON body: {e}"))
                        });
                    }
                    let body_text = response.text().unwrap_or_default();
                    if status.is_server_error() && attempt < MAX_ATTEMPTS {
                        last_detail = format!("status {status}");
                    } else {
                        return Err(GatewayError::Provider {
                            status: status.as_u16(),
                            body: truncate(&body_text, 500),
                        });
                    }
                }
                Err(e) => {
                    last_detail = e.to_string();
                    if attempt == MAX_ATTEMPTS {
                        break;
                    }
                }
            }
            std::thread::sleep(self.backoff_base * (1 << (attempt - 1)));
        }
        Err(GatewayError::Transport {
            attempts: MAX_ATTEMPTS,
            detail: last_detail,
        })
    }
}

/// The JSON body for a chat completion, including the `chat_template_kwargs`
/// thinking-mode extension passed through verbatim.
pub fn build_chat_body(profile: &ProviderProfile, req: &ChatRequest) -> serde_json::Value {
    let messages: Vec<serde_json::Value> = req
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "role": match m.role {
                    super::ChatRole::System => "system",
                    super::ChatRole::User => "user",
                    super::ChatRole::Assistant => "assistant",
                },
                "content": m.content,
            })
        })
        .collect();
    let mut body = serde_json::json!({
        "model": profile.model_name,
        "messages": messages,
        "temperature": req.temperature,
        "top_p": req.top_p,
        "max_tokens": req.max_tokens,
        "chat_template_kwargs": { "enable_thinking": req.enable_thinking },
    });
    if let Some(top_k) = req.top_k {
        body["top_k"] = serde_json::json!(top_k);
    }
    if let Some(seed) = req.seed {
        body["seed"] = serde_json::json!(seed);
    }
    body
}

impl Backend for HttpBackend {
    fn chat(
        &self,
        profile: &ProviderProfile,
        req: &ChatRequest,
    ) -> Result<ChatResponse, GatewayError> {
        let body = build_chat_body(profile, req);
        let value = self.post_json(profile, "/v1/chat/completions", &body)?;
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| GatewayError::MalformedPayload("missing choices[0]".into()))?;
        let text = choice
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| GatewayError::MalformedPayload("missing message.content".into()))?
            .to_string();
        let finish_reason = match choice.get("finish_reason").and_then(|v| v.as_str()) {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Error,
        };
        Ok(ChatResponse {
            text,
            prompt_tokens: value
                .pointer("/usage/prompt_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
            output_tokens: value
                .pointer("/usage/completion_tokens")
                .and_then(|v| v.as_u64())
                .unwrap_or(0),
            finish_reason,
        })
    }

    fn embed(&self, profile: &ProviderProfile, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = serde_json::json!({ "model": profile.model_name, "input": text });
        let value = self.post_json(profile, "/v1/embeddings", &body)?;
        let embedding = value
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .ok_or_else(|| GatewayError::MalformedPayload("missing data[0].embedding".into()))?;
        embedding
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| GatewayError::MalformedPayload("non-numeric embedding".into()))
            })
            .collect()
    }

    fn perplexity(
        &self,
        profile: &ProviderProfile,
        context: &str,
        target: &str,
    ) -> Result<PerplexityResult, GatewayError> {
        // Echo the prompt with logprobs and score only the target span.
        let prompt = format!("{context}{target}");
        let body = serde_json::json!({
            "model": profile.model_name,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
        });
        let value = self.post_json(profile, "/v1/completions", &body)?;
        let logprobs = value
            .pointer("/choices/0/logprobs")
            .ok_or_else(|| GatewayError::MalformedPayload("missing logprobs".into()))?;
        let token_logprobs = logprobs
            .get("token_logprobs")
            .and_then(|v| v.as_array())
            .ok_or_else(|| GatewayError::MalformedPayload("missing token_logprobs".into()))?;
        let offsets = logprobs
            .get("text_offset")
            .and_then(|v| v.as_array())
            .ok_or_else(|| GatewayError::MalformedPayload("missing text_offset".into()))?;
        let context_len = context.len();
        let mut sum = 0.0;
        let mut count = 0u64;
        for (lp, offset) in token_logprobs.iter().zip(offsets.iter()) {
            let offset = offset.as_u64().unwrap_or(0) as usize;
            if offset < context_len {
                continue;
            }
            match lp.as_f64() {
                Some(v) => {
                    sum += v;
                    count += 1;
                }
                // The first token of an unconditioned prompt has no score.
                None => continue,
            }
        }
        if count == 0 {
            return Err(GatewayError::ZeroTokenTarget);
        }
        Ok(PerplexityResult {
            perplexity: (-sum / count as f64).exp(),
            target_token_count: count,
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while end > 0 && !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, ProviderRole};

    fn profile(endpoint: &str) -> ProviderProfile {
        ProviderProfile {
            id: "p".into(),
            endpoint: endpoint.into(),
            model_name: "m".into(),
            role: ProviderRole::Teacher,
            max_concurrent: 1,
            request_timeout_secs: 1,
            api_key_env: None,
            embedding_dim: None,
            supports_logprobs: true,
        }
    }

    #[test]
    fn wire_body_carries_the_thinking_flag() {
        let mut req = ChatRequest::user("q");
        req.enable_thinking = true;
        let body = build_chat_body(&profile("http://example"), &req);
        assert_eq!(
            body.pointer("/chat_template_kwargs/enable_thinking"),
            Some(&serde_json::Value::Bool(true))
        );
        req.enable_thinking = false;
        let body = build_chat_body(&profile("http://example"), &req);
        assert_eq!(
            body.pointer("/chat_template_kwargs/enable_thinking"),
            Some(&serde_json::Value::Bool(false))
        );
    }

    #[test]
    fn wire_body_includes_optional_fields_only_when_set() {
        let mut req = ChatRequest::user("q");
        req.messages.insert(0, ChatMessage::system("sys"));
        let body = build_chat_body(&profile("http://example"), &req);
        assert!(body.get("top_k").is_none());
        assert!(body.get("seed").is_none());
        assert_eq!(body["messages"][0]["role"], "system");
        req.top_k = Some(20);
        req.seed = Some(5);
        let body = build_chat_body(&profile("http://example"), &req);
        assert_eq!(body["top_k"], 20);
        assert_eq!(body["seed"], 5);
    }

    #[test]
    fn unreachable_endpoint_exhausts_retries() {
        // Port 9 on localhost refuses connections immediately.
        let backend = HttpBackend::new().with_backoff(Duration::from_millis(1));
        let err = backend
            .chat(&profile("http://127.0.0.1:9"), &ChatRequest::user("q"))
            .unwrap_err();
        match err {
            GatewayError::Transport { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other}"),
        }
    }
}
