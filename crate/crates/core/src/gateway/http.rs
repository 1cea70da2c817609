//! JSON-over-HTTP backends for chat-completions and embeddings endpoints.

use std::env;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendConfig, BackendFailure, ChatRequest, ChatResponse, EmbedResponse, GatewayError, TokenUsage};

const CHAT_PATH: &str = "/chat/completions";
const EMBED_PATH: &str = "/embeddings";

fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}{path}")
    }
}

struct HttpClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpClient {
    fn from_config(cfg: &BackendConfig, path: &str) -> Result<Self, GatewayError> {
        let base = cfg
            .resolved_endpoint()
            .ok_or_else(|| GatewayError::Config("remote backend requires an endpoint".into()))?;
        let model = cfg
            .model_name
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend requires a model_name".into()))?;
        let api_key = env::var(&cfg.auth_env).ok().filter(|k| !k.is_empty());
        Ok(Self::new(
            &endpoint_url(&base, path),
            &model,
            api_key,
            Duration::from_millis(cfg.timeout_ms),
        ))
    }

    fn new(url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: url.to_string(),
            model: model.to_string(),
            api_key,
        }
    }

    fn post(&self, body: &serde_json::Value) -> Result<String, BackendFailure> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(transport_failure)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(transport_failure)?;
        if !(200..300).contains(&status) {
            return Err(BackendFailure::Status { code: status, body: truncate(&text, 512) });
        }
        Ok(text)
    }
}

fn transport_failure(err: ureq::Error) -> BackendFailure {
    match err {
        ureq::Error::Timeout(t) => BackendFailure::Timeout(t.to_string()),
        ureq::Error::StatusCode(code) => BackendFailure::Status { code, body: String::new() },
        ureq::Error::Json(e) => BackendFailure::Malformed(e.to_string()),
        other => BackendFailure::Connect(other.to_string()),
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl From<WireUsage> for TokenUsage {
    fn from(u: WireUsage) -> Self {
        TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }
    }
}

/// Chat-completions client (`POST {endpoint}/chat/completions`).
pub struct HttpChatBackend {
    client: HttpClient,
}

impl HttpChatBackend {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(&endpoint_url(endpoint, CHAT_PATH), model, api_key, timeout),
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            client: HttpClient::from_config(cfg, CHAT_PATH)?,
        })
    }
}

impl Backend for HttpChatBackend {
    fn model_name(&self) -> &str {
        &self.client.model
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
        if req.soft_prompt.is_some() {
            return Err(BackendFailure::Unsupported("remote chat cannot take soft prompts".into()));
        }
        let mut messages = Vec::new();
        if let Some(system) = &req.system_text {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": req.user_text}));
        let body = json!({
            "model": self.client.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let raw = self.client.post(&body)?;
        parse_chat_reply(&raw)
    }
}

fn parse_chat_reply(raw: &str) -> Result<ChatResponse, BackendFailure> {
    #[derive(Deserialize)]
    struct Reply {
        choices: Vec<Choice>,
        #[serde(default)]
        usage: Option<WireUsage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }
    #[derive(Deserialize)]
    struct Message {
        #[serde(default)]
        content: Option<String>,
    }
    let reply: Reply = serde_json::from_str(raw).map_err(|e| BackendFailure::Malformed(e.to_string()))?;
    let text = reply
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendFailure::Malformed("reply has no message content".into()))?;
    Ok(ChatResponse {
        text,
        usage: reply.usage.unwrap_or_default().into(),
    })
}

/// Embeddings client (`POST {endpoint}/embeddings`).
pub struct HttpEmbedBackend {
    client: HttpClient,
}

impl HttpEmbedBackend {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            client: HttpClient::new(&endpoint_url(endpoint, EMBED_PATH), model, api_key, timeout),
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        Ok(Self {
            client: HttpClient::from_config(cfg, EMBED_PATH)?,
        })
    }
}

impl Backend for HttpEmbedBackend {
    fn model_name(&self) -> &str {
        &self.client.model
    }

    fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendFailure> {
        let body = json!({ "model": self.client.model, "input": texts });
        let raw = self.client.post(&body)?;
        parse_embed_reply(&raw)
    }
}

fn parse_embed_reply(raw: &str) -> Result<EmbedResponse, BackendFailure> {
    #[derive(Deserialize)]
    struct Reply {
        data: Vec<Item>,
        #[serde(default)]
        usage: Option<WireUsage>,
    }
    #[derive(Deserialize)]
    struct Item {
        embedding: Vec<f64>,
        #[serde(default)]
        index: Option<usize>,
    }
    let reply: Reply = serde_json::from_str(raw).map_err(|e| BackendFailure::Malformed(e.to_string()))?;
    let mut items: Vec<(usize, Vec<f64>)> = reply
        .data
        .into_iter()
        .enumerate()
        .map(|(pos, it)| (it.index.unwrap_or(pos), it.embedding))
        .collect();
    items.sort_by_key(|(i, _)| *i);
    Ok(EmbedResponse {
        vectors: items.into_iter().map(|(_, v)| v).collect(),
        usage: reply.usage.unwrap_or_default().into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(endpoint_url("http://h/v1/", CHAT_PATH), "http://h/v1/chat/completions");
        assert_eq!(
            endpoint_url("http://h/v1/chat/completions", CHAT_PATH),
            "http://h/v1/chat/completions"
        );
    }

    #[test]
    fn parses_chat_reply() {
        let r = parse_chat_reply(
            r#"{"choices":[{"message":{"role":"assistant","content":"Positive"}}],"usage":{"prompt_tokens":7,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "Positive");
        assert_eq!(r.usage, TokenUsage { prompt_tokens: 7, completion_tokens: 1 });
        assert!(parse_chat_reply(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn embed_reply_is_reordered_by_index() {
        let r = parse_embed_reply(
            r#"{"data":[{"index":1,"embedding":[2.0]},{"index":0,"embedding":[1.0]}]}"#,
        )
        .unwrap();
        assert_eq!(r.vectors, vec![vec![1.0], vec![2.0]]);
    }
}
