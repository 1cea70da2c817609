//! Deterministic in-process backends.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendFailure, ChatRequest, ChatResponse, EmbedResponse, GatewayError, TokenUsage};

/// Mock behaviours selectable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum MockProfile {
    /// Always answers `reply`.
    Constant { reply: String },
    /// Answers with the user text.
    Echo,
    /// Hash-seeded pseudo-random embeddings of the given dimension.
    HashEmbed { dimension: usize },
    /// Toy-space scripted backend; needs the encoder parameters and the
    /// evaluation examples, so it is assembled by the application wiring.
    Toy { target: Vec<f64> },
}

impl MockProfile {
    pub fn default_model_name(&self) -> &'static str {
        match self {
            MockProfile::Constant { .. } => "mock-constant",
            MockProfile::Echo => "mock-echo",
            MockProfile::HashEmbed { .. } => "mock-hash-embed",
            MockProfile::Toy { .. } => "mock-toy",
        }
    }

    pub(crate) fn build_standalone(&self, model: &str) -> Result<Box<dyn Backend>, GatewayError> {
        match self {
            MockProfile::Constant { reply } => {
                let reply = reply.clone();
                Ok(Box::new(MockChat::new(model, move |_| reply.clone())))
            }
            MockProfile::Echo => Ok(Box::new(MockChat::new(model, |req| req.user_text.clone()))),
            MockProfile::HashEmbed { dimension } => {
                if *dimension == 0 {
                    return Err(GatewayError::Config("hash_embed dimension must be positive".into()));
                }
                Ok(Box::new(MockEmbedder::new(model, *dimension)))
            }
            MockProfile::Toy { .. } => Err(GatewayError::Config(
                "the toy mock profile must be built with its run context".into(),
            )),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> String + Send + Sync;

/// Chat backend answering through a closure. Queued failures are returned,
/// one per attempt, before the closure is consulted.
pub struct MockChat {
    model: String,
    responder: Box<Responder>,
    failures: Mutex<VecDeque<BackendFailure>>,
    fixed_usage: Option<TokenUsage>,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockChat {
    pub fn new(model: &str, responder: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        Self {
            model: model.to_string(),
            responder: Box::new(responder),
            failures: Mutex::new(VecDeque::new()),
            fixed_usage: None,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn constant(reply: &str) -> Self {
        let reply = reply.to_string();
        Self::new("mock-constant", move |_| reply.clone())
    }

    /// Looks the user text up in `script`, falling back to `default`.
    pub fn scripted<I, K, V>(script: I, default: &str) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let map: HashMap<String, String> = script.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let default = default.to_string();
        Self::new("mock-scripted", move |req| {
            map.get(&req.user_text).cloned().unwrap_or_else(|| default.clone())
        })
    }

    pub fn with_model(mut self, model: &str) -> Self {
        self.model = model.to_string();
        self
    }

    pub fn with_failures(self, failures: Vec<BackendFailure>) -> Self {
        *self.failures.lock().expect("mock lock poisoned") = failures.into();
        self
    }

    /// Reports the same usage for every call instead of word counts.
    pub fn with_fixed_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.fixed_usage = Some(TokenUsage {
            prompt_tokens,
            completion_tokens,
        });
        self
    }

    /// Requests that reached the responder, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock lock poisoned").clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().expect("mock lock poisoned").len()
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Backend for MockChat {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn accepts_soft_prompt(&self) -> bool {
        true
    }

    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendFailure> {
        if let Some(f) = self.failures.lock().expect("mock lock poisoned").pop_front() {
            return Err(f);
        }
        self.log.lock().expect("mock lock poisoned").push(req.clone());
        let text = (self.responder)(req);
        let usage = self.fixed_usage.unwrap_or_else(|| TokenUsage {
            prompt_tokens: word_count(&req.user_text)
                + req.system_text.as_deref().map(word_count).unwrap_or(0),
            completion_tokens: word_count(&text),
        });
        Ok(ChatResponse { text, usage })
    }
}

/// Embeds each text as a pseudo-random vector in [-1, 1]^d seeded by the
/// SHA-256 of the text.
pub struct MockEmbedder {
    model: String,
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(model: &str, dimension: usize) -> Self {
        Self {
            model: model.to_string(),
            dimension,
        }
    }

    pub fn vector_for(&self, text: &str) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

impl Backend for MockEmbedder {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<EmbedResponse, BackendFailure> {
        Ok(EmbedResponse {
            vectors: texts.iter().map(|t| self.vector_for(t)).collect(),
            usage: TokenUsage {
                prompt_tokens: texts.iter().map(|t| word_count(t)).sum(),
                completion_tokens: 0,
            },
        })
    }
}
