//! Turns candidate latent points back into prompt text and applies the
//! second-pass format refinement.
//!
//! Three decoding routes exist:
//! * `anchor_blend` asks a chat model to merge the candidate's parent prompts
//!   with the candidate's blend weight. Black-box APIs expose no embedding
//!   layer, so this is the observable analogue of pseudo-token decoding.
//! * `soft_prompt` projects the candidate into token-embedding space and
//!   sends the vector through the gateway's soft-prompt extension. Only mock
//!   backends accept it.
//! * `toy_inverse` formats a toy-space vector back into its canonical text.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_template, PromptOrigin, PromptTemplate, TemplateError};
use crate::encoder::{ToyError, ToySpaceSpec};
use crate::explorer::{CandidateRecord, Provenance};
use crate::gateway::{Budget, ChatRequest, Gateway, GatewayError};
use crate::instructions;
use crate::projector::{LinearProjector, ProjectorError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("candidate {0} has no parent prompts to blend")]
    MissingParents(String),
    #[error("candidate {candidate} names unknown parent {parent}")]
    UnknownParent { candidate: String, parent: String },
    #[error("soft-prompt decoding needs a backend that accepts vectors; {0} is remote")]
    SoftPromptUnsupported(String),
    #[error("decode strategy {0:?} needs a chat backend")]
    MissingBackend(DecodeKind),
    #[error("soft-prompt decoding needs a projector")]
    MissingProjector,
    #[error("toy-inverse decoding needs a toy space")]
    MissingToySpace,
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeKind {
    AnchorBlend,
    SoftPrompt,
    ToyInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeStrategy {
    pub kind: DecodeKind,
    #[serde(default = "default_decode_temperature")]
    pub decode_temperature: f64,
    #[serde(default)]
    pub refinement_temperature: f64,
}

fn default_decode_temperature() -> f64 {
    0.7
}

impl DecodeStrategy {
    pub fn new(kind: DecodeKind) -> Self {
        Self {
            kind,
            decode_temperature: default_decode_temperature(),
            refinement_temperature: 0.0,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, t) in [
            ("decode_temperature", self.decode_temperature),
            ("refinement_temperature", self.refinement_temperature),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                out.push(format!("{name} {t} must be finite and non-negative"));
            }
        }
        out
    }
}

/// Canonical toy text for `v`, clamping each coordinate into [0, 1].
/// Returns one warning per clamped coordinate.
pub fn toy_decode(spec: &ToySpaceSpec, values: &[f64]) -> Result<(String, Vec<String>), ToyError> {
    if values.len() != spec.dimension() {
        return Err(ToyError::Dimension {
            expected: spec.dimension(),
            found: values.len(),
        });
    }
    let mut warnings = Vec::new();
    let parts: Vec<String> = spec
        .parameter_names()
        .iter()
        .zip(values)
        .map(|(name, &v)| {
            let clamped = v.clamp(0.0, 1.0) + 0.0;
            if clamped != v {
                warnings.push(format!("{name}={v:?} clamped to {clamped:?}"));
            }
            format!("{name}={clamped:?}")
        })
        .collect();
    Ok((parts.join(";"), warnings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text: String,
    pub warnings: Vec<String>,
}

/// Result of the refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Refinement {
    /// Raw text was already a valid template; no call was made.
    Unchanged(PromptTemplate),
    /// The backend rewrote the text into a valid template.
    Rewritten(PromptTemplate),
    /// The candidate could not be turned into a valid template.
    Invalid { reason: String },
}

#[derive(Debug)]
pub struct Decoder {
    strategy: DecodeStrategy,
    chat: Option<Arc<Gateway>>,
    projector: Option<LinearProjector>,
    toy: Option<ToySpaceSpec>,
    max_tokens: u32,
}

impl Decoder {
    pub fn new(strategy: DecodeStrategy) -> Self {
        Self {
            strategy,
            chat: None,
            projector: None,
            toy: None,
            max_tokens: 512,
        }
    }

    /// Chat backend used for decoding calls and refinement.
    pub fn with_chat(mut self, gateway: Arc<Gateway>) -> Self {
        self.chat = Some(gateway);
        self
    }

    pub fn with_projector(mut self, projector: LinearProjector) -> Self {
        self.projector = Some(projector);
        self
    }

    pub fn with_toy_space(mut self, spec: ToySpaceSpec) -> Self {
        self.toy = Some(spec);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Concurrency the chat backend allows; 1 without a backend.
    pub fn max_in_flight(&self) -> usize {
        self.chat.as_deref().map(Gateway::max_in_flight).unwrap_or(1)
    }

    /// Whether refinement can make backend calls.
    pub fn can_refine(&self) -> bool {
        self.chat.is_some()
    }

    pub fn strategy(&self) -> &DecodeStrategy {
        &self.strategy
    }

    /// Backend calls one candidate's decode takes (refinement excluded).
    pub fn decode_calls_per_candidate(&self) -> usize {
        match self.strategy.kind {
            DecodeKind::ToyInverse => 0,
            DecodeKind::AnchorBlend | DecodeKind::SoftPrompt => 1,
        }
    }

    fn chat(&self) -> Result<&Gateway, DecodeError> {
        self.chat
            .as_deref()
            .ok_or(DecodeError::MissingBackend(self.strategy.kind))
    }

    pub fn decode(
        &self,
        candidate: &CandidateRecord,
        seeds: &[PromptTemplate],
        budget: &Budget,
    ) -> Result<Decoded, DecodeError> {
        match self.strategy.kind {
            DecodeKind::ToyInverse => {
                let spec = self.toy.as_ref().ok_or(DecodeError::MissingToySpace)?;
                let (text, warnings) = toy_decode(spec, candidate.embedding.values())?;
                for w in &warnings {
                    tracing::warn!(candidate = candidate.id.as_str(), "{w}");
                }
                Ok(Decoded { text, warnings })
            }
            DecodeKind::AnchorBlend => {
                let gateway = self.chat()?;
                let parent = |id: &str| {
                    seeds
                        .iter()
                        .find(|s| s.id() == id)
                        .ok_or_else(|| DecodeError::UnknownParent {
                            candidate: candidate.id.clone(),
                            parent: id.to_string(),
                        })
                };
                let message = match &candidate.provenance {
                    Provenance::Interpolation { parent_i, parent_j, lambda }
                    | Provenance::Extrapolation { parent_i, parent_j, lambda } => {
                        if parent_i.is_empty() || parent_j.is_empty() {
                            return Err(DecodeError::MissingParents(candidate.id.clone()));
                        }
                        let (a, b) = (parent(parent_i)?, parent(parent_j)?);
                        instructions::fill(
                            instructions::BLEND,
                            &[
                                ("share_a", &format!("{lambda:?}")),
                                ("prompt_a", a.text()),
                                ("prompt_b", b.text()),
                            ],
                        )
                    }
                    Provenance::Perturbation { parent: p, sigma, .. } => {
                        if p.is_empty() {
                            return Err(DecodeError::MissingParents(candidate.id.clone()));
                        }
                        let a = parent(p)?;
                        instructions::fill(
                            instructions::VARY,
                            &[("sigma", &format!("{sigma:.4}")), ("prompt", a.text())],
                        )
                    }
                };
                let req = ChatRequest::new(message)
                    .with_temperature(self.strategy.decode_temperature)
                    .with_max_tokens(self.max_tokens);
                let reply = gateway.chat(&req, budget)?;
                Ok(Decoded {
                    text: clean_reply(&reply.text),
                    warnings: Vec::new(),
                })
            }
            DecodeKind::SoftPrompt => {
                let gateway = self.chat()?;
                if gateway.is_remote() {
                    return Err(DecodeError::SoftPromptUnsupported(gateway.model_name().to_string()));
                }
                let projector = self.projector.as_ref().ok_or(DecodeError::MissingProjector)?;
                let h = projector.apply(&candidate.embedding)?;
                let req = ChatRequest::new(instructions::PARAPHRASE)
                    .with_temperature(self.strategy.decode_temperature)
                    .with_max_tokens(self.max_tokens)
                    .with_soft_prompt(h.into_values());
                let reply = gateway.chat(&req, budget)?;
                Ok(Decoded {
                    text: clean_reply(&reply.text),
                    warnings: Vec::new(),
                })
            }
        }
    }

    /// Returns `raw` untouched when it is already a valid template, otherwise
    /// makes one rewrite call and validates the reply. Only budget exhaustion
    /// is returned as an error; every other failure marks the candidate
    /// invalid.
    pub fn refine_format(
        &self,
        raw: &str,
        seeds: &[PromptTemplate],
        id: &str,
        budget: &Budget,
    ) -> Result<Refinement, GatewayError> {
        if let Ok(t) = validate_template(raw) {
            return Ok(Refinement::Unchanged(t.with_id(id).with_origin(PromptOrigin::Decoded)));
        }
        let Some(gateway) = self.chat.as_deref() else {
            return Ok(Refinement::Invalid {
                reason: "decoded text is not a valid template and no refinement backend is configured".into(),
            });
        };
        let references: Vec<&str> = seeds.iter().map(|s| s.text()).collect();
        let message = instructions::fill(
            instructions::REFINE,
            &[("references", &references.join("\n---\n")), ("candidate", raw)],
        );
        let req = ChatRequest::new(message)
            .with_temperature(self.strategy.refinement_temperature)
            .with_max_tokens(self.max_tokens);
        let reply = match gateway.chat(&req, budget) {
            Ok(r) => r,
            Err(e) if e.is_budget_exhausted() => return Err(e),
            Err(e) => {
                return Ok(Refinement::Invalid {
                    reason: format!("refinement call failed: {e}"),
                })
            }
        };
        let text = clean_reply(&reply.text);
        Ok(match validate_template(&text) {
            Ok(t) => Refinement::Rewritten(t.with_id(id).with_origin(PromptOrigin::Refined)),
            Err(e) => Refinement::Invalid {
                reason: format!("refined text is still invalid: {}", describe(&e)),
            },
        })
    }
}

fn describe(e: &TemplateError) -> String {
    e.to_string()
}

/// Trims whitespace and a surrounding Markdown code fence.
fn clean_reply(text: &str) -> String {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix("```").and_then(|s| s.strip_suffix("```")) {
        // drop an optional language tag on the opening fence line
        let inner = match inner.split_once('\n') {
            Some((first, rest)) if !first.trim().contains(' ') => rest,
            _ => inner,
        };
        return inner.trim().to_string();
    }
    t.to_string()
}
