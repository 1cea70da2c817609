//! Prompt encoder: maps templates to latent vectors, either through an
//! embedding backend or through the exactly invertible toy space.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EmbeddingVector, PromptTemplate, VectorError, PLACEHOLDER};
use crate::gateway::{Budget, Gateway, GatewayError};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("no prompts to encode")]
    Empty,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("encoder returned dimension {found}, configured {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("prompt {prompt_id:?} is not a toy-space prompt: {source}")]
    Toy {
        prompt_id: String,
        #[source]
        source: ToyError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("toy space needs at least one parameter")]
    NoParameters,
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("malformed segment {0:?}, expected name=value")]
    Malformed(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("parameter {0:?} given twice")]
    Repeated(String),
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error("value {value} of {name:?} is outside [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("vector has dimension {found}, toy space has {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Configuration of a backend-driven encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub dimension: usize,
    #[serde(default)]
    pub normalize: bool,
}

/// Named coordinates of the toy latent space, each ranging over [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ToySpaceSpec {
    parameter_names: Vec<String>,
}

impl ToySpaceSpec {
    pub fn new<I, S>(names: I) -> Result<Self, ToyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let parameter_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if parameter_names.is_empty() {
            return Err(ToyError::NoParameters);
        }
        for (i, n) in parameter_names.iter().enumerate() {
            if n.is_empty() || n.contains(['=', ';']) {
                return Err(ToyError::Malformed(n.clone()));
            }
            if parameter_names[..i].contains(n) {
                return Err(ToyError::DuplicateName(n.clone()));
            }
        }
        Ok(Self { parameter_names })
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.parameter_names
    }

    pub fn dimension(&self) -> usize {
        self.parameter_names.len()
    }
}

impl TryFrom<Vec<String>> for ToySpaceSpec {
    type Error = ToyError;
    fn try_from(v: Vec<String>) -> Result<Self, ToyError> {
        ToySpaceSpec::new(v)
    }
}

impl From<ToySpaceSpec> for Vec<String> {
    fn from(s: ToySpaceSpec) -> Self {
        s.parameter_names
    }
}

/// Parses `name=value;...` into a vector in parameter order.
///
/// Empty segments and a `{text}` placeholder segment are skipped, so a toy
/// template such as `tone=0.3;steps=0.7;{text}` encodes like its bare form.
pub fn toy_encode(spec: &ToySpaceSpec, prompt_text: &str) -> Result<EmbeddingVector, ToyError> {
    let mut values: Vec<Option<f64>> = vec![None; spec.dimension()];
    for segment in prompt_text.split(';') {
        let segment = segment.trim();
        if segment.is_empty() || segment == PLACEHOLDER {
            continue;
        }
        let (name, value) = segment
            .split_once('=')
            .ok_or_else(|| ToyError::Malformed(segment.to_string()))?;
        let name = name.trim();
        let idx = spec
            .parameter_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ToyError::UnknownParameter(name.to_string()))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| ToyError::Malformed(segment.to_string()))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(ToyError::OutOfRange {
                name: name.to_string(),
                value,
            });
        }
        if values[idx].replace(value).is_some() {
            return Err(ToyError::Repeated(name.to_string()));
        }
    }
    let values = values
        .into_iter()
        .zip(&spec.parameter_names)
        .map(|(v, n)| v.ok_or_else(|| ToyError::MissingParameter(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingVector::new(values).expect("values are finite and non-empty"))
}

#[derive(Debug)]
enum Source {
    Gateway(Arc<Gateway>),
    Toy(ToySpaceSpec),
}

/// Vectors for a batch of prompts. `zero_norm` lists indices that could not
/// be normalized because their norm is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub vectors: Vec<EmbeddingVector>,
    pub zero_norm: Vec<usize>,
}

/// Encoder with a per-run cache keyed by prompt text.
#[derive(Debug)]
pub struct Encoder {
    source: Source,
    dimension: usize,
    normalize: bool,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, gateway: Arc<Gateway>) -> Self {
        Self {
            source: Source::Gateway(gateway),
            dimension: spec.dimension,
            normalize: spec.normalize,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn toy(spec: ToySpaceSpec, normalize: bool) -> Self {
        Self {
            dimension: spec.dimension(),
            source: Source::Toy(spec),
            normalize,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn toy_space(&self) -> Option<&ToySpaceSpec> {
        match &self.source {
            Source::Toy(s) => Some(s),
            Source::Gateway(_) => None,
        }
    }

    /// Number of backend calls a cold encode of `n` prompts would take.
    pub fn planned_calls(&self, n: usize) -> usize {
        match self.source {
            Source::Gateway(_) if n > 0 => 1,
            _ => 0,
        }
    }

    pub fn encode(&self, prompts: &[PromptTemplate], budget: &Budget) -> Result<EncodedBatch, EncodeError> {
        if prompts.is_empty() {
            return Err(EncodeError::Empty);
        }
        let mut missing: Vec<&PromptTemplate> = {
            let cache = self.cache.lock().expect("encoder cache poisoned");
            prompts.iter().filter(|p| !cache.contains_key(p.text())).collect()
        };
        missing.dedup_by(|a, b| a.text() == b.text());
        let mut fresh: Vec<(String, EmbeddingVector)> = Vec::new();
        match &self.source {
            Source::Toy(spec) => {
                for p in &missing {
                    let v = toy_encode(spec, p.text()).map_err(|source| EncodeError::Toy {
                        prompt_id: p.id().to_string(),
                        source,
                    })?;
                    fresh.push((p.text().to_string(), v));
                }
            }
            Source::Gateway(g) => {
                let mut texts: Vec<String> = missing.iter().map(|p| p.text().to_string()).collect();
                texts.sort();
                texts.dedup();
                if !texts.is_empty() {
                    let vectors = g.embed(&texts, budget)?;
                    fresh.extend(texts.into_iter().zip(vectors));
                }
            }
        }
        for (_, v) in &fresh {
            if v.dim() != self.dimension {
                return Err(EncodeError::DimensionMismatch {
                    expected: self.dimension,
                    found: v.dim(),
                });
            }
        }
        let mut cache = self.cache.lock().expect("encoder cache poisoned");
        cache.extend(fresh);
        let mut zero_norm = Vec::new();
        let vectors = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = cache[p.text()].clone();
                if !self.normalize {
                    return v;
                }
                match unit(&v) {
                    Ok(u) => u,
                    Err(_) => {
                        tracing::warn!(prompt = p.id(), "zero-norm embedding left unnormalized");
                        zero_norm.push(i);
                        v
                    }
                }
            })
            .collect();
        Ok(EncodedBatch { vectors, zero_norm })
    }
}

fn unit(v: &EmbeddingVector) -> Result<EmbeddingVector, VectorError> {
    let n = v.norm();
    if n == 0.0 {
        return Err(VectorError::Empty);
    }
    EmbeddingVector::new(v.values().iter().map(|x| x / n).collect())
}
