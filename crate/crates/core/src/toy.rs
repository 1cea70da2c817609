//! A synthetic world with a known fitness landscape, used to check the
//! optimizer end to end without a language model.
//!
//! Prompts are points of the toy space (`tone=0.3;steps=0.7;{text}`). The
//! chat backend built here answers every instruction the pipeline sends:
//! blends and paraphrases are computed exactly in the toy space, refinement
//! appends the placeholder, and task prompts are answered so that the
//! accuracy over the evaluation slice equals `round(f(e) * N) / N` with
//! `f(e) = 1 - |e - t|^2 / 2`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::decoder::{toy_decode, DecodeStrategy, Decoder};
use crate::domain::{Dataset, EmbeddingVector, PLACEHOLDER};
use crate::encoder::{toy_encode, Encoder, ToySpaceSpec};
use crate::evaluator::Evaluator;
use crate::explorer::{extrapolate, interpolate};
use crate::gateway::mock::MockChat;
use crate::gateway::{ChatRequest, Gateway};
use crate::instructions::section;
use crate::optimizer::{Optimizer, OptimizerConfig};
use crate::projector::LinearProjector;

#[derive(Debug, Clone)]
pub struct ToyWorld {
    spec: ToySpaceSpec,
    target: Vec<f64>,
    labels: Vec<String>,
    /// Example text to (position in the slice, gold label).
    examples: HashMap<String, (usize, String)>,
    slice_len: usize,
}

impl ToyWorld {
    /// `eval_slice` must be exactly the examples the evaluator will score.
    pub fn new(spec: ToySpaceSpec, target: Vec<f64>, eval_slice: &Dataset) -> Result<Self, String> {
        if target.len() != spec.dimension() {
            return Err(format!(
                "toy target has {} coordinates but the toy space has {}",
                target.len(),
                spec.dimension()
            ));
        }
        if target.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("toy target coordinates must lie in [0, 1]".into());
        }
        if eval_slice.label_set().len() < 2 {
            return Err("the toy world needs at least two labels".into());
        }
        let mut examples = HashMap::new();
        for (i, ex) in eval_slice.examples().iter().enumerate() {
            if ex.text.contains(';') {
                return Err(format!("toy example {i} contains ';'"));
            }
            examples.entry(ex.text.clone()).or_insert((i, ex.label.clone()));
        }
        Ok(Self {
            spec,
            target,
            labels: eval_slice.label_set().to_vec(),
            examples,
            slice_len: eval_slice.len(),
        })
    }

    pub fn spec(&self) -> &ToySpaceSpec {
        &self.spec
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn slice_len(&self) -> usize {
        self.slice_len
    }

    pub fn fitness(&self, e: &[f64]) -> f64 {
        let d2: f64 = e.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 - d2 / 2.0
    }

    /// Number of examples answered correctly by a prompt at `e`.
    pub fn correct_count(&self, e: &[f64]) -> usize {
        let q = (self.fitness(e) * self.slice_len as f64).round();
        q.clamp(0.0, self.slice_len as f64) as usize
    }

    /// Accuracy the evaluator should report for a prompt at `e`.
    pub fn accuracy(&self, e: &[f64]) -> f64 {
        self.correct_count(e) as f64 / self.slice_len as f64
    }

    fn canonical(&self, values: &[f64]) -> String {
        toy_decode(&self.spec, values).map(|(t, _)| t).unwrap_or_default()
    }

    fn answer_task(&self, prompt: &str) -> String {
        let Some((params, text)) = prompt.rsplit_once(';') else {
            return "I cannot tell.".into();
        };
        let (Ok(e), Some((index, gold))) = (toy_encode(&self.spec, params), self.examples.get(text)) else {
            return "I cannot tell.".into();
        };
        let label = if *index < self.correct_count(e.values()) {
            gold.clone()
        } else {
            let pos = self.labels.iter().position(|l| l == gold).unwrap_or(0);
            self.labels[(pos + 1) % self.labels.len()].clone()
        };
        format!("Sentiment: {label}")
    }

    fn blend(&self, message: &str) -> Option<String> {
        let share: f64 = section(message, "SHARE OF A")?.trim().parse().ok()?;
        let a = toy_encode(&self.spec, section(message, "PROMPT A")?).ok()?;
        let b = toy_encode(&self.spec, section(message, "PROMPT B")?).ok()?;
        let point = if (0.0..=1.0).contains(&share) {
            interpolate(&a, &b, share).ok()?
        } else {
            extrapolate(&a, &b, share).ok()?
        };
        Some(self.canonical(point.values()))
    }

    pub fn respond(&self, req: &ChatRequest) -> String {
        let msg = &req.user_text;
        if let Some(h) = &req.soft_prompt {
            return self.canonical(h);
        }
        if section(msg, "SHARE OF A").is_some() {
            return self.blend(msg).unwrap_or_default();
        }
        if let Some(candidate) = section(msg, "CANDIDATE") {
            return match toy_encode(&self.spec, candidate) {
                Ok(e) => format!("{};{PLACEHOLDER}", self.canonical(e.values())),
                Err(_) => String::new(),
            };
        }
        if let Some(answer) = section(msg, "ANSWER") {
            let lower = answer.to_lowercase();
            let hits: Vec<&String> = self.labels.iter().filter(|l| lower.contains(l.as_str())).collect();
            return match hits.as_slice() {
                [one] => (*one).clone(),
                _ => "unparsed".into(),
            };
        }
        if let Some(prompt) = section(msg, "PROMPT") {
            return toy_encode(&self.spec, prompt)
                .map(|e: EmbeddingVector| self.canonical(e.values()))
                .unwrap_or_default();
        }
        self.answer_task(msg)
    }

    /// Chat backend answering as this world.
    pub fn backend(self: &Arc<Self>) -> MockChat {
        let world = Arc::clone(self);
        MockChat::new("mock-toy", move |req| world.respond(req))
    }
}

/// Optimizer wired entirely to `world`: toy encoder, the given decode
/// strategy, and one shared chat gateway for decoding, refinement, task and
/// extraction calls. The gateway is returned for call accounting.
pub fn toy_optimizer(world: &Arc<ToyWorld>, config: OptimizerConfig, strategy: DecodeStrategy) -> (Optimizer, Arc<Gateway>) {
    let chat = Arc::new(Gateway::new(world.backend()));
    let encoder = Encoder::toy(world.spec().clone(), false);
    let decoder = Decoder::new(strategy)
        .with_chat(Arc::clone(&chat))
        .with_toy_space(world.spec().clone())
        .with_projector(LinearProjector::identity(world.spec().dimension()));
    let evaluator = Evaluator::new(Arc::clone(&chat), Arc::clone(&chat), world.slice_len());
    (Optimizer::new(config, encoder, decoder, evaluator), chat)
}

/// Toy dataset of `n` examples `item 000`, `item 001`, ... with labels
/// cycling through `labels`.
pub fn toy_dataset(n: usize, labels: &[&str]) -> Dataset {
    let examples = (0..n)
        .map(|i| crate::domain::Example::new(format!("item {i:03}"), labels[i % labels.len()]))
        .collect();
    Dataset::new(examples)
        .and_then(|d| d.with_label_set(labels.iter().copied()))
        .expect("toy dataset is well formed")
}
