//! Scores prompt templates by classification accuracy on an evaluation
//! slice.

mod cache;
mod extract;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{key_hash, ResponseCache};
pub use extract::{extract_deterministic, match_answer, UNPARSED};

use crate::domain::{Dataset, Example, PromptTemplate};
use crate::gateway::{BackendConfig, Budget, ChatRequest, Gateway, GatewayError};
use crate::instructions;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation slice is empty")]
    EmptySlice,
    #[error("budget ran out after {completed} of {total} examples")]
    Partial { completed: usize, total: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl EvalError {
    pub fn is_budget_exhausted(&self) -> bool {
        match self {
            EvalError::Partial { .. } => true,
            EvalError::Gateway(e) => e.is_budget_exhausted(),
            EvalError::EmptySlice => false,
        }
    }
}

/// Evaluation settings as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub task_backend: BackendConfig,
    pub extraction_backend: BackendConfig,
    #[serde(default = "default_max_examples")]
    pub max_examples: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_examples() -> usize {
    200
}

fn default_max_tokens() -> u32 {
    256
}

impl EvalConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_examples == 0 {
            out.push("max_examples must be at least 1".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            out.push(format!("temperature {} must be finite and non-negative", self.temperature));
        }
        if self.max_tokens == 0 {
            out.push("max_tokens must be positive".into());
        }
        out.extend(self.task_backend.problems().into_iter().map(|p| format!("task_backend: {p}")));
        out.extend(
            self.extraction_backend
                .problems()
                .into_iter()
                .map(|p| format!("extraction_backend: {p}")),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub index: usize,
    pub raw_output: String,
    pub extracted_label: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub template: PromptTemplate,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_example: Vec<ExampleOutcome>,
    pub eval_set_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ScoredPrompt {
    /// Builds a score from per-example outcomes; accuracy is the exact
    /// integer ratio.
    pub fn from_outcomes(template: PromptTemplate, per_example: Vec<ExampleOutcome>, eval_set_id: String) -> Self {
        let total = per_example.len();
        let correct = per_example.iter().filter(|o| o.correct).count();
        Self {
            template,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            correct,
            total,
            per_example,
            eval_set_id,
            warnings: Vec::new(),
        }
    }

    /// Compares accuracies through their integer counts.
    pub fn cmp_accuracy(&self, other: &ScoredPrompt) -> std::cmp::Ordering {
        if self.total == 0 || other.total == 0 {
            return self.accuracy.total_cmp(&other.accuracy);
        }
        let a = self.correct as u128 * other.total as u128;
        let b = other.correct as u128 * self.total as u128;
        a.cmp(&b)
    }
}

pub struct Evaluator {
    task: Arc<Gateway>,
    extraction: Arc<Gateway>,
    max_examples: usize,
    temperature: f64,
    max_tokens: u32,
    cache: ResponseCache,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("task", &self.task.model_name())
            .field("extraction", &self.extraction.model_name())
            .field("max_examples", &self.max_examples)
            .finish()
    }
}

impl Evaluator {
    pub fn new(task: Arc<Gateway>, extraction: Arc<Gateway>, max_examples: usize) -> Self {
        Self {
            task,
            extraction,
            max_examples: max_examples.max(1),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            cache: ResponseCache::in_memory(),
        }
    }

    /// Builds both gateways from `cfg`. Mock profiles that need run context
    /// (the toy world) are rejected here; wire those with [`Evaluator::new`].
    pub fn from_config(cfg: &EvalConfig) -> Result<Self, GatewayError> {
        let task = Arc::new(Gateway::from_config(&cfg.task_backend)?);
        let extraction = Arc::new(Gateway::from_config(&cfg.extraction_backend)?);
        let mut e = Self::new(task, extraction, cfg.max_examples)
            .with_temperature(cfg.temperature)
            .with_max_tokens(cfg.max_tokens);
        if let Some(p) = &cfg.cache_path {
            e = e.with_cache(ResponseCache::open(p));
        }
        Ok(e)
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = cache;
        self
    }

    pub fn max_examples(&self) -> usize {
        self.max_examples
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// The examples `evaluate` will score.
    pub fn slice(&self, eval_set: &Dataset) -> Dataset {
        eval_set.head(self.max_examples)
    }

    /// Upper bound on calls for evaluating `prompts` templates.
    pub fn planned_calls(&self, eval_set: &Dataset, prompts: usize) -> usize {
        2 * eval_set.len().min(self.max_examples) * prompts
    }

    pub fn classify_one(&self, template: &PromptTemplate, ex: &Example, budget: &Budget) -> Result<String, GatewayError> {
        let key = key_hash(&["classify", self.task.model_name(), template.text(), &ex.text]);
        self.cache.get_or_compute(&key, || {
            let req = ChatRequest::new(template.render(&ex.text))
                .with_temperature(self.temperature)
                .with_max_tokens(self.max_tokens);
            self.task.chat(&req, budget).map(|r| r.text)
        })
    }

    /// Returns the extracted label (or [`UNPARSED`]) and an optional warning.
    /// Only budget exhaustion is an error.
    pub fn extract_label(
        &self,
        raw: &str,
        labels: &[String],
        budget: &Budget,
    ) -> Result<(String, Option<String>), GatewayError> {
        if let Some(l) = extract_deterministic(raw, labels) {
            return Ok((l, None));
        }
        let joined = labels.join(", ");
        let key = key_hash(&["extract", self.extraction.model_name(), &joined, raw]);
        let answer = self.cache.get_or_compute(&key, || {
            let req = ChatRequest::new(instructions::fill(
                instructions::EXTRACT,
                &[("labels", &joined), ("answer", raw)],
            ))
            .with_temperature(0.0)
            .with_max_tokens(16);
            self.extraction.chat(&req, budget).map(|r| r.text)
        });
        let answer = match answer {
            Ok(a) => a,
            Err(e) if e.is_budget_exhausted() => return Err(e),
            Err(e) => {
                let w = format!("extraction call failed, counted as unparsed: {e}");
                tracing::warn!("{w}");
                return Ok((UNPARSED.to_string(), Some(w)));
            }
        };
        Ok((match_answer(&answer, labels).unwrap_or_else(|| UNPARSED.to_string()), None))
    }

    /// Classifies the first `max_examples` examples of `eval_set`, up to the
    /// task gateway's in-flight cap at once, and scores them in index order.
    pub fn evaluate(&self, template: &PromptTemplate, eval_set: &Dataset, budget: &Budget) -> Result<ScoredPrompt, EvalError> {
        let slice = self.slice(eval_set);
        let total = slice.len();
        if total == 0 {
            return Err(EvalError::EmptySlice);
        }
        let labels = slice.label_set();
        let (results, failure) = crate::par::map_indexed(total, self.task.max_in_flight(), |index| {
            let ex = &slice.examples()[index];
            let raw_output = self.classify_one(template, ex, budget)?;
            let (extracted_label, warning) = self.extract_label(&raw_output, labels, budget)?;
            let correct = extracted_label == ex.label;
            Ok::<_, GatewayError>((
                ExampleOutcome {
                    index,
                    raw_output,
                    extracted_label,
                    correct,
                },
                warning,
            ))
        });
        if let Some(e) = failure {
            if e.is_budget_exhausted() {
                let completed = results.iter().filter(|r| r.is_some()).count();
                return Err(EvalError::Partial { completed, total });
            }
            return Err(EvalError::Gateway(e));
        }
        let mut warnings = Vec::new();
        let per_example = results
            .into_iter()
            .map(|r| {
                let (outcome, w) = r.expect("every slot is filled without a failure");
                if let Some(w) = w {
                    warnings.push(format!("example {}: {w}", outcome.index));
                }
                outcome
            })
            .collect();
        let mut scored = ScoredPrompt::from_outcomes(template.clone(), per_example, slice.fingerprint());
        scored.warnings = warnings;
        Ok(scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PromptOrigin;
    use crate::gateway::mock::MockChat;
    use crate::gateway::BackendFailure;

    fn data(golds: &[&str]) -> Dataset {
        let ex = golds.iter().enumerate().map(|(i, g)| Example::new(format!("t{i}"), g)).collect();
        Dataset::new(ex).unwrap().with_label_set(["positive", "negative", "neutral"]).unwrap()
    }

    fn tpl() -> PromptTemplate {
        PromptTemplate::new("p", "Classify: {text}", PromptOrigin::Seed).unwrap()
    }

    fn evaluator(task: MockChat, extraction: MockChat) -> (Evaluator, Arc<Gateway>, Arc<Gateway>) {
        let t = Arc::new(Gateway::new(task));
        let x = Arc::new(Gateway::new(extraction));
        (Evaluator::new(t.clone(), x.clone(), 100), t, x)
    }

    #[test]
    fn two_of_three() {
        let task = MockChat::scripted(
            [("Classify: t0", "positive"), ("Classify: t1", "negative"), ("Classify: t2", "neutral")],
            "",
        );
        let (e, _, _) = evaluator(task, MockChat::constant("unparsed"));
        let s = e.evaluate(&tpl(), &data(&["positive", "negative", "positive"]), &Budget::unlimited()).unwrap();
        assert_eq!((s.correct, s.total), (2, 3));
        assert_eq!(s.accuracy, 2.0 / 3.0);
        assert_eq!(s.per_example.iter().map(|o| o.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn all_unparsed_scores_zero() {
        let (e, _, x) = evaluator(MockChat::constant("no idea"), MockChat::constant("unparsed"));
        let s = e.evaluate(&tpl(), &data(&["positive", "negative"]), &Budget::unlimited()).unwrap();
        assert_eq!(s.accuracy, 0.0);
        assert!(s.per_example.iter().all(|o| o.extracted_label == UNPARSED));
        // identical raw outputs share one extraction call
        assert_eq!(x.attempts(), 1);
    }

    #[test]
    fn second_stage_resolves_hedged_answers() {
        let (e, _, _) = evaluator(MockChat::constant("unused"), MockChat::constant("positive"));
        let labels = data(&["positive"]).label_set().to_vec();
        let (l, w) = e.extract_label("The tone is mixed but leans upbeat", &labels, &Budget::unlimited()).unwrap();
        assert_eq!(l, "positive");
        assert!(w.is_none());
    }

    #[test]
    fn extraction_failures_degrade_with_warning() {
        let failing = MockChat::constant("positive").with_failures(vec![BackendFailure::Status { code: 400, body: "bad".into() }]);
        let (e, _, _) = evaluator(MockChat::constant("hmm"), failing);
        let s = e.evaluate(&tpl(), &data(&["positive"]), &Budget::unlimited()).unwrap();
        assert_eq!(s.per_example[0].extracted_label, UNPARSED);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn warm_cache_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let d = data(&["positive", "negative", "neutral", "positive"]);
        let run = || {
            let task = MockChat::new("task", |r| if r.user_text.ends_with('0') { "hmm".into() } else { "negative".into() });
            let (e, t, x) = evaluator(task, MockChat::constant("positive").with_model("ext"));
            let e = e.with_cache(ResponseCache::open(&path));
            let s = e.evaluate(&tpl(), &d, &Budget::unlimited()).unwrap();
            (s, t.attempts() + x.attempts())
        };
        let (cold, cold_calls) = run();
        let (warm, warm_calls) = run();
        assert_eq!(cold_calls, 5);
        assert_eq!(warm_calls, 0);
        assert_eq!(cold, warm);
    }

    #[test]
    fn budget_exhaustion_reports_progress() {
        let (e, _, _) = evaluator(MockChat::constant("positive"), MockChat::constant("x"));
        let e = Evaluator { task: Arc::new(Gateway::new(MockChat::constant("positive")).with_max_in_flight(1)), ..e };
        let err = e.evaluate(&tpl(), &data(&["positive"; 5]), &Budget::new(3, 10_000).unwrap()).unwrap_err();
        assert!(matches!(err, EvalError::Partial { completed: 3, total: 5 }), "{err:?}");
    }

    #[test]
    fn slice_is_capped_and_calls_bounded() {
        let (e, t, x) = evaluator(MockChat::constant("maybe"), MockChat::constant("neutral"));
        let e = Evaluator { max_examples: 2, ..e };
        let s = e.evaluate(&tpl(), &data(&["neutral"; 4]), &Budget::unlimited()).unwrap();
        assert_eq!(s.total, 2);
        assert!(t.attempts() + x.attempts() <= 4);
    }

    #[test]
    fn accuracy_ordering_uses_counts() {
        let mk = |c: usize, n: usize| {
            let per = (0..n)
                .map(|i| ExampleOutcome { index: i, raw_output: String::new(), extracted_label: UNPARSED.into(), correct: i < c })
                .collect();
            ScoredPrompt::from_outcomes(tpl(), per, "x".into())
        };
        assert_eq!(mk(1, 3).cmp_accuracy(&mk(2, 6)), std::cmp::Ordering::Equal);
        assert_eq!(mk(2, 3).cmp_accuracy(&mk(3, 5)), std::cmp::Ordering::Greater);
    }
}
