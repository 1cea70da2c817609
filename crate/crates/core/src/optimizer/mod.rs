//! The optimization loop: encode seeds, explore, decode, evaluate, select,
//! and feed the selection back as the next seeds.

mod record;

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use record::{BudgetLimits, IterationRecord, RecordError, RunHeader, RunRecord, StopReason};

use crate::decoder::{DecodeError, Decoder, Refinement};
use crate::domain::{Dataset, PromptTemplate};
use crate::encoder::{EncodeError, Encoder};
use crate::evaluator::{EvalError, Evaluator, ScoredPrompt};
use crate::explorer::{generate_candidates, mix_seed, CandidateRecord, ExplorationPolicy, ExploreError};
use crate::gateway::Budget;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("at least one seed prompt is required")]
    NoSeeds,
    #[error("seed id {0:?} is used more than once")]
    DuplicateSeedId(String),
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub policy: ExplorationPolicy,
    pub select_n: usize,
    pub max_iterations: usize,
    /// Iterations without improvement tolerated before stopping.
    pub patience: usize,
    /// Whether seeds compete with candidates in selection.
    pub keep_seeds: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            policy: ExplorationPolicy::default(),
            select_n: 3,
            max_iterations: 1,
            patience: 1,
            keep_seeds: true,
        }
    }
}

impl OptimizerConfig {
    pub fn problems(&self, seed_count: usize) -> Vec<String> {
        let mut out: Vec<String> = self.policy.problems();
        if self.select_n == 0 {
            out.push("select_n must be positive".into());
        }
        if self.max_iterations == 0 {
            out.push("max_iterations must be positive".into());
        }
        let pool = self.policy.candidate_count + if self.keep_seeds { seed_count } else { 0 };
        if self.select_n > pool {
            out.push(format!("select_n {} exceeds the {pool} prompts available for selection", self.select_n));
        }
        out
    }
}

/// Descending accuracy, then shorter text, then earlier position.
pub fn select_top(scored: &[ScoredPrompt], n: usize) -> Vec<ScoredPrompt> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .cmp_accuracy(&scored[a])
            .then_with(|| scored[a].template.text().chars().count().cmp(&scored[b].template.text().chars().count()))
            .then(a.cmp(&b))
    });
    order.into_iter().take(n).map(|i| scored[i].clone()).collect()
}

fn best(scored: &[ScoredPrompt]) -> Option<&ScoredPrompt> {
    scored.iter().reduce(|a, b| if b.cmp_accuracy(a).is_gt() { b } else { a })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub candidates: Vec<CandidateRecord>,
    pub scored: Vec<ScoredPrompt>,
    pub selected: Vec<PromptTemplate>,
    pub warnings: Vec<String>,
    /// Set when the budget ran out before the cycle finished.
    pub partial: bool,
}

/// Upper bounds on backend calls for a run, as printed by a dry run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedCalls {
    pub encode: usize,
    pub decode: usize,
    pub refine: usize,
    pub evaluate: usize,
}

impl PlannedCalls {
    pub fn total(&self) -> usize {
        self.encode + self.decode + self.refine + self.evaluate
    }
}

enum DecodeStop {
    Budget,
    Fatal(DecodeError),
}

pub struct Optimizer {
    config: OptimizerConfig,
    encoder: Encoder,
    decoder: Decoder,
    evaluator: Evaluator,
    /// Scores already computed this run, by template text.
    memo: Mutex<HashMap<String, ScoredPrompt>>,
}

impl std::fmt::Debug for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Optimizer").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, encoder: Encoder, decoder: Decoder, evaluator: Evaluator) -> Self {
        Self {
            config,
            encoder,
            decoder,
            evaluator,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn plan(&self, seed_count: usize, eval_set: &Dataset) -> PlannedCalls {
        let k = self.config.policy.candidate_count;
        let iters = self.config.max_iterations;
        let later_seeds = self.config.select_n;
        let refine = if self.decoder.can_refine() { k } else { 0 };
        PlannedCalls {
            encode: self.encoder.planned_calls(seed_count) * iters,
            decode: k * self.decoder.decode_calls_per_candidate() * iters,
            refine: refine * iters,
            evaluate: self.evaluator.planned_calls(eval_set, k + seed_count)
                + self.evaluator.planned_calls(eval_set, k + later_seeds) * (iters - 1),
        }
    }

    fn check_seeds(seeds: &[PromptTemplate]) -> Result<(), OptimizeError> {
        if seeds.is_empty() {
            return Err(OptimizeError::NoSeeds);
        }
        let mut ids = HashSet::new();
        for s in seeds {
            if !ids.insert(s.id()) {
                return Err(OptimizeError::DuplicateSeedId(s.id().to_string()));
            }
        }
        Ok(())
    }

    fn policy_for(&self, iteration: usize) -> ExplorationPolicy {
        let mut policy = self.config.policy.clone();
        if iteration > 1 {
            policy.rng_seed = mix_seed(policy.rng_seed, iteration as u64);
        }
        policy
    }

    /// Scores `template`, reusing an earlier score of the same text.
    fn score(&self, template: &PromptTemplate, eval_set: &Dataset, budget: &Budget) -> Result<ScoredPrompt, EvalError> {
        let hit = self.memo.lock().expect("memo lock poisoned").get(template.text()).cloned();
        if let Some(mut s) = hit {
            s.template = template.clone();
            return Ok(s);
        }
        let s = self.evaluator.evaluate(template, eval_set, budget)?;
        self.memo
            .lock()
            .expect("memo lock poisoned")
            .insert(template.text().to_string(), s.clone());
        Ok(s)
    }

    /// Scores `templates` in order, skipping repeated texts. Stops at budget
    /// exhaustion and reports it through the flag.
    fn score_all(
        &self,
        templates: &[PromptTemplate],
        eval_set: &Dataset,
        budget: &Budget,
        scored: &mut Vec<ScoredPrompt>,
    ) -> Result<bool, OptimizeError> {
        for t in templates {
            if scored.iter().any(|s| s.template.text() == t.text()) {
                continue;
            }
            match self.score(t, eval_set, budget) {
                Ok(s) => scored.push(s),
                Err(e) if e.is_budget_exhausted() => return Ok(true),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(false)
    }

    fn decode_one(
        &self,
        mut c: CandidateRecord,
        seeds: &[PromptTemplate],
        budget: &Budget,
    ) -> Result<CandidateRecord, DecodeStop> {
        let decoded = match self.decoder.decode(&c, seeds, budget) {
            Ok(d) => d,
            Err(DecodeError::Gateway(e)) if e.is_budget_exhausted() => return Err(DecodeStop::Budget),
            Err(DecodeError::Gateway(e)) => {
                c.invalid_reason = Some(format!("decode failed: {e}"));
                return Ok(c);
            }
            Err(e) => return Err(DecodeStop::Fatal(e)),
        };
        c.warnings.extend(decoded.warnings);
        c.decoded_text = Some(decoded.text.clone());
        match self.decoder.refine_format(&decoded.text, seeds, &c.id, budget) {
            Ok(Refinement::Unchanged(t) | Refinement::Rewritten(t)) => c.refined_template = Some(t),
            Ok(Refinement::Invalid { reason }) => c.invalid_reason = Some(reason),
            Err(e) if e.is_budget_exhausted() => return Err(DecodeStop::Budget),
            Err(e) => c.invalid_reason = Some(format!("refinement failed: {e}")),
        }
        Ok(c)
    }

    /// One explore-decode-evaluate-select cycle. `iteration` starts at 1 and
    /// namespaces candidate ids (`i1-c00`, ...).
    pub fn run_cycle(
        &self,
        iteration: usize,
        seeds: &[PromptTemplate],
        eval_set: &Dataset,
        budget: &Budget,
    ) -> Result<CycleOutcome, OptimizeError> {
        Self::check_seeds(seeds)?;
        let mut outcome = CycleOutcome {
            candidates: Vec::new(),
            scored: Vec::new(),
            selected: Vec::new(),
            warnings: Vec::new(),
            partial: false,
        };

        let encoded = match self.encoder.encode(seeds, budget) {
            Ok(e) => e,
            Err(EncodeError::Gateway(e)) if e.is_budget_exhausted() => {
                outcome.partial = true;
                outcome.warnings.push("budget exhausted while encoding seeds".into());
                return Ok(outcome);
            }
            Err(e) => return Err(e.into()),
        };
        for &i in &encoded.zero_norm {
            outcome.warnings.push(format!("seed {} has a zero-norm embedding and was not normalized", seeds[i].id()));
        }
        let seed_points: Vec<_> = seeds.iter().map(|s| s.id().to_string()).zip(encoded.vectors).collect();
        let mut candidates = generate_candidates(&seed_points, &self.policy_for(iteration))?;
        for c in &mut candidates {
            c.id = format!("i{iteration}-{}", c.id);
        }

        let (decoded, stop) = crate::par::map_indexed(candidates.len(), self.decoder.max_in_flight(), |k| {
            self.decode_one(candidates[k].clone(), seeds, budget)
        });
        match stop {
            Some(DecodeStop::Fatal(e)) => return Err(e.into()),
            Some(DecodeStop::Budget) => outcome.partial = true,
            None => {}
        }
        outcome.candidates = decoded
            .into_iter()
            .zip(candidates)
            .map(|(done, original)| {
                done.unwrap_or_else(|| CandidateRecord {
                    invalid_reason: Some("not decoded: budget exhausted".into()),
                    ..original
                })
            })
            .collect();
        if outcome.partial {
            outcome.warnings.push("budget exhausted while decoding candidates".into());
            return Ok(outcome);
        }

        // Later copies of a text already present are recorded, not scored.
        let mut seen: Vec<(String, String)> = seeds.iter().map(|s| (s.text().to_string(), s.id().to_string())).collect();
        for c in &mut outcome.candidates {
            let Some(t) = c.refined_template.as_ref().filter(|_| c.invalid_reason.is_none()) else {
                continue;
            };
            match seen.iter().find(|(text, _)| text == t.text()) {
                Some((_, id)) => c.duplicate_of = Some(id.clone()),
                None => seen.push((t.text().to_string(), c.id.clone())),
            }
        }
        let fresh: Vec<PromptTemplate> = outcome
            .candidates
            .iter()
            .filter(|c| c.is_valid() && c.duplicate_of.is_none())
            .filter_map(|c| c.refined_template.clone())
            .collect();
        let any_valid = outcome.candidates.iter().any(CandidateRecord::is_valid);

        let mut to_score = Vec::new();
        if self.config.keep_seeds || !any_valid {
            to_score.extend_from_slice(seeds);
        }
        to_score.extend(fresh);
        outcome.partial = self.score_all(&to_score, eval_set, budget, &mut outcome.scored)?;
        if outcome.partial {
            outcome.warnings.push("budget exhausted while evaluating prompts".into());
        }

        if !any_valid {
            outcome.warnings.push("every candidate was invalid; selecting among the seeds".into());
        }
        outcome.selected = select_top(&outcome.scored, self.config.select_n)
            .into_iter()
            .map(|s| s.template)
            .collect();
        Ok(outcome)
    }

    /// Runs up to `max_iterations` cycles, feeding each selection back as
    /// the next seeds.
    pub fn iterate(
        &self,
        seeds: &[PromptTemplate],
        eval_set: &Dataset,
        budget: &Budget,
        header: RunHeader,
    ) -> Result<RunRecord, OptimizeError> {
        Self::check_seeds(seeds)?;
        let problems = self.config.problems(seeds.len());
        if !problems.is_empty() {
            return Err(OptimizeError::InvalidConfig(problems.join("; ")));
        }
        let mut record = RunRecord {
            header,
            iterations: Vec::new(),
        };
        let mut current: Vec<PromptTemplate> = seeds.to_vec();
        let mut best_so_far: Option<ScoredPrompt> = None;
        let mut stale = 0usize;

        for iteration in 1..=self.config.max_iterations {
            let started_at = record::now();
            let before = budget.snapshot();
            let outcome = match self.run_cycle(iteration, &current, eval_set, budget) {
                Err(OptimizeError::Explore(ExploreError::NeedTwoSeeds(n))) if iteration > 1 => {
                    if let Some(last) = record.iterations.last_mut() {
                        last.stop_reason = Some(StopReason::TooFewSeeds);
                        last.warnings.push(format!("only {n} prompt(s) selected; cannot explore further"));
                    }
                    break;
                }
                other => other?,
            };
            let selected_ids: Vec<String> = outcome.selected.iter().map(|t| t.id().to_string()).collect();
            let mut it = IterationRecord {
                iteration,
                seeds: current.clone(),
                candidates: outcome.candidates,
                scored: outcome.scored,
                selected_ids,
                warnings: outcome.warnings,
                usage: budget.snapshot().since(&before),
                partial: outcome.partial,
                stop_reason: None,
                started_at,
                finished_at: String::new(),
            };

            if iteration == 1 && best_so_far.is_none() {
                best_so_far = best(&it.seed_scores().cloned().collect::<Vec<_>>()).cloned();
            }
            let selected = it.selected().into_iter().cloned().collect::<Vec<_>>();
            let improved = match (best(&selected), &best_so_far) {
                (Some(b), Some(prev)) => b.cmp_accuracy(prev).is_gt(),
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                best_so_far = best(&selected).cloned();
                stale = 0;
            } else {
                stale += 1;
            }

            it.stop_reason = if it.partial || budget.is_exhausted() {
                Some(StopReason::BudgetExhausted)
            } else if stale > self.config.patience {
                Some(StopReason::Patience)
            } else if iteration == self.config.max_iterations {
                Some(StopReason::MaxIterations)
            } else {
                None
            };
            it.finished_at = record::now();
            let stop = it.stop_reason.is_some();
            if !outcome.selected.is_empty() {
                current = outcome.selected;
            }
            record.iterations.push(it);
            if stop {
                break;
            }
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::ExampleOutcome;
    use crate::domain::PromptOrigin;

    fn scored(id: &str, text: &str, correct: usize, total: usize) -> ScoredPrompt {
        let per = (0..total)
            .map(|i| ExampleOutcome {
                index: i,
                raw_output: String::new(),
                extracted_label: "x".into(),
                correct: i < correct,
            })
            .collect();
        let t = PromptTemplate::new(id, text, PromptOrigin::Seed).unwrap();
        ScoredPrompt::from_outcomes(t, per, "e".into())
    }

    fn ids(v: &[ScoredPrompt]) -> Vec<&str> {
        v.iter().map(|s| s.template.id()).collect()
    }

    #[test]
    fn ties_keep_insertion_order() {
        let s = vec![scored("a", "aa {text}", 8, 10), scored("b", "bb {text}", 7, 10), scored("c", "cc {text}", 8, 10)];
        assert_eq!(ids(&select_top(&s, 2)), vec!["a", "c"]);
    }

    #[test]
    fn shorter_text_wins_ties() {
        let s = vec![scored("a", "long one {text}", 8, 10), scored("b", "short {text}", 4, 5)];
        assert_eq!(ids(&select_top(&s, 1)), vec!["b"]);
    }

    #[test]
    fn oversized_n_and_singletons() {
        let s = vec![scored("a", "a {text}", 1, 10), scored("b", "b {text}", 9, 10)];
        assert_eq!(ids(&select_top(&s, 5)), vec!["b", "a"]);
        assert_eq!(ids(&select_top(&s[..1], 3)), vec!["a"]);
    }

    #[test]
    fn select_n_bound_is_checked() {
        let cfg = OptimizerConfig {
            select_n: 30,
            ..Default::default()
        };
        assert_eq!(cfg.problems(5).len(), 1);
        assert!(cfg.problems(15).is_empty());
    }
}
