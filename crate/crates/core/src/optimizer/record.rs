//! Run records: a header line followed by one JSON object per iteration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::PromptTemplate;
use crate::evaluator::ScoredPrompt;
use crate::explorer::CandidateRecord;
use crate::gateway::UsageSnapshot;

pub const RECORD_FORMAT: &str = "lpo-run-record";
pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("record has no header line")]
    MissingHeader,
    #[error("iterations must be numbered 1, 2, ...; found {found} at position {position}")]
    Numbering { position: usize, found: usize },
    #[error("iteration {iteration} selects {id:?}, which it did not score")]
    DanglingSelection { iteration: usize, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Patience,
    BudgetExhausted,
    TooFewSeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLimits {
    pub max_calls: u64,
    pub max_total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: String,
    pub version: u32,
    /// Snapshot of the configuration the run used.
    pub config: serde_json::Value,
    pub dataset_id: String,
    pub eval_set_id: String,
    pub budget: BudgetLimits,
    pub started_at: String,
}

impl RunHeader {
    pub fn new(config: serde_json::Value, dataset_id: String, eval_set_id: String, budget: BudgetLimits) -> Self {
        Self {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            config,
            dataset_id,
            eval_set_id,
            budget,
            started_at: now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seeds: Vec<PromptTemplate>,
    pub candidates: Vec<CandidateRecord>,
    pub scored: Vec<ScoredPrompt>,
    pub selected_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Usage spent during this iteration.
    pub usage: UsageSnapshot,
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    pub started_at: String,
    pub finished_at: String,
}

impl IterationRecord {
    pub fn seed_scores(&self) -> impl Iterator<Item = &ScoredPrompt> {
        self.scored.iter().filter(|s| self.seeds.iter().any(|t| t.id() == s.template.id()))
    }

    pub fn candidate_scores(&self) -> impl Iterator<Item = &ScoredPrompt> {
        self.scored.iter().filter(|s| !self.seeds.iter().any(|t| t.id() == s.template.id()))
    }

    pub fn selected(&self) -> Vec<&ScoredPrompt> {
        self.selected_ids
            .iter()
            .filter_map(|id| self.scored.iter().find(|s| s.template.id() == id))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(RunHeader),
    Iteration(Box<IterationRecord>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RunHeader,
    pub iterations: Vec<IterationRecord>,
}

impl RunRecord {
    pub fn stop_reason(&self) -> Option<StopReason> {
        self.iterations.last().and_then(|i| i.stop_reason)
    }

    pub fn total_usage(&self) -> UsageSnapshot {
        self.iterations.iter().fold(UsageSnapshot::default(), |acc, i| UsageSnapshot {
            calls: acc.calls + i.usage.calls,
            prompt_tokens: acc.prompt_tokens + i.usage.prompt_tokens,
            completion_tokens: acc.completion_tokens + i.usage.completion_tokens,
        })
    }

    /// Checks numbering and that selections point at scored prompts.
    pub fn check(&self) -> Result<(), RecordError> {
        for (pos, it) in self.iterations.iter().enumerate() {
            if it.iteration != pos + 1 {
                return Err(RecordError::Numbering {
                    position: pos + 1,
                    found: it.iteration,
                });
            }
            for id in &it.selected_ids {
                if !it.scored.iter().any(|s| s.template.id() == id) {
                    return Err(RecordError::DanglingSelection {
                        iteration: it.iteration,
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Line::Header(self.header.clone());
        out.push_str(&serde_json::to_string(&header).expect("records always serialize"));
        out.push('\n');
        for it in &self.iterations {
            let line = Line::Iteration(Box::new(it.clone()));
            out.push_str(&serde_json::to_string(&line).expect("records always serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, RecordError> {
        let mut header = None;
        let mut iterations = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line).map_err(|e| RecordError::Malformed {
                line: n + 1,
                reason: e.to_string(),
            })?;
            match parsed {
                Line::Header(h) if header.is_none() => header = Some(h),
                Line::Header(_) => {
                    return Err(RecordError::Malformed {
                        line: n + 1,
                        reason: "second header".into(),
                    })
                }
                Line::Iteration(it) => iterations.push(*it),
            }
        }
        let record = RunRecord {
            header: header.ok_or(RecordError::MissingHeader)?,
            iterations,
        };
        record.check()?;
        Ok(record)
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        let io = |source| RecordError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, RecordError> {
        let io = |source| RecordError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut text = String::new();
        for line in BufReader::new(File::open(path).map_err(io)?).lines() {
            text.push_str(&line.map_err(io)?);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> RunHeader {
        RunHeader::new(serde_json::json!({"k": 1}), "d".into(), "e".into(), BudgetLimits { max_calls: 1, max_total_tokens: 2 })
    }

    #[test]
    fn header_only_round_trips() {
        let r = RunRecord { header: header(), iterations: vec![] };
        let back = RunRecord::from_jsonl(&r.to_jsonl()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn missing_header_is_an_error() {
        assert!(matches!(RunRecord::from_jsonl(""), Err(RecordError::MissingHeader)));
    }

    #[test]
    fn numbering_is_checked() {
        let it = IterationRecord {
            iteration: 2,
            seeds: vec![],
            candidates: vec![],
            scored: vec![],
            selected_ids: vec![],
            warnings: vec![],
            usage: UsageSnapshot::default(),
            partial: false,
            stop_reason: None,
            started_at: now(),
            finished_at: now(),
        };
        let r = RunRecord { header: header(), iterations: vec![it] };
        assert!(matches!(RunRecord::from_jsonl(&r.to_jsonl()), Err(RecordError::Numbering { .. })));
    }
}
