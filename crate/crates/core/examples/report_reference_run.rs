//! Builds a run record whose best seed and best optimized prompt score
//! 3768/5000 and 3907/5000, then prints the offline report.
//!
//!     cargo run --example report_reference_run -- [output.jsonl]

use std::path::PathBuf;

use lpo::cli::{load_prompts, render_report};
use lpo::domain::{PromptOrigin, PromptTemplate};
use lpo::evaluator::{ExampleOutcome, ScoredPrompt};
use lpo::explorer::CandidateRecord;
use lpo::gateway::UsageSnapshot;
use lpo::optimizer::{BudgetLimits, IterationRecord, RunHeader, RunRecord, StopReason};

const TOTAL: usize = 5000;
const LABELS: [&str; 3] = ["positive", "negative", "neutral"];

/// Outcomes with exactly `correct` hits; misses are spread over the rest.
fn outcomes(correct: usize) -> Vec<ExampleOutcome> {
    (0..TOTAL)
        .map(|i| {
            let gold = LABELS[i % 3];
            let hit = (i * 7919) % TOTAL < correct;
            let said = if hit { gold } else { LABELS[(i + 1) % 3] };
            ExampleOutcome {
                index: i,
                raw_output: format!("{{\"sentiment\": \"{said}\"}}"),
                extracted_label: said.to_string(),
                correct: hit,
            }
        })
        .collect()
}

fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/sentiment");
    let seeds = load_prompts(&fixtures.join("seeds.jsonl")).expect("seed fixture parses");
    let optimized = load_prompts(&fixtures.join("optimized.jsonl")).expect("optimized fixture parses")[0]
        .clone()
        .with_id("i1-c00")
        .with_origin(PromptOrigin::Refined);
    let best_seed: PromptTemplate = seeds.iter().find(|s| s.id() == "prompt-2").expect("prompt-2 present").clone();

    let mut candidate: CandidateRecord = serde_json::from_value(serde_json::json!({
        "id": "i1-c00",
        "embedding": [0.0, 0.0],
        "provenance": {"kind": "perturbation", "parent": "prompt-4", "sigma": 0.0, "noise_seed": 0},
    }))
    .expect("candidate literal is valid");
    candidate.decoded_text = Some(optimized.text().to_string());
    candidate.refined_template = Some(optimized.clone());

    let eval_set_id = "reference-replay".to_string();
    let baseline = ScoredPrompt::from_outcomes(best_seed, outcomes(3768), eval_set_id.clone());
    let best = ScoredPrompt::from_outcomes(optimized, outcomes(3907), eval_set_id.clone());
    let header = RunHeader {
        started_at: "1970-01-01T00:00:00.000Z".into(),
        ..RunHeader::new(
            serde_json::json!({"note": "formatting fixture; per-example outcomes are synthetic"}),
            "reference-replay".into(),
            eval_set_id,
            BudgetLimits {
                max_calls: 5_000,
                max_total_tokens: 5_000_000,
            },
        )
    };
    let record = RunRecord {
        header,
        iterations: vec![IterationRecord {
            iteration: 1,
            seeds,
            candidates: vec![candidate],
            selected_ids: vec![best.template.id().to_string(), baseline.template.id().to_string()],
            scored: vec![baseline, best],
            warnings: vec!["formatting fixture: only the best seed and the optimized prompt are scored".into()],
            usage: UsageSnapshot::default(),
            partial: false,
            stop_reason: Some(StopReason::MaxIterations),
            started_at: "1970-01-01T00:00:00.000Z".into(),
            finished_at: "1970-01-01T00:00:00.000Z".into(),
        }],
    };
    if let Some(path) = std::env::args().nth(1) {
        record.write(path.as_ref()).expect("record written");
        eprintln!("wrote {path}");
    }
    print!("{}", render_report(&record).expect("record has an iteration"));
}
