//! Scores two prompts against scripted task and extraction backends and
//! shows the response cache at work.
//!
//!     cargo run --example evaluate_prompts

use std::sync::Arc;

use lpo::domain::{Dataset, Example, PromptOrigin, PromptTemplate};
use lpo::evaluator::{Evaluator, ResponseCache};
use lpo::gateway::mock::MockChat;
use lpo::gateway::{Budget, Gateway};

fn task_reply(prompt: &str) -> String {
    let verdict = if prompt.contains("great") {
        "positive"
    } else if prompt.contains("awful") {
        "negative"
    } else {
        "neutral"
    };
    if prompt.starts_with("JSON") {
        format!("{{\"label\": \"{verdict}\", \"evidence\": []}}")
    } else {
        // hedged prose without a label word, left to the extraction call
        let mood = match verdict {
            "positive" => "upbeat",
            "negative" => "gloomy",
            _ => "flat",
        };
        format!("Hard to say, the wording feels rather {mood}.")
    }
}

fn main() {
    let data = Dataset::new(vec![
        Example::new("great quarter, record profits", "positive"),
        Example::new("awful guidance, shares fall", "negative"),
        Example::new("results in line with forecasts", "neutral"),
        Example::new("great product, awful margins", "negative"),
    ])
    .and_then(|d| d.with_label_set(["positive", "negative", "neutral"]))
    .expect("dataset is valid");
    let prompts = [
        PromptTemplate::new("json", "JSON sentiment for: {text}", PromptOrigin::Seed).unwrap(),
        PromptTemplate::new("prose", "What is the mood of: {text}", PromptOrigin::Seed).unwrap(),
    ];

    let dir = tempfile::tempdir().expect("temp dir");
    let cache_path = dir.path().join("responses.jsonl");
    for pass in ["cold", "warm"] {
        let task = Arc::new(Gateway::new(MockChat::new("task", |r| task_reply(&r.user_text))));
        let extraction = Arc::new(Gateway::new(MockChat::new("extract", |r| {
            let answer = r.user_text.split("### ANSWER\n").nth(1).unwrap_or("");
            [("upbeat", "positive"), ("gloomy", "negative"), ("flat", "neutral")]
                .into_iter()
                .find(|(word, _)| answer.contains(word))
                .map_or("unparsed", |(_, label)| label)
                .to_string()
        })));
        let evaluator = Evaluator::new(task.clone(), extraction.clone(), 100).with_cache(ResponseCache::open(&cache_path));
        let budget = Budget::unlimited();
        println!("{pass} cache:");
        for p in &prompts {
            let s = evaluator.evaluate(p, &data, &budget).expect("evaluation succeeds");
            println!("  {:<6} {}/{} = {:.2}", p.id(), s.correct, s.total, s.accuracy);
            for o in &s.per_example {
                println!("    #{} {:<9} correct={}", o.index, o.extracted_label, o.correct);
            }
        }
        println!("  calls: task {}, extraction {}", task.attempts(), extraction.attempts());
    }
}
