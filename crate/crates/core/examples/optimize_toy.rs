//! Runs the optimizer in the toy world, where the best achievable prompt is
//! known, and prints the run report.
//!
//!     cargo run --example optimize_toy -- [toy_inverse|anchor_blend|soft_prompt]

use std::path::Path;
use std::sync::Arc;

use lpo::cli::{load_prompts, render_report};
use lpo::decoder::{DecodeKind, DecodeStrategy};
use lpo::encoder::ToySpaceSpec;
use lpo::explorer::{ExplorationPolicy, StrategyMix};
use lpo::gateway::Budget;
use lpo::optimizer::{BudgetLimits, OptimizerConfig, RunHeader};
use lpo::toy::{toy_dataset, toy_optimizer, ToyWorld};

fn main() {
    let kind = match std::env::args().nth(1).as_deref() {
        None | Some("toy_inverse") => DecodeKind::ToyInverse,
        Some("anchor_blend") => DecodeKind::AnchorBlend,
        Some("soft_prompt") => DecodeKind::SoftPrompt,
        Some(other) => panic!("unknown decode kind {other}"),
    };
    let seeds = load_prompts(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/seeds.jsonl")).expect("seeds parse");
    let data = toy_dataset(20, &["positive", "negative", "neutral"]);
    let spec = ToySpaceSpec::new(["tone", "steps"]).unwrap();
    let world = Arc::new(ToyWorld::new(spec, vec![0.4, 0.55], &data).expect("world is valid"));

    let config = OptimizerConfig {
        policy: ExplorationPolicy {
            strategy_mix: StrategyMix {
                interpolate: 2.0,
                extrapolate: 1.0,
                perturb: 1.0,
            },
            rng_seed: 3,
            ..Default::default()
        },
        max_iterations: 4,
        patience: 1,
        ..Default::default()
    };
    let (optimizer, chat) = toy_optimizer(&world, config, DecodeStrategy::new(kind));
    let budget = Budget::new(2_000, 1_000_000).expect("positive limits");
    let header = RunHeader::new(
        serde_json::json!({"decode": format!("{kind:?}")}),
        data.fingerprint(),
        data.fingerprint(),
        BudgetLimits {
            max_calls: budget.max_calls(),
            max_total_tokens: budget.max_total_tokens(),
        },
    );
    let record = optimizer.iterate(&seeds, &data, &budget, header).expect("run completes");
    print!("{}", render_report(&record).expect("at least one iteration"));
    let best = record.iterations.last().and_then(|it| it.selected().first().map(|s| s.template.text().to_string()));
    println!("final incumbent: {}", best.unwrap_or_default());
    println!("gateway attempts: {}", chat.attempts());
}
