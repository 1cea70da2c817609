//! Embeds the five sentiment seed prompts with a deterministic hash embedder
//! and draws 15 candidates by interpolation, extrapolation and noise.
//!
//!     cargo run --example explore_latent_space

use std::path::Path;
use std::sync::Arc;

use lpo::cli::load_prompts;
use lpo::encoder::{Encoder, EncoderSpec};
use lpo::explorer::{generate_candidates, ExplorationPolicy, Provenance, StrategyMix};
use lpo::gateway::mock::MockEmbedder;
use lpo::gateway::{Budget, Gateway};

fn main() {
    let seeds = load_prompts(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sentiment/seeds.jsonl")).expect("seeds parse");
    let embedder = Arc::new(Gateway::new(MockEmbedder::new("hash-embed", 16)));
    let encoder = Encoder::new(EncoderSpec { dimension: 16, normalize: true }, embedder);
    let budget = Budget::unlimited();
    let encoded = encoder.encode(&seeds, &budget).expect("encoding succeeds");
    let points: Vec<_> = seeds.iter().map(|s| s.id().to_string()).zip(encoded.vectors).collect();

    let policy = ExplorationPolicy {
        strategy_mix: StrategyMix {
            interpolate: 2.0,
            extrapolate: 1.0,
            perturb: 1.0,
        },
        rng_seed: 7,
        ..Default::default()
    };
    let candidates = generate_candidates(&points, &policy).expect("policy is valid");
    println!("{:<5} {:<14} {:<22} {:>8}", "id", "strategy", "parents", "norm");
    for c in &candidates {
        let (kind, detail) = match &c.provenance {
            Provenance::Interpolation { lambda, .. } => ("interpolate", format!("lambda {lambda:.3}")),
            Provenance::Extrapolation { lambda, .. } => ("extrapolate", format!("lambda {lambda:.3}")),
            Provenance::Perturbation { sigma, .. } => ("perturb", format!("sigma {sigma:.3}")),
        };
        println!(
            "{:<5} {:<14} {:<22} {:>8.4}  {detail}",
            c.id,
            kind,
            c.provenance.parents().join(" + "),
            c.embedding.norm()
        );
    }
    println!("embedding calls: {}", budget.snapshot().calls);
}
