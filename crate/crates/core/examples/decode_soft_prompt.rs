//! Decodes latent points through the soft-prompt route: the point is
//! projected into the decoder's embedding space and sent alongside a fixed
//! paraphrase instruction. Only in-process backends accept such vectors.
//!
//!     cargo run --example decode_soft_prompt

use std::sync::Arc;

use lpo::decoder::{DecodeKind, DecodeStrategy, Decoder, Refinement};
use lpo::domain::{PromptOrigin, PromptTemplate};
use lpo::encoder::{toy_encode, ToySpaceSpec};
use lpo::explorer::{interpolate, CandidateRecord};
use lpo::gateway::{Budget, Gateway};
use lpo::projector::LinearProjector;
use lpo::toy::{toy_dataset, ToyWorld};

fn main() {
    let spec = ToySpaceSpec::new(["tone", "steps"]).unwrap();
    let world = Arc::new(ToyWorld::new(spec.clone(), vec![0.5, 0.5], &toy_dataset(10, &["yes", "no"])).unwrap());
    let chat = Arc::new(Gateway::new(world.backend()));
    let decoder = Decoder::new(DecodeStrategy::new(DecodeKind::SoftPrompt))
        .with_chat(chat.clone())
        .with_projector(LinearProjector::identity(2));

    let seeds = vec![
        PromptTemplate::new("a", "tone=0.2;steps=0.8;{text}", PromptOrigin::Seed).unwrap(),
        PromptTemplate::new("b", "tone=0.9;steps=0.3;{text}", PromptOrigin::Seed).unwrap(),
    ];
    let ea = toy_encode(&spec, seeds[0].text()).unwrap();
    let eb = toy_encode(&spec, seeds[1].text()).unwrap();
    let budget = Budget::unlimited();
    for (k, lambda) in [0.25, 0.5, 0.75].into_iter().enumerate() {
        let point = interpolate(&ea, &eb, lambda).unwrap();
        let candidate: CandidateRecord = serde_json::from_value(serde_json::json!({
            "id": format!("c{k:02}"),
            "embedding": point,
            "provenance": {"kind": "interpolation", "parent_i": "a", "parent_j": "b", "lambda": lambda},
        }))
        .unwrap();
        let decoded = decoder.decode(&candidate, &seeds, &budget).expect("decode succeeds");
        let refined = match decoder.refine_format(&decoded.text, &seeds, &candidate.id, &budget).unwrap() {
            Refinement::Unchanged(t) | Refinement::Rewritten(t) => t.text().to_string(),
            Refinement::Invalid { reason } => format!("invalid: {reason}"),
        };
        println!("lambda {lambda:.2}: decoded {:<24} refined {refined}", decoded.text);
    }
    println!("calls: {}", budget.snapshot().calls);
}
