//! Fits a ridge projector from encoder space (d = 3) to a token-embedding
//! space (m = 4) on noisy samples of a known map, then saves and reloads it.
//!
//!     cargo run --example fit_projector

use lpo::domain::{EmbeddingVector, ProjectedVector};
use lpo::projector::{fit_ridge, LinearProjector, PairedCorpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let truth = [[0.5, -1.0, 2.0], [1.0, 0.0, 0.0], [0.0, 0.3, -0.7], [2.0, 1.0, 1.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs = (0..100)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = truth
                .iter()
                .map(|row| row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + rng.random_range(-0.01..0.01))
                .collect();
            (EmbeddingVector::new(x).unwrap(), ProjectedVector::new(y).unwrap())
        })
        .collect();
    let corpus = PairedCorpus::new(pairs).expect("consistent pairs");

    for reg in [0.0, 0.1, 10.0] {
        let p = fit_ridge(&corpus, reg, true).expect("fit succeeds");
        println!("reg {reg:>5}: residual sum of squares {:.6}", p.residual_sum_squares(&corpus));
    }

    let p = fit_ridge(&corpus, 1e-3, true).expect("fit succeeds");
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("projector.txt");
    p.save_weights(&path).expect("saved");
    let back = LinearProjector::load_weights(&path).expect("loaded");
    println!("round trip exact: {}", back == p);
    println!("recovered weights:\n{}", p.weights());
}
