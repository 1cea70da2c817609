//! Latent-space exploration: interpolation, extrapolation and Gaussian
//! perturbation of seed embeddings, plus seeded candidate generation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EmbeddingVector, PromptTemplate};

/// Candidates closer than this in L∞ to an earlier one count as duplicates.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExploreError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("interpolation weight {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("extrapolation weight {0} lies inside [0, 1]; use interpolate")]
    WrongOperation(f64),
    #[error("sigma {0} must be finite and non-negative")]
    InvalidSigma(f64),
    #[error("result is not finite")]
    NonFinite,
    #[error("candidate count must be positive")]
    ZeroCandidates,
    #[error("no seeds given")]
    NoSeeds,
    #[error("interpolation and extrapolation need at least two seeds, got {0}")]
    NeedTwoSeeds(usize),
    #[error("invalid exploration policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Interpolate,
    Extrapolate,
    Perturb,
}

/// Relative weights of the three strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyMix {
    pub interpolate: f64,
    pub extrapolate: f64,
    pub perturb: f64,
}

impl Default for StrategyMix {
    fn default() -> Self {
        Self {
            interpolate: 1.0,
            extrapolate: 0.0,
            perturb: 0.0,
        }
    }
}

impl StrategyMix {
    pub fn only(strategy: Strategy) -> Self {
        let mut mix = Self {
            interpolate: 0.0,
            extrapolate: 0.0,
            perturb: 0.0,
        };
        match strategy {
            Strategy::Interpolate => mix.interpolate = 1.0,
            Strategy::Extrapolate => mix.extrapolate = 1.0,
            Strategy::Perturb => mix.perturb = 1.0,
        }
        mix
    }

    fn weights(&self) -> [(Strategy, f64); 3] {
        [
            (Strategy::Interpolate, self.interpolate),
            (Strategy::Extrapolate, self.extrapolate),
            (Strategy::Perturb, self.perturb),
        ]
    }

    fn needs_pairs(&self) -> bool {
        self.interpolate > 0.0 || self.extrapolate > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationPolicy {
    pub strategy_mix: StrategyMix,
    /// Closed interval for interpolation weights.
    pub lambda_range: [f64; 2],
    /// Half-open interval `[lo, hi)` below zero for extrapolation weights.
    pub extrapolation_below: [f64; 2],
    /// Half-open interval `(lo, hi]` above one for extrapolation weights.
    pub extrapolation_above: [f64; 2],
    /// Perturbation scale; `None` means 0.1 times the mean seed norm.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub rng_seed: u64,
    pub candidate_count: usize,
}

impl Default for ExplorationPolicy {
    fn default() -> Self {
        Self {
            strategy_mix: StrategyMix::default(),
            lambda_range: [0.35, 0.65],
            extrapolation_below: [-0.5, 0.0],
            extrapolation_above: [1.0, 1.5],
            sigma: None,
            rng_seed: 0,
            candidate_count: 15,
        }
    }
}

impl ExplorationPolicy {
    /// Every invariant violation, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.candidate_count == 0 {
            out.push("candidate_count must be positive".to_string());
        }
        let w = self.strategy_mix.weights();
        if w.iter().any(|(_, x)| !x.is_finite() || *x < 0.0) {
            out.push("strategy weights must be finite and non-negative".to_string());
        } else if w.iter().all(|(_, x)| *x == 0.0) {
            out.push("strategy weights must not all be zero".to_string());
        }
        let [lo, hi] = self.lambda_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            out.push(format!("lambda_range [{lo}, {hi}] must be an interval inside [0, 1]"));
        }
        let [blo, bhi] = self.extrapolation_below;
        if !(blo.is_finite() && blo < bhi && bhi <= 0.0) {
            out.push(format!("extrapolation_below [{blo}, {bhi}) must be a non-empty interval at or below 0"));
        }
        let [alo, ahi] = self.extrapolation_above;
        if !(ahi.is_finite() && 1.0 <= alo && alo < ahi) {
            out.push(format!("extrapolation_above ({alo}, {ahi}] must be a non-empty interval at or above 1"));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                out.push(format!("sigma {s} must be finite and non-negative"));
            }
        }
        out
    }
}

/// How a candidate was produced. Parents are seed ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Interpolation {
        parent_i: String,
        parent_j: String,
        lambda: f64,
    },
    Extrapolation {
        parent_i: String,
        parent_j: String,
        lambda: f64,
    },
    Perturbation {
        parent: String,
        sigma: f64,
        noise_seed: u64,
    },
}

impl Provenance {
    pub fn strategy(&self) -> Strategy {
        match self {
            Provenance::Interpolation { .. } => Strategy::Interpolate,
            Provenance::Extrapolation { .. } => Strategy::Extrapolate,
            Provenance::Perturbation { .. } => Strategy::Perturb,
        }
    }

    pub fn parents(&self) -> Vec<&str> {
        match self {
            Provenance::Interpolation { parent_i, parent_j, .. }
            | Provenance::Extrapolation { parent_i, parent_j, .. } => vec![parent_i, parent_j],
            Provenance::Perturbation { parent, .. } => vec![parent],
        }
    }
}

/// An explored latent point and everything later stages learn about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub embedding: EmbeddingVector,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoded_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_template: Option<PromptTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    /// Set when the refined template repeats an earlier prompt's text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CandidateRecord {
    fn new(id: String, embedding: EmbeddingVector, provenance: Provenance) -> Self {
        Self {
            id,
            embedding,
            provenance,
            decoded_text: None,
            refined_template: None,
            invalid_reason: None,
            duplicate_of: None,
            warnings: Vec::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.refined_template.is_some() && self.invalid_reason.is_none()
    }
}

fn same_dim(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), ExploreError> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(ExploreError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        })
    }
}

fn combine(a: &EmbeddingVector, b: &EmbeddingVector, wa: f64, wb: f64) -> Vec<f64> {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| wa * x + wb * y)
        .collect()
}

fn finished(values: Vec<f64>) -> Result<EmbeddingVector, ExploreError> {
    EmbeddingVector::new(values).map_err(|_| ExploreError::NonFinite)
}

/// `λ·e_i + (1−λ)·e_j` for `λ ∈ [0, 1]`.
///
/// The weight pair is formed so that the larger weight `w` and `1 − w` are
/// both exact; swapping the parents and passing `1 − λ` therefore yields
/// bit-identical output. Each coordinate is clamped to the parents' range.
pub fn interpolate(e_i: &EmbeddingVector, e_j: &EmbeddingVector, lambda: f64) -> Result<EmbeddingVector, ExploreError> {
    same_dim(e_i, e_j)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ExploreError::LambdaOutOfRange(lambda));
    }
    let (wi, wj) = if lambda >= 0.5 {
        (lambda, 1.0 - lambda)
    } else {
        let wj = 1.0 - lambda;
        (1.0 - wj, wj)
    };
    let values = combine(e_i, e_j, wi, wj)
        .into_iter()
        .zip(e_i.values().iter().zip(e_j.values()))
        .map(|(v, (a, b))| v.clamp(a.min(*b), a.max(*b)))
        .collect();
    finished(values)
}

/// Same affine formula as [`interpolate`] with `λ` outside `[0, 1]`.
pub fn extrapolate(e_i: &EmbeddingVector, e_j: &EmbeddingVector, lambda: f64) -> Result<EmbeddingVector, ExploreError> {
    same_dim(e_i, e_j)?;
    if !lambda.is_finite() {
        return Err(ExploreError::NonFinite);
    }
    if (0.0..=1.0).contains(&lambda) {
        return Err(ExploreError::WrongOperation(lambda));
    }
    finished(combine(e_i, e_j, lambda, 1.0 - lambda))
}

/// `e + ε` with `ε ~ N(0, σ²I)` drawn from a generator seeded by `noise_seed`.
pub fn perturb(e: &EmbeddingVector, sigma: f64, noise_seed: u64) -> Result<EmbeddingVector, ExploreError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ExploreError::InvalidSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(e.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| ExploreError::InvalidSigma(sigma))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    finished(e.values().iter().map(|x| x + normal.sample(&mut rng)).collect())
}

/// splitmix64 finalizer; derives independent per-candidate noise seeds.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Default perturbation scale: a tenth of the mean seed norm.
pub fn default_sigma(seeds: &[(String, EmbeddingVector)]) -> f64 {
    if seeds.is_empty() {
        return 0.0;
    }
    0.1 * seeds.iter().map(|(_, e)| e.norm()).sum::<f64>() / seeds.len() as f64
}

struct Sampler<'a> {
    seeds: &'a [(String, EmbeddingVector)],
    policy: &'a ExplorationPolicy,
    strategies: Vec<Strategy>,
    chooser: WeightedIndex<f64>,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn pair(&mut self) -> (usize, usize) {
        let picked = rand::seq::index::sample(&mut self.rng, self.seeds.len(), 2);
        (picked.index(0), picked.index(1))
    }

    fn extrapolation_lambda(&mut self) -> f64 {
        let [blo, bhi] = self.policy.extrapolation_below;
        let [alo, ahi] = self.policy.extrapolation_above;
        let below_len = bhi - blo;
        let above_len = ahi - alo;
        loop {
            let lambda = if self.rng.random::<f64>() * (below_len + above_len) < below_len {
                self.rng.random_range(blo..bhi)
            } else {
                // reflect [lo, hi) onto (lo, hi]
                alo + ahi - self.rng.random_range(alo..ahi)
            };
            if !(0.0..=1.0).contains(&lambda) {
                return lambda;
            }
        }
    }

    fn draw(&mut self, index: usize, attempt: u64) -> Result<(EmbeddingVector, Provenance), ExploreError> {
        let strategy = self.strategies[self.chooser.sample(&mut self.rng)];
        match strategy {
            Strategy::Interpolate => {
                let (i, j) = self.pair();
                let [lo, hi] = self.policy.lambda_range;
                let lambda = self.rng.random_range(lo..=hi);
                let e = interpolate(&self.seeds[i].1, &self.seeds[j].1, lambda)?;
                Ok((
                    e,
                    Provenance::Interpolation {
                        parent_i: self.seeds[i].0.clone(),
                        parent_j: self.seeds[j].0.clone(),
                        lambda,
                    },
                ))
            }
            Strategy::Extrapolate => {
                let (i, j) = self.pair();
                let lambda = self.extrapolation_lambda();
                let e = extrapolate(&self.seeds[i].1, &self.seeds[j].1, lambda)?;
                Ok((
                    e,
                    Provenance::Extrapolation {
                        parent_i: self.seeds[i].0.clone(),
                        parent_j: self.seeds[j].0.clone(),
                        lambda,
                    },
                ))
            }
            Strategy::Perturb => {
                let i = self.rng.random_range(0..self.seeds.len());
                let noise_seed = mix_seed(self.policy.rng_seed, ((index as u64) << 8) | attempt);
                let e = perturb(&self.seeds[i].1, self.sigma, noise_seed)?;
                Ok((
                    e,
                    Provenance::Perturbation {
                        parent: self.seeds[i].0.clone(),
                        sigma: self.sigma,
                        noise_seed,
                    },
                ))
            }
        }
    }
}

/// Draws exactly `policy.candidate_count` candidates, reproducibly for a
/// fixed `policy.rng_seed`. Candidate ids are `c00`, `c01`, ...
///
/// Each candidate samples its strategy by weight, its parents uniformly
/// without replacement, and its weight uniformly from the applicable range.
/// A candidate duplicating an earlier one is redrawn once and then kept.
pub fn generate_candidates(
    seeds: &[(String, EmbeddingVector)],
    policy: &ExplorationPolicy,
) -> Result<Vec<CandidateRecord>, ExploreError> {
    let problems = policy.problems();
    if policy.candidate_count == 0 {
        return Err(ExploreError::ZeroCandidates);
    }
    if !problems.is_empty() {
        return Err(ExploreError::InvalidPolicy(problems.join("; ")));
    }
    let first = seeds.first().ok_or(ExploreError::NoSeeds)?;
    for (_, e) in seeds {
        same_dim(&first.1, e)?;
    }
    if policy.strategy_mix.needs_pairs() && seeds.len() < 2 {
        return Err(ExploreError::NeedTwoSeeds(seeds.len()));
    }
    let (strategies, weights): (Vec<Strategy>, Vec<f64>) = policy
        .strategy_mix
        .weights()
        .into_iter()
        .filter(|(_, w)| *w > 0.0)
        .unzip();
    let chooser = WeightedIndex::new(&weights).map_err(|e| ExploreError::InvalidPolicy(e.to_string()))?;
    let mut sampler = Sampler {
        seeds,
        policy,
        strategies,
        chooser,
        sigma: policy.sigma.unwrap_or_else(|| default_sigma(seeds)),
        rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
    };

    let width = policy.candidate_count.saturating_sub(1).to_string().len().max(2);
    let mut out: Vec<CandidateRecord> = Vec::with_capacity(policy.candidate_count);
    for k in 0..policy.candidate_count {
        let mut drawn = sampler.draw(k, 0)?;
        let is_dup = |e: &EmbeddingVector, out: &[CandidateRecord]| {
            out.iter().any(|c| c.embedding.linf_distance(e) <= DUPLICATE_TOLERANCE)
        };
        if is_dup(&drawn.0, &out) {
            drawn = sampler.draw(k, 1)?;
        }
        out.push(CandidateRecord::new(format!("c{k:0width$}"), drawn.0, drawn.1));
    }
    Ok(out)
}
