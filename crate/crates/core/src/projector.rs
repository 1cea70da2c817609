//! Linear cross-modal projector `h = W·e (+ b)` from encoder space (d) to
//! decoder token-embedding space (m): application, ridge fitting and a
//! plain-text weight file.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EmbeddingVector, ProjectedVector};

/// Normal-equation systems with a larger condition estimate are refused.
pub const MAX_CONDITION: f64 = 1e12;

const FILE_FORMAT: &str = "lpo-linear-projector";

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("input has dimension {found}, projector expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weights must be finite and the matrix non-empty")]
    InvalidWeights,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("pair {index} has dimensions ({x}, {y}), expected ({d}, {m})")]
    InconsistentPair { index: usize, x: usize, y: usize, d: usize, m: usize },
    #[error("regularization {0} must be finite and non-negative")]
    InvalidRegularization(f64),
    #[error("normal equations are singular or ill-conditioned (condition estimate {condition:e}); use a regularization > 0{}", if *.regularization > 0.0 { " larger than the current one" } else { "" })]
    Degenerate { condition: f64, regularization: f64 },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("weight file header announces {expected} numbers but {found} are present")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("malformed pair on line {line}: {reason}")]
    MalformedPair { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjector {
    weights: DMatrix<f64>,
    bias: Option<DVector<f64>>,
}

impl LinearProjector {
    /// `weights` is m×d.
    pub fn new(weights: DMatrix<f64>, bias: Option<DVector<f64>>) -> Result<Self, ProjectorError> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(ProjectorError::InvalidWeights);
        }
        if let Some(b) = &bias {
            if b.len() != weights.nrows() {
                return Err(ProjectorError::DimensionMismatch {
                    expected: weights.nrows(),
                    found: b.len(),
                });
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(ProjectorError::InvalidWeights);
            }
        }
        Ok(Self { weights, bias })
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Option<Vec<f64>>) -> Result<Self, ProjectorError> {
        let m = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if m == 0 || d == 0 {
            return Err(ProjectorError::InvalidWeights);
        }
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(ProjectorError::DimensionMismatch { expected: d, found: r.len() });
        }
        let weights = DMatrix::from_fn(m, d, |i, j| rows[i][j]);
        Self::new(weights, bias.map(DVector::from_vec))
    }

    pub fn identity(d: usize) -> Self {
        Self {
            weights: DMatrix::identity(d, d),
            bias: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> Option<&DVector<f64>> {
        self.bias.as_ref()
    }

    pub fn apply(&self, e: &EmbeddingVector) -> Result<ProjectedVector, ProjectorError> {
        if e.dim() != self.input_dim() {
            return Err(ProjectorError::DimensionMismatch {
                expected: self.input_dim(),
                found: e.dim(),
            });
        }
        let x = DVector::from_column_slice(e.values());
        let mut h = &self.weights * x;
        if let Some(b) = &self.bias {
            h += b;
        }
        ProjectedVector::new(h.as_slice().to_vec()).map_err(|_| ProjectorError::InvalidWeights)
    }

    /// `Σ‖W·x + b − y‖²` over the corpus.
    pub fn residual_sum_squares(&self, corpus: &PairedCorpus) -> f64 {
        corpus
            .pairs
            .iter()
            .map(|(x, y)| {
                let h = self.apply(x).expect("corpus dimensions checked");
                h.values().iter().zip(y.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum()
    }

    /// Ridge objective `Σ‖W·x + b − y‖² + reg·‖W‖²_F`.
    pub fn objective(&self, corpus: &PairedCorpus, regularization: f64) -> f64 {
        self.residual_sum_squares(corpus) + regularization * self.weights.norm_squared()
    }

    pub fn save_weights(&self, path: &Path) -> Result<(), ProjectorError> {
        fs::write(path, self.to_file_string()).map_err(|source| ProjectorError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_weights(path: &Path) -> Result<Self, ProjectorError> {
        let raw = fs::read_to_string(path).map_err(|source| ProjectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_file_str(&raw)
    }

    /// JSON header line, then one row of W per line, then the bias line.
    /// Numbers use Rust's shortest round-trip formatting.
    pub fn to_file_string(&self) -> String {
        let header = WeightHeader {
            format: FILE_FORMAT.to_string(),
            version: 1,
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            bias: self.bias.is_some(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for row in self.weights.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        if let Some(b) = &self.bias {
            let line: Vec<String> = b.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_file_str(raw: &str) -> Result<Self, ProjectorError> {
        let (header_line, body) = raw.split_once('\n').unwrap_or((raw, ""));
        let header: WeightHeader = serde_json::from_str(header_line.trim())
            .map_err(|e| ProjectorError::Malformed(format!("header: {e}")))?;
        if header.format != FILE_FORMAT || header.version != 1 {
            return Err(ProjectorError::Malformed(format!(
                "unsupported format {:?} version {}",
                header.format, header.version
            )));
        }
        let (d, m) = (header.input_dim, header.output_dim);
        if d == 0 || m == 0 {
            return Err(ProjectorError::Malformed("dimensions must be positive".into()));
        }
        let numbers = body
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| ProjectorError::Malformed(format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let expected = m * d + if header.bias { m } else { 0 };
        if numbers.len() != expected {
            return Err(ProjectorError::ShapeMismatch {
                expected,
                found: numbers.len(),
            });
        }
        let weights = DMatrix::from_row_slice(m, d, &numbers[..m * d]);
        let bias = header.bias.then(|| DVector::from_column_slice(&numbers[m * d..]));
        Self::new(weights, bias)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightHeader {
    format: String,
    version: u32,
    input_dim: usize,
    output_dim: usize,
    bias: bool,
}

/// Paired training vectors `(x ∈ ℝ^d, y ∈ ℝ^m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCorpus {
    pairs: Vec<(EmbeddingVector, ProjectedVector)>,
}

impl PairedCorpus {
    pub fn new(pairs: Vec<(EmbeddingVector, ProjectedVector)>) -> Result<Self, ProjectorError> {
        let (x0, y0) = pairs.first().ok_or(ProjectorError::EmptyCorpus)?;
        let (d, m) = (x0.dim(), y0.dim());
        for (index, (x, y)) in pairs.iter().enumerate() {
            if x.dim() != d || y.dim() != m {
                return Err(ProjectorError::InconsistentPair {
                    index,
                    x: x.dim(),
                    y: y.dim(),
                    d,
                    m,
                });
            }
        }
        Ok(Self { pairs })
    }

    /// Reads `{"x": [...], "y": [...]}` objects, one per line.
    pub fn load_jsonl(path: &Path) -> Result<Self, ProjectorError> {
        #[derive(Deserialize)]
        struct Pair {
            x: EmbeddingVector,
            y: ProjectedVector,
        }
        let raw = fs::read_to_string(path).map_err(|source| ProjectorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pairs = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let p: Pair = serde_json::from_str(line).map_err(|e| ProjectorError::MalformedPair {
                line: i + 1,
                reason: e.to_string(),
            })?;
            pairs.push((p.x, p.y));
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[(EmbeddingVector, ProjectedVector)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.pairs[0].0.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.pairs[0].1.dim()
    }
}

/// Closed-form ridge fit minimizing `Σ‖W·x + b − y‖² + reg·‖W‖²_F`.
///
/// Solves `(XᵀX + reg·P)·B = XᵀY` by Cholesky, where `X` carries a trailing
/// ones column when `with_bias` is set and `P` leaves that column
/// unpenalized.
pub fn fit_ridge(corpus: &PairedCorpus, regularization: f64, with_bias: bool) -> Result<LinearProjector, ProjectorError> {
    if !(regularization.is_finite() && regularization >= 0.0) {
        return Err(ProjectorError::InvalidRegularization(regularization));
    }
    let (n, d, m) = (corpus.len(), corpus.input_dim(), corpus.output_dim());
    let cols = d + usize::from(with_bias);
    let design = DMatrix::from_fn(n, cols, |r, c| {
        if c < d {
            corpus.pairs[r].0.values()[c]
        } else {
            1.0
        }
    });
    let targets = DMatrix::from_fn(n, m, |r, c| corpus.pairs[r].1.values()[c]);

    let mut gram = design.transpose() * &design;
    for i in 0..d {
        gram[(i, i)] += regularization;
    }
    let rhs = design.transpose() * targets;

    let eig = gram.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(ProjectorError::Degenerate {
            condition,
            regularization,
        });
    }
    let chol = gram.cholesky().ok_or(ProjectorError::Degenerate {
        condition,
        regularization,
    })?;
    let solution = chol.solve(&rhs); // cols × m
    let weights = solution.rows(0, d).transpose();
    let bias = with_bias.then(|| solution.row(d).transpose());
    LinearProjector::new(weights, bias)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }
    fn pv(x: &[f64]) -> ProjectedVector {
        ProjectedVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn apply_examples() {
        let id = LinearProjector::identity(2);
        assert_eq!(id.apply(&ev(&[3.0, 4.0])).unwrap().values(), [3.0, 4.0]);
        let diag = LinearProjector::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]], None).unwrap();
        assert_eq!(diag.apply(&ev(&[1.0, 1.0])).unwrap().values(), [2.0, 3.0]);
        let zero = LinearProjector::new(DMatrix::zeros(3, 2), None).unwrap();
        assert_eq!(zero.apply(&ev(&[5.0, -1.0])).unwrap().values(), [0.0, 0.0, 0.0]);
        assert!(matches!(
            diag.apply(&ev(&[1.0])).unwrap_err(),
            ProjectorError::DimensionMismatch { expected: 2, found: 1 }
        ));
    }

    #[test]
    fn exact_fit_on_basis_pairs() {
        let corpus = PairedCorpus::new(vec![
            (ev(&[1.0, 0.0]), pv(&[2.0, 0.0])),
            (ev(&[0.0, 1.0]), pv(&[0.0, 3.0])),
        ])
        .unwrap();
        let p = fit_ridge(&corpus, 0.0, false).unwrap();
        assert_eq!(p.weights(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    }

    #[test]
    fn huge_regularization_shrinks_to_zero() {
        let corpus = PairedCorpus::new(vec![
            (ev(&[1.0, 0.5]), pv(&[2.0, 0.0])),
            (ev(&[0.2, 1.0]), pv(&[0.0, 3.0])),
            (ev(&[0.7, 0.7]), pv(&[1.0, 1.0])),
        ])
        .unwrap();
        let p = fit_ridge(&corpus, 1e9, false).unwrap();
        assert!(p.weights().norm() < 1e-6);
    }

    #[test]
    fn rank_deficient_needs_regularization() {
        let corpus = PairedCorpus::new(vec![
            (ev(&[1.0, 2.0]), pv(&[1.0])),
            (ev(&[2.0, 4.0]), pv(&[2.0])),
        ])
        .unwrap();
        let err = fit_ridge(&corpus, 0.0, false).unwrap_err();
        assert!(matches!(err, ProjectorError::Degenerate { .. }));
        assert!(err.to_string().contains("regularization > 0"));
        assert!(fit_ridge(&corpus, 1e-3, false).is_ok());
        assert!(matches!(
            fit_ridge(&corpus, -1.0, false).unwrap_err(),
            ProjectorError::InvalidRegularization(_)
        ));
    }

    #[test]
    fn bias_is_fitted_and_unpenalized() {
        // y = 2x + 5 exactly
        let corpus = PairedCorpus::new(
            (0..5).map(|i| (ev(&[i as f64]), pv(&[2.0 * i as f64 + 5.0]))).collect(),
        )
        .unwrap();
        let p = fit_ridge(&corpus, 0.0, true).unwrap();
        assert!((p.weights()[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((p.bias().unwrap()[0] - 5.0).abs() < 1e-10);
        // with a crushing penalty the slope vanishes but the bias becomes the mean
        let p = fit_ridge(&corpus, 1e12, true).unwrap();
        assert!(p.weights()[(0, 0)].abs() < 1e-6);
        assert!((p.bias().unwrap()[0] - 9.0).abs() < 1e-5);
    }

    #[test]
    fn optimal_objective_is_monotone_in_regularization_against_grid() {
        // 1-d instance: brute-force the objective over a dense grid of w
        let corpus = PairedCorpus::new(vec![
            (ev(&[1.0]), pv(&[1.9])),
            (ev(&[2.0]), pv(&[4.2])),
            (ev(&[-1.0]), pv(&[-2.1])),
        ])
        .unwrap();
        let grid_min = |reg: f64| {
            (-4000..=4000)
                .map(|k| {
                    let w = k as f64 * 1e-3;
                    corpus.pairs().iter().map(|(x, y)| (w * x.values()[0] - y.values()[0]).powi(2)).sum::<f64>()
                        + reg * w * w
                })
                .fold(f64::INFINITY, f64::min)
        };
        let regs = [10.0, 3.0, 1.0, 0.1, 0.0];
        let mut last = f64::INFINITY;
        for reg in regs {
            let fitted = fit_ridge(&corpus, reg, false).unwrap().objective(&corpus, reg);
            assert!(fitted <= grid_min(reg) + 1e-9, "fit not optimal at reg {reg}");
            assert!(fitted <= last + 1e-12, "objective grew as reg decreased");
            last = fitted;
        }
    }

    #[test]
    fn weight_file_errors() {
        assert!(matches!(
            LinearProjector::from_file_str("").unwrap_err(),
            ProjectorError::Malformed(_)
        ));
        let header = r#"{"format":"lpo-linear-projector","version":1,"input_dim":2,"output_dim":3,"bias":false}"#;
        let err = LinearProjector::from_file_str(&format!("{header}\n1 2 3\n4 5\n")).unwrap_err();
        assert!(matches!(err, ProjectorError::ShapeMismatch { expected: 6, found: 5 }));
        let good = LinearProjector::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], Some(vec![0.5, -0.5])).unwrap();
        let s = good.to_file_string();
        let truncated = &s[..s.len() - 6];
        assert!(LinearProjector::from_file_str(truncated).is_err());
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..5),
            bias in proptest::option::of(proptest::collection::vec(-10f64..10.0, 4)),
            inputs in proptest::collection::vec(proptest::collection::vec(-5f64..5.0, 3), 10),
        ) {
            let bias = bias.map(|b| b[..rows.len()].to_vec());
            let p = LinearProjector::from_rows(&rows, bias).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("w.txt");
            p.save_weights(&path).unwrap();
            let q = LinearProjector::load_weights(&path).unwrap();
            prop_assert_eq!(&p, &q);
            for x in inputs {
                let x = ev(&x);
                let (a, b) = (p.apply(&x).unwrap(), q.apply(&x).unwrap());
                for (u, v) in a.values().iter().zip(b.values()) {
                    prop_assert!((u - v).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn apply_is_affine(
            w in proptest::collection::vec(-1f64..1.0, 6),
            b in proptest::collection::vec(-1f64..1.0, 2),
            e1 in proptest::collection::vec(-1f64..1.0, 3),
            e2 in proptest::collection::vec(-1f64..1.0, 3),
            alpha in -2f64..2.0,
        ) {
            let p = LinearProjector::from_rows(&[w[..3].to_vec(), w[3..].to_vec()], Some(b.clone())).unwrap();
            let sum: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| x + y).collect();
            let lhs = p.apply(&ev(&sum)).unwrap();
            let (h1, h2) = (p.apply(&ev(&e1)).unwrap(), p.apply(&ev(&e2)).unwrap());
            for k in 0..2 {
                prop_assert!((lhs.values()[k] - (h1.values()[k] + h2.values()[k] - b[k])).abs() < 1e-9);
            }
            let scaled: Vec<f64> = e1.iter().map(|x| alpha * x).collect();
            let lhs = p.apply(&ev(&scaled)).unwrap();
            for k in 0..2 {
                prop_assert!((lhs.values()[k] - (alpha * h1.values()[k] + (1.0 - alpha) * b[k])).abs() < 1e-9);
            }
        }
    }
}
