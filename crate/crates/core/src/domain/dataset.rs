use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::normalize_label;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("empty dataset")]
    Empty,
    #[error("validation fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("validation fraction {fraction} of {size} examples rounds to zero validation examples")]
    EmptyValidation { fraction: f64, size: usize },
    #[error("validation fraction {fraction} of {size} examples leaves no remainder")]
    EmptyRemainder { fraction: f64, size: usize },
    #[error("label {0:?} is not in the declared label set")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Guesses the format from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Jsonl,
        }
    }
}

/// One labelled input. Labels are stored trimmed and lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: &str) -> Self {
        Self {
            text: text.into(),
            label: normalize_label(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    label_set: Vec<String>,
}

impl Dataset {
    /// Builds a dataset whose label set is the sorted unique labels present.
    pub fn new(examples: Vec<Example>) -> Result<Self, DatasetError> {
        if examples.is_empty() {
            return Err(DatasetError::Empty);
        }
        let label_set: BTreeSet<String> = examples.iter().map(|e| e.label.clone()).collect();
        Ok(Self {
            examples,
            label_set: label_set.into_iter().collect(),
        })
    }

    /// Replaces the inferred label set with a declared superset.
    pub fn with_label_set<I, S>(mut self, labels: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let declared: BTreeSet<String> = labels
            .into_iter()
            .map(|l| normalize_label(l.as_ref()))
            .collect();
        if let Some(missing) = self.examples.iter().find(|e| !declared.contains(&e.label)) {
            return Err(DatasetError::UnknownLabel(missing.label.clone()));
        }
        self.label_set = declared.into_iter().collect();
        Ok(self)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `n` examples, sharing this dataset's label set.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples.iter().take(n).cloned().collect(),
            label_set: self.label_set.clone(),
        }
    }

    /// Content hash over examples and label set, 16 hex chars.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.label_set {
            h.update(l.as_bytes());
            h.update([0x1f]);
        }
        h.update([0x1e]);
        for e in &self.examples {
            h.update(e.text.as_bytes());
            h.update([0x1f]);
            h.update(e.label.as_bytes());
            h.update([0x1e]);
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            validation_fraction: 0.1,
            rng_seed: 0,
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    let raw = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let examples = match format {
        DatasetFormat::Jsonl => parse_jsonl(&raw)?,
        DatasetFormat::Csv => parse_csv(&raw)?,
    };
    Dataset::new(examples)
}

fn parse_jsonl(raw: &str) -> Result<Vec<Example>, DatasetError> {
    #[derive(Deserialize)]
    struct Record {
        text: String,
        label: String,
    }
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(checked_example(rec.text, &rec.label, line_no)?);
    }
    Ok(out)
}

fn parse_csv(raw: &str) -> Result<Vec<Example>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(raw.as_bytes());
    let headers = reader.headers().map_err(|e| DatasetError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "text" || &headers[1] != "label" {
        return Err(DatasetError::Malformed {
            line: 1,
            reason: "expected header \"text,label\"".into(),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DatasetError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line_no = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 2 {
            return Err(DatasetError::Malformed {
                line: line_no,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        out.push(checked_example(record[0].to_string(), &record[1], line_no)?);
    }
    Ok(out)
}

fn checked_example(text: String, label: &str, line: usize) -> Result<Example, DatasetError> {
    if text.trim().is_empty() {
        return Err(DatasetError::Malformed {
            line,
            reason: "empty text".into(),
        });
    }
    if label.trim().is_empty() {
        return Err(DatasetError::Malformed {
            line,
            reason: "empty label".into(),
        });
    }
    Ok(Example::new(text, label))
}

/// Deterministically shuffles `dataset` and carves off a validation part.
///
/// The validation part keeps the shuffled order; the remainder keeps file
/// order.
pub fn split_dataset(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    let fraction = spec.validation_fraction;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(fraction));
    }
    let size = dataset.len();
    let n_val = (fraction * size as f64).round() as usize;
    if n_val == 0 {
        return Err(DatasetError::EmptyValidation { fraction, size });
    }
    if n_val >= size {
        return Err(DatasetError::EmptyRemainder { fraction, size });
    }
    let mut order: Vec<usize> = (0..size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    order.shuffle(&mut rng);

    let mut in_validation = vec![false; size];
    for &i in &order[..n_val] {
        in_validation[i] = true;
    }
    let validation = order[..n_val]
        .iter()
        .map(|&i| dataset.examples[i].clone())
        .collect();
    let remainder = (0..size)
        .filter(|&i| !in_validation[i])
        .map(|i| dataset.examples[i].clone())
        .collect();
    Ok((
        Dataset {
            examples: validation,
            label_set: dataset.label_set.clone(),
        },
        Dataset {
            examples: remainder,
            label_set: dataset.label_set.clone(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(content: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn numbered(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| Example::new(format!("ex {i}"), if i % 2 == 0 { "pos" } else { "neg" }))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_jsonl_with_sorted_label_set() {
        let f = write_tmp(
            "{\"text\":\"a\",\"label\":\"positive\"}\n{\"text\":\"b\",\"label\":\"negative\"}\n{\"text\":\"c\",\"label\":\"positive\"}\n",
            ".jsonl",
        );
        let d = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.label_set(), ["negative", "positive"]);
        assert_eq!(d.examples()[2].text, "c");
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("", ".jsonl");
        let err = load_dataset(f.path(), DatasetFormat::Jsonl).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn missing_label_names_line() {
        let f = write_tmp(
            "{\"text\":\"a\",\"label\":\"x\"}\n{\"text\":\"b\"}\n",
            ".jsonl",
        );
        match load_dataset(f.path(), DatasetFormat::Jsonl).unwrap_err() {
            DatasetError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/x.jsonl"), DatasetFormat::Jsonl).unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn loads_csv_with_quoted_commas() {
        let f = write_tmp("text,label\n\"profits rose, sharply\",Positive\nflat,neutral\n", ".csv");
        let d = load_dataset(f.path(), DatasetFormat::Csv).unwrap();
        assert_eq!(d.examples()[0].text, "profits rose, sharply");
        assert_eq!(d.examples()[0].label, "positive");
        assert_eq!(d.label_set(), ["neutral", "positive"]);
    }

    #[test]
    fn csv_requires_header() {
        let f = write_tmp("sentence,sentiment\na,b\n", ".csv");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Csv).unwrap_err(),
            DatasetError::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn declared_label_set_must_cover_examples() {
        let d = numbered(4);
        assert!(d.clone().with_label_set(["pos", "neg", "neutral"]).is_ok());
        assert!(matches!(
            d.with_label_set(["pos"]).unwrap_err(),
            DatasetError::UnknownLabel(_)
        ));
    }

    #[test]
    fn ten_percent_of_hundred() {
        let d = numbered(100);
        let (val, rest) = split_dataset(&d, &SplitSpec { validation_fraction: 0.1, rng_seed: 3 }).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(rest.len(), 90);
    }

    #[test]
    fn split_is_deterministic() {
        let d = numbered(50);
        let spec = SplitSpec { validation_fraction: 0.2, rng_seed: 11 };
        assert_eq!(split_dataset(&d, &spec).unwrap(), split_dataset(&d, &spec).unwrap());
    }

    #[test]
    fn tiny_fraction_errors() {
        let d = numbered(5);
        let err = split_dataset(&d, &SplitSpec { validation_fraction: 0.01, rng_seed: 0 }).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyValidation { .. }));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let d = numbered(n);
            let spec = SplitSpec { validation_fraction: frac, rng_seed: seed };
            match split_dataset(&d, &spec) {
                Ok((val, rest)) => {
                    prop_assert_eq!(val.len() + rest.len(), n);
                    let mut seen: Vec<&str> = val.examples().iter().chain(rest.examples()).map(|e| e.text.as_str()).collect();
                    seen.sort();
                    seen.dedup();
                    prop_assert_eq!(seen.len(), n);
                }
                Err(DatasetError::EmptyValidation { .. }) | Err(DatasetError::EmptyRemainder { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
