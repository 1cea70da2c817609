//! Application configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeKind, DecodeStrategy};
use crate::domain::{DatasetFormat, SplitSpec};
use crate::encoder::{EncoderSpec, ToySpaceSpec};
use crate::evaluator::EvalConfig;
use crate::explorer::ExplorationPolicy;
use crate::gateway::mock::MockProfile;
use crate::gateway::{BackendConfig, BackendKind};
use crate::optimizer::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: SplitSpec,
    pub encoder: EncoderSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<ProjectorSection>,
    pub decoder: DecoderSection,
    #[serde(default)]
    pub explorer: ExplorationPolicy,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    pub evaluator: EvalConfig,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DatasetFormat>,
    /// Held-out test file; without it the part of `path` left after the
    /// validation split serves as the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSection {
    Toy {
        parameters: ToySpaceSpec,
        #[serde(default)]
        normalize: bool,
    },
    Backend {
        #[serde(flatten)]
        spec: EncoderSpec,
        backend: BackendConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSection {
    #[serde(flatten)]
    pub strategy: DecodeStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub select_n: usize,
    pub max_iterations: usize,
    pub patience: usize,
    pub keep_seeds: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            select_n: d.select_n,
            max_iterations: d.max_iterations,
            patience: d.patience,
            keep_seeds: d.keep_seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub max_calls: u64,
    pub max_total_tokens: u64,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            max_calls: 5_000,
            max_total_tokens: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl AppConfig {
    /// Parses TOML and makes relative paths relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.dataset.path = resolve(base, &cfg.dataset.path);
        if let Some(t) = &mut cfg.dataset.test_path {
            *t = resolve(base, t);
        }
        if let Some(p) = &mut cfg.projector {
            p.path = resolve(base, &p.path);
        }
        if let Some(c) = &mut cfg.evaluator.cache_path {
            *c = resolve(base, c);
        }
        cfg.output.dir = resolve(base, &cfg.output.dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn toy_space(&self) -> Option<&ToySpaceSpec> {
        match &self.encoder {
            EncoderSection::Toy { parameters, .. } => Some(parameters),
            EncoderSection::Backend { .. } => None,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            policy: self.explorer.clone(),
            select_n: self.optimizer.select_n,
            max_iterations: self.optimizer.max_iterations,
            patience: self.optimizer.patience,
            keep_seeds: self.optimizer.keep_seeds,
        }
    }

    pub fn dataset_format(&self) -> DatasetFormat {
        self.dataset.format.unwrap_or_else(|| DatasetFormat::from_path(&self.dataset.path))
    }

    fn backends(&self) -> Vec<(&'static str, &BackendConfig)> {
        let mut out = vec![
            ("evaluator.task_backend", &self.evaluator.task_backend),
            ("evaluator.extraction_backend", &self.evaluator.extraction_backend),
        ];
        if let Some(b) = &self.decoder.backend {
            out.push(("decoder.backend", b));
        }
        if let EncoderSection::Backend { backend, .. } = &self.encoder {
            out.push(("encoder.backend", backend));
        }
        out
    }

    /// Every problem found, so they can be reported together.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.dataset.path.is_file() {
            out.push(format!("dataset.path {} does not exist", self.dataset.path.display()));
        }
        if let Some(t) = self.dataset.test_path.as_ref().filter(|t| !t.is_file()) {
            out.push(format!("dataset.test_path {} does not exist", t.display()));
        }
        if let Some(p) = self.projector.as_ref().filter(|p| !p.path.is_file()) {
            out.push(format!("projector.path {} does not exist", p.path.display()));
        }
        let f = self.split.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            out.push(format!("split.validation_fraction {f} must lie strictly between 0 and 1"));
        }
        if let EncoderSection::Backend { spec, backend } = &self.encoder {
            if spec.dimension == 0 {
                out.push("encoder.dimension must be positive".into());
            }
            if backend.kind == BackendKind::RemoteChat {
                out.push("encoder.backend must be an embedding backend".into());
            }
        }
        out.extend(self.decoder.strategy.problems().into_iter().map(|p| format!("decoder: {p}")));
        match self.decoder.strategy.kind {
            DecodeKind::ToyInverse if self.toy_space().is_none() => {
                out.push("decoder kind toy_inverse needs the toy encoder".into());
            }
            DecodeKind::AnchorBlend | DecodeKind::SoftPrompt if self.decoder.backend.is_none() => {
                out.push(format!("decoder kind {:?} needs decoder.backend", self.decoder.strategy.kind));
            }
            _ => {}
        }
        if self.decoder.strategy.kind == DecodeKind::SoftPrompt {
            if self.projector.is_none() && self.toy_space().is_none() {
                out.push("decoder kind soft_prompt needs projector.path".into());
            }
            if self.decoder.backend.as_ref().is_some_and(|b| b.kind != BackendKind::Mock) {
                out.push("decoder kind soft_prompt needs a backend that accepts vectors; remote chat backends do not".into());
            }
        }
        for (name, b) in self.backends() {
            out.extend(b.problems().into_iter().map(|p| format!("{name}: {p}")));
            if let Some(MockProfile::Toy { target }) = &b.mock {
                match self.toy_space() {
                    None => out.push(format!("{name}: the toy mock profile needs the toy encoder")),
                    Some(s) if s.dimension() != target.len() => out.push(format!(
                        "{name}: toy target has {} coordinates, toy space has {}",
                        target.len(),
                        s.dimension()
                    )),
                    Some(_) => {}
                }
            }
        }
        let e = &self.evaluator;
        if e.max_examples == 0 {
            out.push("evaluator.max_examples must be at least 1".into());
        }
        if !(e.temperature.is_finite() && e.temperature >= 0.0) {
            out.push(format!("evaluator.temperature {} must be finite and non-negative", e.temperature));
        }
        if self.budget.max_calls == 0 || self.budget.max_total_tokens == 0 {
            out.push("budget limits must be positive".into());
        }
        out.extend(self.explorer.problems().into_iter().map(|p| format!("explorer: {p}")));
        let o = &self.optimizer;
        if o.select_n == 0 {
            out.push("optimizer.select_n must be positive".into());
        }
        if o.max_iterations == 0 {
            out.push("optimizer.max_iterations must be positive".into());
        }
        out
    }
}

/// Commented default configuration printed by `config init`.
pub const DEFAULT_CONFIG: &str = r#"# Prompt optimizer configuration. Relative paths are resolved against the
# directory containing this file. Secrets never go here: remote backends
# read their API key from the environment variable named by `auth_env`
# (default LPO_API_KEY), and LPO_ENDPOINT overrides every `endpoint`.

[dataset]
# JSONL lines {"text": ..., "label": ...} or CSV with header `text,label`.
path = "data/train.jsonl"
# format = "jsonl"            # inferred from the extension when omitted
# test_path = "data/test.jsonl"   # default: examples left after the split
labels = ["positive", "negative", "neutral"]

[split]
validation_fraction = 0.1     # share of `path` used for scoring prompts
rng_seed = 0

[encoder]
kind = "backend"              # "backend" or "toy"
dimension = 1024
normalize = false
[encoder.backend]
kind = "remote_embed"
endpoint = "http://localhost:8000/v1"
model_name = "text-embedding-model"
timeout_ms = 60000
max_in_flight = 4
retry = { max_attempts = 3, backoff_base_ms = 500 }

# [projector]
# path = "projector.txt"      # written by `lpo fit-projector`

[decoder]
kind = "anchor_blend"         # "anchor_blend", "soft_prompt" or "toy_inverse"
decode_temperature = 0.7
refinement_temperature = 0.0
[decoder.backend]
kind = "remote_chat"
endpoint = "http://localhost:8000/v1"
model_name = "chat-model"

[explorer]
candidate_count = 15
rng_seed = 0
lambda_range = [0.35, 0.65]       # interpolation weights
extrapolation_below = [-0.5, 0.0] # [lo, hi)
extrapolation_above = [1.0, 1.5]  # (lo, hi]
# sigma = 0.05                    # default: 0.1 x mean seed norm
strategy_mix = { interpolate = 1.0, extrapolate = 0.0, perturb = 0.0 }

[optimizer]
select_n = 3
max_iterations = 1
patience = 1                  # iterations without improvement before stopping
keep_seeds = true             # seeds compete with candidates

[evaluator]
max_examples = 200
temperature = 0.0
max_tokens = 256
cache_path = "cache/responses.jsonl"
[evaluator.task_backend]
kind = "remote_chat"
endpoint = "http://localhost:8000/v1"
model_name = "chat-model"
[evaluator.extraction_backend]
kind = "remote_chat"
endpoint = "http://localhost:8000/v1"
model_name = "chat-model"

[budget]
max_calls = 5000
max_total_tokens = 5000000

[output]
dir = "runs"
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses() {
        let cfg = AppConfig::from_toml(DEFAULT_CONFIG, Path::new("/base")).unwrap();
        assert_eq!(cfg.dataset.path, Path::new("/base/data/train.jsonl"));
        assert_eq!(cfg.explorer.candidate_count, 15);
        assert_eq!(cfg.optimizer_config().select_n, 3);
        assert_eq!(cfg.decoder.strategy.kind, DecodeKind::AnchorBlend);
        // only the missing dataset file is wrong
        let problems = cfg.problems();
        assert_eq!(problems.len(), 1, "{problems:?}");
    }

    #[test]
    fn problems_are_listed_together() {
        let text = DEFAULT_CONFIG
            .replace("select_n = 3", "select_n = 0")
            .replace("validation_fraction = 0.1", "validation_fraction = 1.5")
            .replace("kind = \"anchor_blend\"", "kind = \"toy_inverse\"");
        let cfg = AppConfig::from_toml(&text, Path::new("/base")).unwrap();
        assert!(cfg.problems().len() >= 4, "{:?}", cfg.problems());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for section in ["[split]", "[encoder]", "[explorer]", "[evaluator]"] {
            let text = DEFAULT_CONFIG.replacen(section, &format!("{section}\nbogus = 1"), 1);
            assert!(AppConfig::from_toml(&text, Path::new(".")).is_err(), "{section}");
        }
    }
}
