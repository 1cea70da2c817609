//! Shared domain types: prompt templates, embedding vectors and datasets.

mod dataset;
mod template;
mod vector;

pub use dataset::{load_dataset, split_dataset, Dataset, DatasetError, DatasetFormat, Example, SplitSpec};
pub use template::{
    render_prompt, validate_template, PromptOrigin, PromptTemplate, TemplateError, PLACEHOLDER,
};
pub use vector::{EmbeddingVector, ProjectedVector, VectorError};

/// Label comparison key: trimmed and lowercased.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}
