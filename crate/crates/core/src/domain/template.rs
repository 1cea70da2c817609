use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The literal input placeholder every template must carry exactly once.
pub const PLACEHOLDER: &str = "{text}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template is blank")]
    Blank,
    #[error("template has no \"{{text}}\" placeholder")]
    MissingPlaceholder,
    #[error("template has {0} \"{{text}}\" placeholders, expected exactly one")]
    MultiplePlaceholders(usize),
}

/// Where a template came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrigin {
    Seed,
    Decoded,
    Refined,
}

/// An instruction prompt with exactly one input placeholder.
///
/// Construct through [`validate_template`] or [`PromptTemplate::new`]; the
/// placeholder invariant is rechecked on deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PromptTemplate {
    id: String,
    text: String,
    origin: PromptOrigin,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        origin: PromptOrigin,
    ) -> Result<Self, TemplateError> {
        let text = text.into();
        check_text(&text)?;
        Ok(Self {
            id: id.into(),
            text,
            origin,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> PromptOrigin {
        self.origin
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_origin(mut self, origin: PromptOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn render(&self, input_text: &str) -> String {
        render_prompt(self, input_text)
    }
}

impl<'de> Deserialize<'de> for PromptTemplate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            text: String,
            #[serde(default = "seed_origin")]
            origin: PromptOrigin,
        }
        fn seed_origin() -> PromptOrigin {
            PromptOrigin::Seed
        }
        let raw = Raw::deserialize(deserializer)?;
        PromptTemplate::new(raw.id, raw.text, raw.origin).map_err(serde::de::Error::custom)
    }
}

fn check_text(text: &str) -> Result<(), TemplateError> {
    if text.trim().is_empty() {
        return Err(TemplateError::Blank);
    }
    match text.matches(PLACEHOLDER).count() {
        0 => Err(TemplateError::MissingPlaceholder),
        1 => Ok(()),
        n => Err(TemplateError::MultiplePlaceholders(n)),
    }
}

/// Checks placeholder count and blankness, producing a seed-origin template
/// with an empty id.
pub fn validate_template(text: &str) -> Result<PromptTemplate, TemplateError> {
    PromptTemplate::new("", text, PromptOrigin::Seed)
}

/// Substitutes the single placeholder with `input_text`. The input is inserted
/// literally, so placeholders inside it are not expanded.
pub fn render_prompt(template: &PromptTemplate, input_text: &str) -> String {
    // invariant guarantees exactly one match
    let (head, tail) = template
        .text
        .split_once(PLACEHOLDER)
        .expect("validated template carries a placeholder");
    let mut out = String::with_capacity(head.len() + input_text.len() + tail.len());
    out.push_str(head);
    out.push_str(input_text);
    out.push_str(tail);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_single_placeholder() {
        let t = validate_template("Classify: {text}").unwrap();
        assert_eq!(render_prompt(&t, "good day"), "Classify: good day");
    }

    #[test]
    fn input_placeholder_is_not_expanded() {
        let t = validate_template("A {text} B").unwrap();
        assert_eq!(render_prompt(&t, "x {text} y"), "A x {text} y B");
    }

    #[test]
    fn empty_input_removes_placeholder() {
        let t = validate_template("Classify: {text}").unwrap();
        assert_eq!(render_prompt(&t, ""), "Classify: ");
    }

    #[test]
    fn validation_errors_are_distinct() {
        assert!(validate_template("Label {text} now").is_ok());
        assert_eq!(
            validate_template("Label now").unwrap_err(),
            TemplateError::MissingPlaceholder
        );
        assert_eq!(
            validate_template("{text} vs {text}").unwrap_err(),
            TemplateError::MultiplePlaceholders(2)
        );
        assert_eq!(validate_template("  \n\t").unwrap_err(), TemplateError::Blank);
    }

    #[test]
    fn deserialize_rechecks_invariant() {
        let bad: Result<PromptTemplate, _> =
            serde_json::from_str(r#"{"id":"a","text":"no placeholder"}"#);
        assert!(bad.is_err());
        let ok: PromptTemplate = serde_json::from_str(r#"{"id":"a","text":"x {text}"}"#).unwrap();
        assert_eq!(ok.origin(), PromptOrigin::Seed);
    }

    proptest! {
        #[test]
        fn rendered_contains_input_and_no_placeholder(
            head in "[a-zA-Z :]{0,20}",
            tail in "[a-zA-Z .]{0,20}",
            input in "[a-z0-9 ]{0,30}",
        ) {
            let t = validate_template(&format!("{head}{{text}}{tail}x")).unwrap();
            let out = render_prompt(&t, &input);
            prop_assert!(out.contains(&input));
            prop_assert!(!out.contains(PLACEHOLDER));
        }
    }
}
