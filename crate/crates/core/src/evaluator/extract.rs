//! Deterministic label extraction from free-form model output.

use std::sync::LazyLock;

use regex::Regex;

pub const UNPARSED: &str = "unparsed";

static FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"["']?\b(?:sentiment|label)\b["']?\s*[:=]\s*["']?([^"',\n}\]]+)"#).expect("valid regex")
});

fn whole_word(haystack: &str, word: &str) -> bool {
    Regex::new(&format!(r"\b{}\b", regex::escape(word)))
        .map(|re| re.is_match(haystack))
        .unwrap_or(false)
}

/// Stage one: a `sentiment`/`label` field holding a label, else exactly one
/// label occurring as a whole word. `labels` must be lowercase.
pub fn extract_deterministic(raw: &str, labels: &[String]) -> Option<String> {
    let lower = raw.to_lowercase();
    for cap in FIELD.captures_iter(&lower) {
        let value = cap[1].trim();
        if let Some(l) = labels.iter().find(|l| l.as_str() == value) {
            return Some(l.clone());
        }
    }
    let mut hits = labels.iter().filter(|l| whole_word(&lower, l));
    match (hits.next(), hits.next()) {
        (Some(one), None) => Some(one.clone()),
        _ => None,
    }
}

/// Matches the extraction model's short answer against the label set.
pub fn match_answer(answer: &str, labels: &[String]) -> Option<String> {
    let cleaned = answer
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if let Some(l) = labels.iter().find(|l| **l == cleaned) {
        return Some(l.clone());
    }
    extract_deterministic(answer, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        ["positive", "negative", "neutral"].map(String::from).to_vec()
    }

    #[test]
    fn single_whole_word() {
        assert_eq!(
            extract_deterministic("Sentiment: Positive\nReason: strong earnings", &labels()).as_deref(),
            Some("positive")
        );
        assert_eq!(extract_deterministic("it is NEUTRAL.", &labels()).as_deref(), Some("neutral"));
    }

    #[test]
    fn json_field_wins_over_other_mentions() {
        let raw = r#"{"label": "Negative", "evidence": ["not positive at all"]}"#;
        assert_eq!(extract_deterministic(raw, &labels()).as_deref(), Some("negative"));
    }

    #[test]
    fn ambiguous_or_absent_is_none() {
        assert_eq!(extract_deterministic("The tone is mixed but leans upbeat", &labels()), None);
        assert_eq!(extract_deterministic("positive or negative", &labels()), None);
        assert_eq!(extract_deterministic("positively", &labels()), None);
    }

    #[test]
    fn answers_are_matched_loosely() {
        assert_eq!(match_answer(" \"Positive\". ", &labels()).as_deref(), Some("positive"));
        assert_eq!(match_answer("unparsed", &labels()), None);
    }
}
