//! Instruction texts sent to the chat backend. The texts live in
//! `fixtures/prompts/` and are versioned with the crate.

pub const BLEND: &str = include_str!("../fixtures/prompts/blend.txt");
pub const VARY: &str = include_str!("../fixtures/prompts/vary.txt");
pub const PARAPHRASE: &str = include_str!("../fixtures/prompts/paraphrase.txt");
pub const REFINE: &str = include_str!("../fixtures/prompts/refine.txt");
pub const EXTRACT: &str = include_str!("../fixtures/prompts/extract.txt");

/// Single-pass `{key}` substitution. Unknown keys (notably `{text}`) and
/// braces inside substituted values are left alone.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (key, value) in slots {
            if let Some(tail) = after.strip_prefix(key).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = tail;
                continue 'scan;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

/// Text between the `### <name>` line and the next `### ` line.
pub fn section<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let marker = format!("### {name}\n");
    let start = text.find(&marker)? + marker.len();
    let body = &text[start..];
    let end = body.find("\n### ").unwrap_or(body.len());
    Some(&body[..end])
}
