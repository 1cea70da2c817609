//! Offline summary of a run record.

use std::fmt::Write;

use crate::evaluator::ScoredPrompt;
use crate::optimizer::{select_top, RunRecord};

pub fn percent(accuracy: f64) -> String {
    format!("{:.2}%", accuracy * 100.0)
}

pub fn delta_pp(from: f64, to: f64) -> String {
    let d = ((to - from) * 100.0 * 100.0).round() / 100.0 + 0.0;
    format!("{d:+.2} pp")
}

/// Best entry under the selection order (accuracy, then shorter text).
fn best_of<'a>(items: impl Iterator<Item = &'a ScoredPrompt>) -> Option<ScoredPrompt> {
    let items: Vec<ScoredPrompt> = items.cloned().collect();
    select_top(&items, 1).into_iter().next()
}

/// Renders per-iteration statistics, the best-seed versus best-optimized
/// comparison, and budget usage.
pub fn render_report(record: &RunRecord) -> Result<String, String> {
    let first = record.iterations.first().ok_or("no iterations in run record")?;
    let mut out = String::new();
    let h = &record.header;
    let _ = writeln!(out, "run record v{} | dataset {} | eval set {}", h.version, h.dataset_id, h.eval_set_id);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<10} {:>7} {:>9} {:>9}  selected", "iteration", "scored", "best", "mean");
    for it in &record.iterations {
        let (best, mean) = if it.scored.is_empty() {
            ("-".to_string(), "-".to_string())
        } else {
            let best = best_of(it.scored.iter()).map(|s| percent(s.accuracy)).unwrap_or_default();
            let mean = it.scored.iter().map(|s| s.accuracy).sum::<f64>() / it.scored.len() as f64;
            (best, percent(mean))
        };
        let flag = if it.partial { " (partial)" } else { "" };
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>9} {:>9}  {}{flag}",
            it.iteration,
            it.scored.len(),
            best,
            mean,
            it.selected_ids.join(", ")
        );
    }

    let seed_ids: Vec<&str> = first.seeds.iter().map(|s| s.id()).collect();
    let baseline = best_of(first.seed_scores());
    let optimized = best_of(
        record
            .iterations
            .iter()
            .flat_map(|it| it.scored.iter())
            .filter(|s| !seed_ids.contains(&s.template.id())),
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<24} {:<16} {:>9}", "prompt", "id", "accuracy");
    let row = |label: &str, s: Option<&ScoredPrompt>| match s {
        Some(s) => format!("{label:<24} {:<16} {:>9}", s.template.id(), percent(s.accuracy)),
        None => format!("{label:<24} {:<16} {:>9}", "-", "n/a"),
    };
    let _ = writeln!(out, "{}", row("Best Seed Prompt", baseline.as_ref()));
    let _ = writeln!(out, "{}", row("Best Optimized Prompt", optimized.as_ref()));
    if let (Some(b), Some(o)) = (&baseline, &optimized) {
        let _ = writeln!(out, "{:<24} {:<16} {:>9}", "delta", "", delta_pp(b.accuracy, o.accuracy));
    }

    let u = record.total_usage();
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "budget: {} of {} calls, {} of {} tokens ({} prompt, {} completion)",
        u.calls,
        h.budget.max_calls,
        u.total_tokens(),
        h.budget.max_total_tokens,
        u.prompt_tokens,
        u.completion_tokens
    );
    if let Some(r) = record.stop_reason() {
        let _ = writeln!(out, "stopped: {}", serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default());
    }
    Ok(out)
}
