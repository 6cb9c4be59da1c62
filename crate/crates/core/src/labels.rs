//! Text helpers shared by the response validator, the explicit-label
//! annotator and the metrics: bracketed strategy labels, scaffold markers,
//! milestone blocks and numbered agenda lists.

use crate::model::{PrincipleTag, ScaffoldKind, Strategy, StrategyTag};
use crate::prompt::{PromptBundle, CURRENT_PHASE_PREFIX, MILESTONE_HEADER};

/// Strategy labels written as `[Name]`, in order of appearance, with duplicates kept.
///
/// Matching is case-insensitive; bracketed text that is not a strategy name
/// (e.g. `[insert question]`, `[Phase 1]`) is ignored.
pub fn bracket_labels(text: &str) -> Vec<Strategy> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(']') else { break };
        let inner = &after[..close];
        if !inner.contains('[') {
            if let Ok(s) = inner.parse::<Strategy>() {
                out.push(s);
            }
            rest = &after[close + 1..];
        } else {
            rest = after;
        }
    }
    out
}

/// Distinct labels in first-appearance order.
pub fn distinct_labels(text: &str) -> Vec<Strategy> {
    let mut out: Vec<Strategy> = Vec::new();
    for s in bracket_labels(text) {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Infers the scaffolding sub-kind from the marker written after a
/// `[Scaffolding]` label ("Hints:", "Principles:", "Knowledge/Resources:").
pub fn scaffold_kind(text: &str) -> Option<ScaffoldKind> {
    let lower = text.to_lowercase();
    let tail = match lower.find("[scaffolding]") {
        Some(i) => &lower[i + "[scaffolding]".len()..],
        None => lower.as_str(),
    };
    let candidates = [
        (ScaffoldKind::Hint, "hint"),
        (ScaffoldKind::Principle, "principle"),
        (ScaffoldKind::KnowledgeResource, "knowledge"),
        (ScaffoldKind::KnowledgeResource, "resource"),
    ];
    candidates
        .iter()
        .filter_map(|(kind, marker)| tail.find(marker).map(|pos| (pos, *kind)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, kind)| kind)
}

/// Strategy tags for one turn, with scaffolding sub-kinds resolved.
///
/// A `[Scaffolding]` label with no recognizable marker counts as a hint.
pub fn strategy_tags(text: &str) -> Vec<StrategyTag> {
    distinct_labels(text)
        .into_iter()
        .map(|s| match s {
            Strategy::Scaffolding => {
                StrategyTag::scaffolding(scaffold_kind(text).unwrap_or(ScaffoldKind::Hint))
            }
            other => StrategyTag::plain(other),
        })
        .collect()
}

/// Principles signalled by their emoji or by their name used as a marker
/// (`(Verbalize)`, `**Generalize**`, `Exemplify:`).
pub fn principle_markers(text: &str, bundle: &PromptBundle) -> Vec<PrincipleTag> {
    let mut out = Vec::new();
    for spec in &bundle.principles.entries {
        let name = spec.tag.as_str();
        let marked = text.contains(spec.emoji.as_str())
            || [
                format!("({name})"),
                format!("**{name}**"),
                format!("{name}:"),
                format!("[{name}]"),
            ]
            .iter()
            .any(|m| text.contains(m.as_str()));
        if marked {
            out.push(spec.tag);
        }
    }
    out
}

/// Byte range of the milestone overview block, from its header line through
/// the "We're currently in:" line.
pub fn milestone_span(text: &str) -> Option<(usize, usize)> {
    let start = text.find(MILESTONE_HEADER)?;
    let rel = text[start..].find(CURRENT_PHASE_PREFIX)?;
    let line_start = start + rel;
    let end = text[line_start..]
        .find('\n')
        .map(|n| line_start + n + 1)
        .unwrap_or(text.len());
    Some((start, end))
}

pub fn strip_milestone(text: &str) -> String {
    match milestone_span(text) {
        Some((a, b)) => format!("{}{}", &text[..a], &text[b..]),
        None => text.to_string(),
    }
}

/// Items of a numbered list ("1. ...", "2) ...") in document order.
pub fn numbered_items(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start().trim_start_matches("**");
        let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() || digits.len() > 2 {
            continue;
        }
        let rest = &trimmed[digits.len()..];
        let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        let item = rest.trim().trim_end_matches("**").trim();
        let item = item.trim_end_matches(['”', '"']).trim();
        if !item.is_empty() {
            out.push(item.to_string());
        }
    }
    out
}

/// Removes text enclosed in double quotes (straight or curly).
pub fn strip_quoted(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut closing: Option<char> = None;
    for c in text.chars() {
        match closing {
            Some(end) if c == end || (end == '"' && c == '”') => closing = None,
            Some(_) => {}
            None if c == '"' => closing = Some('"'),
            None if c == '“' => closing = Some('”'),
            None => out.push(c),
        }
    }
    out
}

/// Splits prose into sentences on `.`, `!`, `?` and line breaks.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c == '\n' {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_case_insensitive_and_ignore_placeholders() {
        let t = "[Phase 1] [scoping] So... [insert question] then [Coaching] and [Coaching]";
        assert_eq!(bracket_labels(t), vec![Strategy::Scoping, Strategy::Coaching, Strategy::Coaching]);
        assert_eq!(distinct_labels(t), vec![Strategy::Scoping, Strategy::Coaching]);
    }

    #[test]
    fn nested_brackets_do_not_hide_labels() {
        assert_eq!(bracket_labels("[[Modeling]"), vec![Strategy::Modeling]);
    }

    #[test]
    fn scaffold_markers() {
        assert_eq!(
            strategy_tags("[Scaffolding] Hints: The first thing to do is…"),
            vec![StrategyTag::scaffolding(ScaffoldKind::Hint)]
        );
        assert_eq!(
            scaffold_kind("[Scaffolding] Knowledge/Resources: parallel coordinates..."),
            Some(ScaffoldKind::KnowledgeResource)
        );
        assert_eq!(scaffold_kind("[Scaffolding] Principles: alignment"), Some(ScaffoldKind::Principle));
    }

    #[test]
    fn numbered_list() {
        let t = "**So, here's my understanding of your questions:**\n\n1. Does the color make sense?\n2) Can the layout improve?”\nDoes that match?";
        assert_eq!(numbered_items(t), vec!["Does the color make sense?", "Can the layout improve?"]);
    }

    #[test]
    fn milestone_is_stripped() {
        let t = "Design Mentorship Process:\n- 🔄 A\n- ⬜ B\n- ⬜ C\n\nWe're currently in: A\n\nHello there.";
        assert_eq!(strip_milestone(t), "\nHello there.");
        assert_eq!(strip_milestone("no block"), "no block");
    }

    #[test]
    fn quoted_text_removed() {
        assert_eq!(strip_quoted("You asked \"is this right?\" ok"), "You asked  ok");
        assert_eq!(strip_quoted("a “b?” c"), "a  c");
        assert_eq!(strip_quoted("What's up?"), "What's up?");
    }
}
