//! Deterministic renderings of a [`ComparisonReport`]: CSV, Markdown, JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::metrics::{act_rows, level_rows, occurrence_rows, ComparisonReport};
use crate::model::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (csv|markdown|json)")),
        }
    }
}

/// Reference values from the original human study, shown for orientation only.
pub const REFERENCE_LABEL: &str = "published human study (not a reproduction target)";

/// (measure, mentor, baseline) as printed in the study's discourse-structure table.
pub const REFERENCE_DISCOURSE: [(&str, f64, f64); 4] = [
    ("# of turns", 6.2, 3.1),
    ("# of follow-up questions", 2.4, 0.7),
    ("# word in AI responses", 178.0, 67.0),
    ("# word in user responses", 156.0, 287.0),
];

const CONDITIONS: [Condition; 2] = [Condition::Mentor, Condition::Baseline];

pub fn export_report(report: &ComparisonReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Markdown => to_markdown(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn from_json(text: &str) -> Result<ComparisonReport, serde_json::Error> {
    serde_json::from_str(text)
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn discourse_values(report: &ComparisonReport, c: Condition) -> [Option<f64>; 4] {
    let Some(p) = report.conditions.get(&c) else {
        return [None; 4];
    };
    [
        Some(p.panel_b.turns),
        p.panel_b.followup_questions,
        p.panel_b.mentor_words,
        p.panel_b.mentee_words,
    ]
}

const DISCOURSE_KEYS: [&str; 4] = ["turns", "followup_questions", "mentor_words", "mentee_words"];

/// Columns: `panel,category,code,mentor,baseline`.
pub fn to_csv(report: &ComparisonReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["panel", "category", "code", "mentor", "baseline"]).expect("in-memory write");
    let count = |c: Condition, f: &dyn Fn(&crate::metrics::ConditionPanels) -> String| {
        report.conditions.get(&c).map(f).unwrap_or_default()
    };
    w.write_record([
        "n",
        "sessions",
        "n_sessions",
        &count(Condition::Mentor, &|p| p.n_sessions.to_string()),
        &count(Condition::Baseline, &|p| p.n_sessions.to_string()),
    ])
    .expect("in-memory write");
    for (cat, code) in occurrence_rows() {
        let v = |c| count(c, &|p| p.panel_a.get(&code).copied().unwrap_or(0).to_string());
        w.write_record(["a", cat, &code, &v(Condition::Mentor), &v(Condition::Baseline)])
            .expect("in-memory write");
    }
    let m = discourse_values(report, Condition::Mentor);
    let b = discourse_values(report, Condition::Baseline);
    for (i, key) in DISCOURSE_KEYS.iter().enumerate() {
        w.write_record(["b", "discourse", key, &fmt_mean(m[i]), &fmt_mean(b[i])])
            .expect("in-memory write");
    }
    for act in act_rows() {
        let v = |c| count(c, &|p| format!("{:.4}", p.panel_c.get(&act).copied().unwrap_or(0.0)));
        w.write_record(["c", "act", &act, &v(Condition::Mentor), &v(Condition::Baseline)])
            .expect("in-memory write");
    }
    for level in level_rows() {
        let v = |c| count(c, &|p| p.panel_d.get(&level).copied().unwrap_or(0).to_string());
        w.write_record(["d", "level", &level, &v(Condition::Mentor), &v(Condition::Baseline)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn dash_count(n: u64) -> String {
    if n == 0 {
        "--".into()
    } else {
        n.to_string()
    }
}

fn dash_real(x: f64, decimals: usize) -> String {
    if x == 0.0 {
        "--".into()
    } else {
        format!("{x:.decimals$}")
    }
}

fn dash_opt(x: Option<f64>) -> String {
    x.map(|v| dash_real(v, 2)).unwrap_or_else(|| "n/a".into())
}

fn code_label(code: &str) -> String {
    match code.split_once(':') {
        Some((_, kind)) => format!("- {kind}"),
        None => code.to_string(),
    }
}

/// Four-panel Markdown layout. Zero cells render as `--`.
pub fn to_markdown(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let n = |c: Condition| report.conditions.get(&c).map(|p| p.n_sessions).unwrap_or(0);
    let _ = writeln!(out, "# Condition comparison\n");
    let _ = writeln!(
        out,
        "Sessions: mentor n={}, baseline n={}\n",
        n(Condition::Mentor),
        n(Condition::Baseline)
    );

    let _ = writeln!(out, "## (a) Feedback methods, principles and behaviors\n");
    let _ = writeln!(out, "| Category | Code | Mentor | Baseline |");
    let _ = writeln!(out, "|---|---|---:|---:|");
    for (cat, code) in occurrence_rows() {
        let cells: Vec<String> = CONDITIONS
            .iter()
            .map(|c| dash_count(report.conditions.get(c).and_then(|p| p.panel_a.get(&code)).copied().unwrap_or(0)))
            .collect();
        let _ = writeln!(out, "| {cat} | {} | {} | {} |", code_label(&code), cells[0], cells[1]);
    }

    let _ = writeln!(out, "\n## (b) Discourse structure (session means)\n");
    let _ = writeln!(out, "| Measure | Mentor | Baseline |");
    let _ = writeln!(out, "|---|---:|---:|");
    let labels = [
        "Turn-takings",
        "Follow-up questions per mentor turn",
        "Words per mentor turn",
        "Words per mentee turn",
    ];
    let m = discourse_values(report, Condition::Mentor);
    let b = discourse_values(report, Condition::Baseline);
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(out, "| {label} | {} | {} |", dash_opt(m[i]), dash_opt(b[i]));
    }
    for (label, dm, bl) in REFERENCE_DISCOURSE {
        let _ = writeln!(out, "| {REFERENCE_LABEL}: {label} | {dm} | {bl} |");
    }

    let _ = writeln!(out, "\n## (c) Mentee discourse acts (share of coded mentee turns)\n");
    let _ = writeln!(out, "| Act | Mentor | Baseline |");
    let _ = writeln!(out, "|---|---:|---:|");
    for act in act_rows() {
        let cells: Vec<String> = CONDITIONS
            .iter()
            .map(|c| dash_real(report.conditions.get(c).and_then(|p| p.panel_c.get(&act)).copied().unwrap_or(0.0), 3))
            .collect();
        let _ = writeln!(out, "| {act} | {} | {} |", cells[0], cells[1]);
    }

    let _ = writeln!(out, "\n## (d) Feedback levels (nested model)\n");
    let _ = writeln!(out, "| Level | Mentor | Baseline |");
    let _ = writeln!(out, "|---|---:|---:|");
    for level in level_rows() {
        let cells: Vec<String> = CONDITIONS
            .iter()
            .map(|c| dash_count(report.conditions.get(c).and_then(|p| p.panel_d.get(&level)).copied().unwrap_or(0)))
            .collect();
        let _ = writeln!(out, "| {level} | {} | {} |", cells[0], cells[1]);
    }

    let _ = writeln!(out, "\n## Definitions\n");
    for (k, v) in &report.definitions {
        let _ = writeln!(out, "- `{k}`: {v}");
    }
    out
}
