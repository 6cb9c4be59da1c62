//! Discourse structure, codebook occurrence tables, condition comparison
//! and inter-coder agreement.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels;
use crate::model::{
    BehaviorTag, Condition, DiscourseAct, NestedLevel, PrincipleTag, Role, ScaffoldKind, Session, Strategy,
    StrategyTag, Turn,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("sessions without a coding run: {0:?}")]
    UncodedSessions(Vec<String>),
    #[error("no sessions for condition {0}")]
    MissingCondition(Condition),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KappaError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("chance agreement is 1 while observed agreement is below 1")]
    DegenerateMarginals,
}

/// Whitespace tokens after removing the milestone-overview block.
pub fn count_words(text: &str) -> usize {
    labels::strip_milestone(text).split_whitespace().count()
}

/// Question sentences in a mentor turn, ignoring anything inside double quotes.
/// A run of consecutive `?` ends one sentence.
pub fn count_followup_questions(text: &str) -> usize {
    let unquoted = labels::strip_quoted(text);
    let mut count = 0;
    let mut prev_q = false;
    for c in unquoted.chars() {
        let q = c == '?' || c == '？';
        if q && !prev_q {
            count += 1;
        }
        prev_q = q;
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscourseMetrics {
    pub exchange_count: usize,
    pub followup_question_mean: Option<f64>,
    pub mentor_word_mean: Option<f64>,
    pub mentee_word_mean: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn is_feedback_turn(t: &Turn) -> bool {
    t.role == Role::Mentor && !t.scripted
}

/// Per-session discourse structure. Scripted mentor turns (the greeting) are
/// not counted as mentor responses.
pub fn compute_discourse_structure(session: &Session) -> DiscourseMetrics {
    let turns = &session.turns;
    let exchange_count = turns
        .windows(2)
        .filter(|w| w[0].role == Role::Mentee && w[1].role == Role::Mentor)
        .count();
    let mentor: Vec<&Turn> = turns.iter().filter(|t| is_feedback_turn(t)).collect();
    let mentee: Vec<&Turn> = turns.iter().filter(|t| t.role == Role::Mentee).collect();
    let q: Vec<f64> = mentor.iter().map(|t| count_followup_questions(&t.content) as f64).collect();
    let mw: Vec<f64> = mentor.iter().map(|t| count_words(&t.content) as f64).collect();
    let ew: Vec<f64> = mentee.iter().map(|t| count_words(&t.content) as f64).collect();
    DiscourseMetrics {
        exchange_count,
        followup_question_mean: mean(&q),
        mentor_word_mean: mean(&mw),
        mentee_word_mean: mean(&ew),
    }
}

/// Panel (a) row keys in table order.
pub fn occurrence_rows() -> Vec<(&'static str, String)> {
    let mut rows = Vec::new();
    let scaffold_kinds = [ScaffoldKind::Hint, ScaffoldKind::KnowledgeResource, ScaffoldKind::Principle];
    for s in [Strategy::Coaching, Strategy::Modeling, Strategy::Scaffolding] {
        rows.push(("strategy", s.to_string()));
    }
    for k in scaffold_kinds {
        rows.push(("strategy", StrategyTag::scaffolding(k).to_string()));
    }
    for s in [Strategy::Scoping, Strategy::Bounding, Strategy::Articulating, Strategy::Exploring, Strategy::Reflecting] {
        rows.push(("strategy", s.to_string()));
    }
    for p in PrincipleTag::ALL {
        rows.push(("principle", p.to_string()));
    }
    for b in BehaviorTag::ALL {
        rows.push(("behavior", b.to_string()));
    }
    rows
}

pub fn act_rows() -> Vec<String> {
    DiscourseAct::ALL.iter().map(|a| a.to_string()).collect()
}

pub fn level_rows() -> Vec<String> {
    NestedLevel::ALL.iter().map(|l| l.to_string()).collect()
}

fn zero_filled<T: Default + Clone>(keys: impl IntoIterator<Item = String>) -> BTreeMap<String, T> {
    keys.into_iter().map(|k| (k, T::default())).collect()
}

fn require_coded(sessions: &[&Session]) -> Result<(), MetricsError> {
    let uncoded: Vec<String> = sessions
        .iter()
        .filter(|s| s.coding_run.is_none())
        .map(|s| s.id.clone())
        .collect();
    if sessions.is_empty() || !uncoded.is_empty() {
        return Err(MetricsError::UncodedSessions(uncoded));
    }
    Ok(())
}

/// Totals for every strategy (with scaffolding sub-kinds and their sum),
/// principle and behavior over the given sessions.
pub fn occurrence_table(sessions: &[&Session]) -> Result<BTreeMap<String, u64>, MetricsError> {
    require_coded(sessions)?;
    let mut table: BTreeMap<String, u64> = zero_filled(occurrence_rows().into_iter().map(|(_, k)| k));
    for s in sessions {
        for t in &s.turns {
            let Some(a) = &t.annotation else { continue };
            for tag in &a.strategies {
                *table.entry(tag.to_string()).or_default() += 1;
                if tag.value == Strategy::Scaffolding {
                    *table.entry(Strategy::Scaffolding.to_string()).or_default() += 1;
                }
            }
            for b in &a.behaviors {
                *table.entry(b.to_string()).or_default() += 1;
            }
            for p in &a.principles {
                *table.entry(p.to_string()).or_default() += 1;
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscourseMeans {
    /// Mean turn-takings (replied-to mentee messages) per session.
    pub turns: f64,
    pub followup_questions: Option<f64>,
    pub mentor_words: Option<f64>,
    pub mentee_words: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPanels {
    pub n_sessions: usize,
    pub panel_a: BTreeMap<String, u64>,
    pub panel_b: DiscourseMeans,
    pub panel_c: BTreeMap<String, f64>,
    pub panel_d: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub conditions: BTreeMap<Condition, ConditionPanels>,
    /// Operational definitions behind each measure.
    pub definitions: BTreeMap<String, String>,
}

pub fn definitions() -> BTreeMap<String, String> {
    [
        ("turns", "mentee messages immediately followed by a mentor reply; session value averaged across sessions"),
        ("followup_questions", "question sentences per non-scripted mentor turn, counted as runs of '?' outside double quotes"),
        ("mentor_words", "whitespace tokens per non-scripted mentor turn, milestone overview block removed"),
        ("mentee_words", "whitespace tokens per mentee turn"),
        ("panel_a", "tag occurrences pooled over coded turns; Scaffolding is the sum of its sub-kinds"),
        ("panel_c", "share of coded mentee turns per discourse act, pooled across sessions; all zero when no turn is coded"),
        ("panel_d", "feedback items per nested-model level, pooled across sessions"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    mean(&v)
}

fn panels(sessions: &[&Session]) -> Result<ConditionPanels, MetricsError> {
    let panel_a = occurrence_table(sessions)?;
    let per_session: Vec<DiscourseMetrics> = sessions.iter().map(|s| compute_discourse_structure(s)).collect();
    let panel_b = DiscourseMeans {
        turns: mean(&per_session.iter().map(|m| m.exchange_count as f64).collect::<Vec<_>>()).unwrap_or(0.0),
        followup_questions: mean_opt(per_session.iter().map(|m| m.followup_question_mean)),
        mentor_words: mean_opt(per_session.iter().map(|m| m.mentor_word_mean)),
        mentee_words: mean_opt(per_session.iter().map(|m| m.mentee_word_mean)),
    };

    let mut act_counts: BTreeMap<String, u64> = zero_filled(act_rows());
    let mut panel_d: BTreeMap<String, u64> = zero_filled(level_rows());
    for s in sessions {
        for t in &s.turns {
            let Some(a) = &t.annotation else { continue };
            if let Some(act) = a.discourse_act {
                *act_counts.entry(act.to_string()).or_default() += 1;
            }
            for l in &a.feedback_levels {
                *panel_d.entry(l.to_string()).or_default() += 1;
            }
        }
    }
    let total: u64 = act_counts.values().sum();
    let panel_c = act_counts
        .into_iter()
        .map(|(k, n)| (k, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
        .collect();

    Ok(ConditionPanels {
        n_sessions: sessions.len(),
        panel_a,
        panel_b,
        panel_c,
        panel_d,
    })
}

/// Builds the four-panel comparison. Every condition needs at least one
/// session and every session must be coded.
pub fn compare_conditions(sessions: &[Session]) -> Result<ComparisonReport, MetricsError> {
    let refs: Vec<&Session> = sessions.iter().collect();
    require_coded(&refs)?;
    let mut conditions = BTreeMap::new();
    for c in Condition::ALL {
        let subset: Vec<&Session> = sessions.iter().filter(|s| s.condition == c).collect();
        if subset.is_empty() {
            return Err(MetricsError::MissingCondition(c));
        }
        conditions.insert(c, panels(&subset)?);
    }
    Ok(ComparisonReport {
        conditions,
        definitions: definitions(),
    })
}

/// Cohen's kappa for two aligned label sequences.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64, KappaError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let p_o = agree / n;
    if agree == n {
        return Ok(1.0);
    }
    let mut ma: HashMap<&T, f64> = HashMap::new();
    let mut mb: HashMap<&T, f64> = HashMap::new();
    for x in a {
        *ma.entry(x).or_default() += 1.0;
    }
    for y in b {
        *mb.entry(y).or_default() += 1.0;
    }
    let p_e: f64 = ma
        .iter()
        .map(|(k, ca)| ca * mb.get(k).copied().unwrap_or(0.0))
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(KappaError::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words() {
        assert_eq!(count_words(""), 0);
        assert_eq!(count_words("a  b\nc"), 3);
    }

    #[test]
    fn questions() {
        assert_eq!(count_followup_questions("Here is a suggestion."), 0);
        assert_eq!(count_followup_questions("Does that help? What's your audience?"), 2);
        assert_eq!(count_followup_questions("You asked \"is this right?\", let's see."), 0);
        assert_eq!(count_followup_questions("Really?? Yes."), 1);
    }

    #[test]
    fn kappa_hand_case() {
        let k = cohens_kappa(&["A", "A", "B", "B"], &["A", "B", "A", "B"]).unwrap();
        assert!(k.abs() < 1e-12);
        assert_eq!(cohens_kappa(&["x", "y"], &["x", "y"]).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&["x"], &["x", "y"]), Err(KappaError::LengthMismatch(1, 2)));
    }
}
