//! Synthetic coded transcripts with ground truth tallied while generating.
//! The truth never reads the generated text back, so it serves as an
//! oracle for the metrics module.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use mentor_core::model::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "the", "chart", "bars", "colour", "axis", "reader", "sort", "legend", "title", "scale", "data", "trend",
    "compare", "region", "sales", "maybe", "could", "we", "it", "shows", "label", "value",
];

const MILESTONE: &str = "Design Mentorship Process:\n- ✅ one\n- ➡️ two\n- ⬜️ three\nWe're currently in: two\n";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionTruth {
    pub exchanges: usize,
    /// Follow-up questions per non-scripted mentor turn.
    pub questions: Vec<usize>,
    pub mentor_words: Vec<usize>,
    pub mentee_words: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ConditionTruth {
    pub sessions: usize,
    pub tags: BTreeMap<String, u64>,
    pub acts: BTreeMap<String, u64>,
    pub levels: BTreeMap<String, u64>,
}

pub struct Corpus {
    pub sessions: Vec<Session>,
    pub per_session: Vec<SessionTruth>,
    pub per_condition: BTreeMap<Condition, ConditionTruth>,
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

fn bump(map: &mut BTreeMap<String, u64>, key: String) {
    *map.entry(key).or_default() += 1;
}

fn label_text(tag: StrategyTag) -> (String, usize) {
    match tag.scaffold_kind {
        None => (format!("[{:?}]", tag.value), 1),
        Some(ScaffoldKind::Hint) => ("[Scaffolding] Hints:".into(), 2),
        Some(ScaffoldKind::Principle) => ("[Scaffolding] Principles:".into(), 2),
        Some(ScaffoldKind::KnowledgeResource) => ("[Scaffolding] Knowledge/Resources:".into(), 2),
    }
}

fn random_tag(rng: &mut ChaCha8Rng) -> StrategyTag {
    let value = *Strategy::ALL.choose(rng).unwrap();
    if value == Strategy::Scaffolding {
        StrategyTag::scaffolding(*ScaffoldKind::ALL.choose(rng).unwrap())
    } else {
        StrategyTag::plain(value)
    }
}

/// Mentor text with known word and question counts.
fn mentor_text(rng: &mut ChaCha8Rng, tag: StrategyTag) -> (String, usize, usize) {
    let mut parts: Vec<String> = Vec::new();
    let mut word_count = 0;
    let mut questions = 0;
    let (label, label_words) = label_text(tag);
    parts.push(label);
    word_count += label_words;
    for _ in 0..rng.gen_range(0..4) {
        let n = rng.gen_range(1..8);
        let mut w = words(rng, n);
        match rng.gen_range(0..5) {
            0 | 1 => w.last_mut().unwrap().push('.'),
            2 => {
                w.last_mut().unwrap().push('?');
                questions += 1;
            }
            3 => {
                w.last_mut().unwrap().push_str("??");
                questions += 1;
            }
            _ => {
                // a quoted question adds words but no follow-up question
                w[0] = format!("\"{}", w[0]);
                w.last_mut().unwrap().push_str("?\"");
            }
        }
        word_count += w.len();
        parts.push(w.join(if rng.gen_bool(0.2) { "  " } else { " " }));
    }
    let mut text = parts.join(if rng.gen_bool(0.3) { "\n" } else { " " });
    if rng.gen_bool(0.3) {
        text = format!("{MILESTONE}{text}");
    }
    (text, word_count, questions)
}

/// `n` sessions, each at most 50 turns, both conditions present.
pub fn corpus(seed: u64, n: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let mut sessions = Vec::new();
    let mut per_session = Vec::new();
    let mut per_condition: BTreeMap<Condition, ConditionTruth> = BTreeMap::new();

    for i in 0..n {
        let condition = if i % 2 == 0 { Condition::Mentor } else { Condition::Baseline };
        let mut s = Session::new(format!("synth-{i}"), condition, t0);
        s.coding_run = Some("synthetic".into());
        let truth_c = per_condition.entry(condition).or_default();
        truth_c.sessions += 1;
        let mut truth = SessionTruth::default();
        let push = |s: &mut Session, mut t: Turn| {
            t.index = s.turns.len();
            s.turns.push(t);
        };

        if condition == Condition::Mentor && rng.gen_bool(0.7) {
            let mut greet = Turn::new(0, Role::Mentor, words(&mut rng, 12).join(" ") + "?", t0);
            greet.scripted = true;
            push(&mut s, greet);
        }
        let exchanges = rng.gen_range(1..=20);
        for _ in 0..exchanges {
            let n_words = rng.gen_range(1..30);
            let mut mentee = Turn::new(0, Role::Mentee, words(&mut rng, n_words).join(" "), t0);
            let act = *DiscourseAct::ALL.choose(&mut rng).unwrap();
            let mut a = Annotation::new(AnnotationSource::Manual);
            a.discourse_act = Some(act);
            mentee.annotation = Some(a);
            bump(&mut truth_c.acts, format!("{act:?}"));
            truth.mentee_words.push(n_words);
            push(&mut s, mentee);

            let tag = random_tag(&mut rng);
            let (text, w, q) = mentor_text(&mut rng, tag);
            let mut mentor = Turn::new(0, Role::Mentor, text, t0);
            let mut a = Annotation::new(AnnotationSource::Manual);
            a.strategies = vec![tag];
            bump(&mut truth_c.tags, format!("{:?}", tag.value));
            if let Some(k) = tag.scaffold_kind {
                bump(&mut truth_c.tags, format!("Scaffolding:{k:?}"));
            }
            for b in BehaviorTag::ALL {
                if rng.gen_bool(0.3) {
                    a.behaviors.push(*b);
                    bump(&mut truth_c.tags, format!("{b:?}"));
                }
            }
            for p in PrincipleTag::ALL {
                if rng.gen_bool(0.2) {
                    a.principles.push(*p);
                    bump(&mut truth_c.tags, format!("{p:?}"));
                }
            }
            for _ in 0..rng.gen_range(0..3) {
                let l = *NestedLevel::ALL.choose(&mut rng).unwrap();
                a.feedback_levels.push(l);
                bump(&mut truth_c.levels, format!("{l:?}"));
            }
            mentor.annotation = Some(a);
            truth.mentor_words.push(w);
            truth.questions.push(q);
            truth.exchanges += 1;
            push(&mut s, mentor);
        }
        if rng.gen_bool(0.3) {
            // unanswered final mentee message
            let n_words = rng.gen_range(1..10);
            let mut mentee = Turn::new(0, Role::Mentee, words(&mut rng, n_words).join(" "), t0);
            let act = *DiscourseAct::ALL.choose(&mut rng).unwrap();
            let mut a = Annotation::new(AnnotationSource::Manual);
            a.discourse_act = Some(act);
            mentee.annotation = Some(a);
            bump(&mut truth_c.acts, format!("{act:?}"));
            truth.mentee_words.push(n_words);
            push(&mut s, mentee);
        }
        assert!(s.turns.len() <= 50);
        sessions.push(s);
        per_session.push(truth);
    }
    Corpus {
        sessions,
        per_session,
        per_condition,
    }
}

/// Mentor turns with exactly one well-formed label each, written in varied
/// surface forms and surrounded by distractor brackets.
pub fn labelled_turns(seed: u64, n: usize) -> Vec<(Turn, StrategyTag)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let distractors = ["[Phase 1]", "[insert question]", "[see above]", "[1]"];
    (0..n)
        .map(|i| {
            let tag = random_tag(&mut rng);
            let (mut label, _) = label_text(tag);
            if rng.gen_bool(0.3) {
                label = label.to_lowercase();
            }
            let (nb, na) = (rng.gen_range(0..5), rng.gen_range(1..12));
            let before = words(&mut rng, nb).join(" ");
            let after = words(&mut rng, na).join(" ");
            let noise = distractors.choose(&mut rng).unwrap();
            let text = match rng.gen_range(0..3) {
                0 => format!("{label} {after}."),
                1 => format!("{before} {noise}\n{label} {after}?"),
                _ => format!("**{label}** {after}. {noise}"),
            };
            (Turn::new(i, Role::Mentor, text, t0), tag)
        })
        .collect()
}
