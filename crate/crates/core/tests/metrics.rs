use std::collections::BTreeMap;

use mentor_core::metrics::*;
use mentor_core::model::*;
use mentor_core::report::{export_report, from_json, ReportFormat};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod support;
use support::synth;

fn mean_usize(v: &[usize]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<usize>() as f64 / v.len() as f64)
    }
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        _ => false,
    }
}

#[test]
fn discourse_structure_matches_generated_truth() {
    let c = synth::corpus(7, 24);
    for (s, t) in c.sessions.iter().zip(&c.per_session) {
        let m = compute_discourse_structure(s);
        assert_eq!(m.exchange_count, t.exchanges, "{}", s.id);
        assert!(close(m.followup_question_mean, mean_usize(&t.questions)), "{}", s.id);
        assert!(close(m.mentor_word_mean, mean_usize(&t.mentor_words)), "{}", s.id);
        assert!(close(m.mentee_word_mean, mean_usize(&t.mentee_words)), "{}", s.id);
    }
}

#[test]
fn per_turn_counts_match_generated_truth() {
    let c = synth::corpus(11, 20);
    for (s, t) in c.sessions.iter().zip(&c.per_session) {
        let mentor: Vec<&Turn> = s.turns.iter().filter(|t| t.role == Role::Mentor && !t.scripted).collect();
        let q: Vec<usize> = mentor.iter().map(|t| count_followup_questions(&t.content)).collect();
        let w: Vec<usize> = mentor.iter().map(|t| count_words(&t.content)).collect();
        assert_eq!(q, t.questions);
        assert_eq!(w, t.mentor_words);
    }
}

#[test]
fn report_panels_match_generated_truth() {
    let c = synth::corpus(3, 30);
    let report = compare_conditions(&c.sessions).unwrap();
    for (cond, truth) in &c.per_condition {
        let p = &report.conditions[cond];
        assert_eq!(p.n_sessions, truth.sessions);
        for (code, n) in &p.panel_a {
            assert_eq!(*n, truth.tags.get(code).copied().unwrap_or(0), "{cond} {code}");
        }
        for (level, n) in &p.panel_d {
            assert_eq!(*n, truth.levels.get(level).copied().unwrap_or(0), "{cond} {level}");
        }
        let total: u64 = truth.acts.values().sum();
        for (act, share) in &p.panel_c {
            let expected = truth.acts.get(act).copied().unwrap_or(0) as f64 / total as f64;
            assert!((share - expected).abs() <= 1e-12, "{cond} {act}");
        }
        assert!((p.panel_c.values().sum::<f64>() - 1.0).abs() <= 1e-9);

        let idx: Vec<usize> = c
            .sessions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.condition == *cond)
            .map(|(i, _)| i)
            .collect();
        let session_mean = |f: &dyn Fn(&synth::SessionTruth) -> Option<f64>| {
            let v: Vec<f64> = idx.iter().filter_map(|&i| f(&c.per_session[i])).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        assert!(close(Some(p.panel_b.turns), session_mean(&|t| Some(t.exchanges as f64))));
        assert!(close(p.panel_b.followup_questions, session_mean(&|t| mean_usize(&t.questions))));
        assert!(close(p.panel_b.mentor_words, session_mean(&|t| mean_usize(&t.mentor_words))));
        assert!(close(p.panel_b.mentee_words, session_mean(&|t| mean_usize(&t.mentee_words))));
    }
}

#[test]
fn every_enum_row_is_present() {
    let c = synth::corpus(5, 4);
    let report = compare_conditions(&c.sessions).unwrap();
    for p in report.conditions.values() {
        assert_eq!(p.panel_a.len(), occurrence_rows().len());
        assert_eq!(p.panel_c.len(), DiscourseAct::ALL.len());
        assert_eq!(p.panel_d.len(), NestedLevel::ALL.len());
    }
}

#[test]
fn session_order_does_not_change_aggregates() {
    let c = synth::corpus(21, 20);
    let base = compare_conditions(&c.sessions).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut shuffled = c.sessions.clone();
        shuffled.shuffle(&mut rng);
        let r = compare_conditions(&shuffled).unwrap();
        assert_eq!(r.conditions.keys().collect::<Vec<_>>(), base.conditions.keys().collect::<Vec<_>>());
        for (cond, p) in &r.conditions {
            let b = &base.conditions[cond];
            assert_eq!(p.panel_a, b.panel_a);
            assert_eq!(p.panel_d, b.panel_d);
            for (k, v) in &p.panel_c {
                assert!((v - b.panel_c[k]).abs() < 1e-12);
            }
            assert!((p.panel_b.turns - b.panel_b.turns).abs() < 1e-9);
        }
    }
}

#[test]
fn identical_conditions_give_identical_panels() {
    let c = synth::corpus(8, 2);
    let mut a = c.sessions[0].clone();
    let mut b = c.sessions[0].clone();
    a.condition = Condition::Mentor;
    b.condition = Condition::Baseline;
    let r = compare_conditions(&[a, b]).unwrap();
    assert_eq!(r.conditions[&Condition::Mentor], r.conditions[&Condition::Baseline]);
}

#[test]
fn doubled_exchanges_double_turn_mean() {
    let c = synth::corpus(9, 2);
    let mut m = c.sessions[0].clone();
    let mut b = m.clone();
    b.condition = Condition::Baseline;
    let extra: Vec<Turn> = m.turns.iter().filter(|t| !t.scripted).cloned().collect();
    m.condition = Condition::Mentor;
    for t in extra {
        let mut t = t;
        t.index = m.turns.len();
        m.turns.push(t);
    }
    let r = compare_conditions(&[m, b]).unwrap();
    let ratio = r.conditions[&Condition::Mentor].panel_b.turns / r.conditions[&Condition::Baseline].panel_b.turns;
    assert!((ratio - 2.0).abs() < 1e-12);
}

#[test]
fn errors() {
    assert!(matches!(compare_conditions(&[]), Err(MetricsError::UncodedSessions(_))));
    let c = synth::corpus(1, 4);
    let mentor_only: Vec<Session> = c.sessions.iter().filter(|s| s.condition == Condition::Mentor).cloned().collect();
    assert_eq!(
        compare_conditions(&mentor_only),
        Err(MetricsError::MissingCondition(Condition::Baseline))
    );
    let mut uncoded = c.sessions.clone();
    uncoded[1].coding_run = None;
    assert_eq!(
        compare_conditions(&uncoded),
        Err(MetricsError::UncodedSessions(vec![uncoded[1].id.clone()]))
    );
}

#[test]
fn word_and_question_examples() {
    assert_eq!(count_words(""), 0);
    assert_eq!(count_words("a  b\nc"), 3);
    assert_eq!(count_followup_questions("Here is a suggestion."), 0);
    assert_eq!(count_followup_questions("Does that help? What's your audience?"), 2);
    assert_eq!(count_followup_questions("You asked \"is this right?\", let's see."), 0);
    // hand count: 6 tokens outside the 16-token scripted block
    let text = "Design Mentorship Process:\n- ✅ Phase one\n- ➡️ Phase two\nWe're currently in: Phase two\n[Coaching] What do you see first?";
    assert_eq!(text.split_whitespace().count() - 16, 6);
    assert_eq!(count_words(text), 6);
}

#[test]
fn report_json_round_trips() {
    let c = synth::corpus(4, 6);
    let report = compare_conditions(&c.sessions).unwrap();
    let json = export_report(&report, ReportFormat::Json);
    assert_eq!(from_json(&json).unwrap(), report);
}

#[test]
fn zero_report_renders_every_row() {
    let mut m = Session::new("m", Condition::Mentor, chrono::Utc::now());
    let mut b = Session::new("b", Condition::Baseline, chrono::Utc::now());
    m.coding_run = Some("r".into());
    b.coding_run = Some("r".into());
    let r = compare_conditions(&[m, b]).unwrap();
    let csv = export_report(&r, ReportFormat::Csv);
    let rows = 1 + 1 + occurrence_rows().len() + 4 + act_rows().len() + level_rows().len();
    assert_eq!(csv.lines().count(), rows);
    let md = export_report(&r, ReportFormat::Markdown);
    for (_, code) in occurrence_rows() {
        let shown = code.split_once(':').map(|(_, k)| format!("- {k}")).unwrap_or(code);
        assert!(md.contains(&format!("| {shown} | -- | -- |")), "{shown}");
    }
    assert!(md.contains("not a reproduction target"));
}

#[test]
fn kappa_examples() {
    assert_eq!(cohens_kappa(&["A", "B", "C"], &["A", "B", "C"]).unwrap(), 1.0);
    // p_o = 0.5, p_e = 0.5*0.5 + 0.5*0.5 = 0.5
    let k = cohens_kappa(&["A", "A", "B", "B"], &["A", "B", "A", "B"]).unwrap();
    assert!(k.abs() < 1e-12);
    assert_eq!(cohens_kappa(&["A"], &["A", "B"]), Err(KappaError::LengthMismatch(1, 2)));
    // p_o = 3/4; marginals a = {A:2,B:2}, b = {A:3,B:1}; p_e = (6+2)/16 = 0.5
    let k = cohens_kappa(&["A", "A", "B", "B"], &["A", "A", "B", "A"]).unwrap();
    assert!((k - 0.5).abs() < 1e-12);
}

fn pair() -> impl proptest::strategy::Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), prop::collection::vec(0u8..4, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kappa_is_symmetric((a, b) in pair()) {
        let ab = cohens_kappa(&a, &b);
        let ba = cohens_kappa(&b, &a);
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
            }
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn kappa_ignores_label_names((a, b) in pair(), perm in Just(vec![0u8, 1, 2, 3]).prop_shuffle()) {
        let rename: BTreeMap<u8, String> = perm.iter().enumerate().map(|(i, p)| (i as u8, format!("L{p}"))).collect();
        let ra: Vec<&String> = a.iter().map(|x| &rename[x]).collect();
        let rb: Vec<&String> = b.iter().map(|x| &rename[x]).collect();
        match (cohens_kappa(&a, &b), cohens_kappa(&ra, &rb)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }
}
