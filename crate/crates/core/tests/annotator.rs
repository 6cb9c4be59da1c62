use std::sync::{Arc, Mutex};

use mentor_core::annotator::*;
use mentor_core::clock::SteppingClock;
use mentor_core::gateway::{ChatRequest, ChatResponse, FnProvider, Gateway, SimulatedProvider};
use mentor_core::metrics::cohens_kappa;
use mentor_core::model::*;
use mentor_core::orchestrator::Orchestrator;
use mentor_core::prompt::PromptBundle;

mod support;

fn bundle() -> Arc<PromptBundle> {
    Arc::new(PromptBundle::default_bundle())
}

fn simulated_session(condition: Condition) -> Session {
    let o = Orchestrator::new(Gateway::live(Arc::new(SimulatedProvider), "sim"), bundle())
        .with_clock(Arc::new(SteppingClock::epoch()));
    let mut s = o.start_session(condition, format!("sim-{condition}"));
    o.submit_attachment(
        &mut s,
        Attachment {
            kind: AttachmentKind::ArtifactImage,
            media_type: "image/png".into(),
            bytes_ref: "sha256:00".into(),
            caption: None,
            at_turn: 0,
        },
    )
    .unwrap();
    for m in [
        "Let's start a design feedback session!",
        "It's for managers because they plan budgets. Is the colour scheme too loud?",
        "Yes, that's right.",
        "I think the colours compete with the bars.",
    ] {
        o.handle_mentee_message(&mut s, m).unwrap();
    }
    s
}

#[test]
fn explicit_labels_recover_every_tag() {
    let (p, r) = support::explicit_label_scores(42, 30);
    assert_eq!((p, r), (1.0, 1.0));
}

#[test]
fn explicit_mode_codes_unscripted_mentor_turns() {
    let mut sessions = vec![simulated_session(Condition::Mentor)];
    let run = Annotator::new(bundle())
        .annotate(&mut sessions, CodingMode::ExplicitLabel, Some("run-x".into()))
        .unwrap();
    assert_eq!(run.id, "run-x");
    let s = &sessions[0];
    assert_eq!(s.coding_run.as_deref(), Some("run-x"));
    for t in &s.turns {
        let coded = t.annotation.is_some();
        assert_eq!(coded, t.role == Role::Mentor && !t.scripted, "turn {}", t.index);
    }
    let first = s.turns.iter().find(|t| t.role == Role::Mentor && !t.scripted).unwrap();
    assert_eq!(
        first.annotation.as_ref().unwrap().strategies,
        vec![StrategyTag::plain(Strategy::Articulating)]
    );
    assert!(validate_session(s).is_empty());
}

#[test]
fn llm_judge_gives_each_mentee_turn_one_act() {
    let mut sessions = vec![simulated_session(Condition::Mentor), simulated_session(Condition::Baseline)];
    let gateway = Gateway::live(Arc::new(SimulatedProvider), "sim");
    let run = Annotator::new(bundle())
        .with_gateway(gateway)
        .with_parallelism(4)
        .annotate(&mut sessions, CodingMode::LlmJudge, None)
        .unwrap();
    assert!(run.failures.is_empty(), "{:?}", run.failures);
    assert_eq!(run.judge_model_id.as_deref(), Some("sim"));
    for s in &sessions {
        for t in s.turns.iter().filter(|t| t.role == Role::Mentee) {
            assert!(t.annotation.as_ref().and_then(|a| a.discourse_act).is_some());
        }
        assert!(validate_session(s).is_empty());
    }
}

#[test]
fn answer_requires_a_mentor_question() {
    let calls = Arc::new(Mutex::new(Vec::<String>::new()));
    let log = calls.clone();
    let provider = FnProvider(move |r: &ChatRequest| {
        log.lock().unwrap().push(r.messages.last().unwrap().content.clone());
        Ok(ChatResponse::stop(if r.messages.len() > 2 { "StatementInform" } else { "Answer" }))
    });
    let gateway = Gateway::live(Arc::new(provider), "judge");
    let b = bundle();
    let coder = LlmCoder::new(&gateway, &b);
    let t0 = chrono::Utc::now();
    let statement = Turn::new(0, Role::Mentor, "[Modeling] I would sort the bars.", t0);
    let mentee = Turn::new(1, Role::Mentee, "It is for managers.", t0);
    assert_eq!(
        coder.classify_discourse_act(&mentee, Some(&statement)).unwrap(),
        DiscourseAct::StatementInform
    );
    let question = Turn::new(0, Role::Mentor, "[Articulating] Who is the audience?", t0);
    calls.lock().unwrap().clear();
    assert_eq!(coder.classify_discourse_act(&mentee, Some(&question)).unwrap(), DiscourseAct::Answer);
    assert_eq!(calls.lock().unwrap().len(), 1);
}

#[test]
fn llm_judge_without_gateway_fails() {
    let mut sessions = vec![simulated_session(Condition::Baseline)];
    assert!(matches!(
        Annotator::new(bundle()).annotate(&mut sessions, CodingMode::LlmJudge, None),
        Err(AnnotateError::NoGateway)
    ));
}

const CODES: &str = "session_id,turn_index,field,value,coder_id
s1,1,strategy,Coaching,alice
s1,1,strategy,Coaching,bob
s1,2,act,Answer,alice
s1,2,act,Answer,bob
s1,3,strategy,Scaffolding:Hint,alice
s1,3,strategy,Modeling,bob
s1,3,level,EncodingInteraction,alice
s1,4,act,Accept,alice
s1,4,act,StatementOpinion,bob
";

fn coded_fixture() -> Session {
    let t0 = chrono::Utc::now();
    let mut s = Session::new("s1", Condition::Mentor, t0);
    for (i, role) in [Role::Mentee, Role::Mentor, Role::Mentee, Role::Mentor, Role::Mentee].iter().enumerate() {
        s.turns.push(Turn::new(i, *role, format!("turn {i}"), t0));
    }
    s
}

#[test]
fn manual_codes_import_and_agreement() {
    let codes = ManualCodes::from_reader(CODES.as_bytes()).unwrap();
    assert_eq!(codes.coders(), vec!["alice", "bob"]);
    let mut sessions = vec![coded_fixture()];
    assert_eq!(codes.apply(&mut sessions, "alice").unwrap(), 5);
    let t3 = sessions[0].turns[3].annotation.as_ref().unwrap();
    assert_eq!(t3.source, AnnotationSource::Manual);
    assert_eq!(t3.strategies, vec![StrategyTag::scaffolding(ScaffoldKind::Hint)]);
    assert_eq!(t3.feedback_levels, vec![NestedLevel::EncodingInteraction]);
    assert!(validate_session(&sessions[0]).is_empty());

    let (a, b) = codes.aligned(CodeField::Strategy, "alice", "bob");
    assert_eq!(a, vec!["Coaching", "Scaffolding:Hint"]);
    assert_eq!(b, vec!["Coaching", "Modeling"]);
    // p_o = 1/2; marginals {C:1,S:1} and {C:1,M:1}; p_e = 1/4; kappa = (1/2 - 1/4) / (3/4) = 1/3
    assert!((cohens_kappa(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn manual_codes_reject_bad_rows() {
    let bad_value = "session_id,turn_index,field,value,coder_id\ns1,1,strategy,Lecturing,alice\n";
    assert!(matches!(
        ManualCodes::from_reader(bad_value.as_bytes()),
        Err(ImportError::Invalid { row: 2, .. })
    ));
    let wrong_role = "session_id,turn_index,field,value,coder_id\ns1,1,act,Answer,alice\n";
    let codes = ManualCodes::from_reader(wrong_role.as_bytes()).unwrap();
    assert!(codes.apply(&mut [coded_fixture()], "alice").is_err());
    let missing = "session_id,turn_index,field,value,coder_id\nzz,1,strategy,Coaching,alice\n";
    let codes = ManualCodes::from_reader(missing.as_bytes()).unwrap();
    assert!(codes.apply(&mut [coded_fixture()], "alice").is_err());
}
