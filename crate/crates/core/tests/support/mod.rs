//! Shared drivers for integration and acceptance tests.
#![allow(dead_code)]

pub mod synth;

use std::sync::{Arc, Mutex};

use mentor_core::clock::SteppingClock;
use mentor_core::gateway::{ChatRequest, ChatResponse, FnProvider, Gateway, GatewayError, RetryPolicy};
use mentor_core::model::*;
use mentor_core::orchestrator::{Orchestrator, OrchestratorError};
use mentor_core::prompt::PromptBundle;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MENTOR_REPLIES: &[&str] = &[
    "[Articulating] Who is the audience?",
    "[Bounding] What constraints apply?",
    "[Scoping] 1. Is the colour right?\n2. Is the title clear?",
    "[Scoping] 1. Does the layout work?",
    "[Coaching] What do you notice first?",
    "[Scaffolding] Hints: try sorting the bars.",
    "[Modeling] I would start with the axis.",
    "[Exploring] What will you change first?",
    "[Reflecting] What did you learn?",
    "[Coaching] one [Modeling] two",
    "No label here at all.",
];

const MENTEE_LINES: &[&str] = &[
    "Let's start a design feedback session!",
    "Yes, that's right.",
    "No, not quite.",
    "Does the colour scheme work?",
    "I think it is fine.",
    "Let's move on to the next question.",
    "It is for managers because they decide budgets.",
    "ok",
];

fn scripted_provider(seed: u64) -> FnProvider<impl Fn(&ChatRequest) -> Result<ChatResponse, GatewayError>> {
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    FnProvider(move |r: &ChatRequest| {
        let mut rng = rng.lock().unwrap();
        if rng.gen_bool(0.05) {
            return Err(GatewayError::Provider {
                status: 503,
                excerpt: "busy".into(),
            });
        }
        let text = match r.meta("purpose") {
            Some("judge-goal") => match rng.gen_range(0..4) {
                0 => "UNSATISFIED".to_string(),
                1 => "maybe".to_string(),
                _ => format!("SATISFIED {}", rng.gen_range(0..6)),
            },
            Some("judge-question") => ["RESOLVED", "UNRESOLVED", "??"][rng.gen_range(0..3)].to_string(),
            _ => MENTOR_REPLIES.choose(&mut *rng).unwrap().to_string(),
        };
        Ok(ChatResponse::stop(text))
    })
}

fn image(at: &str) -> Attachment {
    Attachment {
        kind: AttachmentKind::ArtifactImage,
        media_type: at.into(),
        bytes_ref: "sha256:ab".into(),
        caption: Some("chart".into()),
        at_turn: 0,
    }
}

/// Drives one seeded random operation sequence and checks lifecycle
/// invariants after every step. Returns the first failure.
/// On success returns the furthest phase reached.
pub fn random_sequence(seed: u64, steps: usize) -> Result<Phase, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gateway = Gateway::live(Arc::new(scripted_provider(seed)), "scripted").with_retry(RetryPolicy::none());
    let o = Orchestrator::new(gateway, Arc::new(PromptBundle::default_bundle()))
        .with_clock(Arc::new(SteppingClock::epoch()));
    let condition = if rng.gen_bool(0.8) { Condition::Mentor } else { Condition::Baseline };
    let mut s = o.start_session(condition, format!("seq-{seed}"));
    let mut last_phase = s.phase.phase;
    let mut transitions = 0usize;

    for step in 0..steps {
        let before_turns = s.turns.len();
        let was_closed = s.closed;
        let op = rng.gen_range(0..10);
        let mut sent_message = false;
        let outcome: Result<(), OrchestratorError> = match op {
            0 => o.submit_attachment(&mut s, image(if rng.gen_bool(0.8) { "image/png" } else { "text/csv" })),
            1 => o.advance_phase(&mut s).map(|_| ()),
            2 => o.next_question(&mut s).map(|_| ()),
            3 => o.retry_pending(&mut s).map(|_| ()),
            4 if rng.gen_bool(0.1) => {
                o.close_session(&mut s, "random close");
                Ok(())
            }
            _ => {
                let line = MENTEE_LINES.choose(&mut rng).unwrap();
                sent_message = true;
                o.handle_mentee_message(&mut s, line).map(|_| ())
            }
        };
        let ctx = |msg: String| format!("seed {seed} step {step} op {op}: {msg}");

        let v = validate_session(&s);
        if !v.is_empty() {
            return Err(ctx(format!("invariants {v:?}")));
        }
        if s.phase.phase < last_phase {
            return Err(ctx(format!("phase regressed {last_phase} -> {}", s.phase.phase)));
        }
        if last_phase < Phase::P2Diagnose
            && s.phase.phase >= Phase::P2Diagnose
            && s.transitions.iter().any(|t| t.to == Phase::P2Diagnose)
            && (!s.agenda.confirmed || s.agenda.questions.is_empty())
        {
            return Err(ctx("entered P2 without a confirmed non-empty agenda".into()));
        }
        if s.transitions.len() < transitions {
            return Err(ctx("transition log shrank".into()));
        }
        for t in &s.transitions[transitions..] {
            if t.to <= t.from {
                return Err(ctx(format!("backward transition {} -> {}", t.from, t.to)));
            }
        }
        if s.turns.len() < before_turns {
            return Err(ctx("turns removed".into()));
        }
        if was_closed {
            if s.turns.len() != before_turns {
                return Err(ctx("closed session gained turns".into()));
            }
            if sent_message && outcome.is_ok() {
                return Err(ctx("message accepted after close".into()));
            }
        }
        if s.phase.phase == Phase::AwaitArtifact && s.turns.iter().any(|t| t.role == Role::Mentee) {
            return Err(ctx("mentee turn before artifact".into()));
        }
        let mentee = s.turns.iter().filter(|t| t.role == Role::Mentee).count();
        let mentor = s.turns.iter().filter(|t| t.role == Role::Mentor && !t.scripted).count();
        if mentor > mentee {
            return Err(ctx(format!("{mentor} mentor replies for {mentee} mentee turns")));
        }
        if s.phase.phase == Phase::P2Diagnose {
            let active = s
                .agenda
                .questions
                .iter()
                .filter(|q| q.status == QuestionStatus::Active)
                .count();
            if active > 1 {
                return Err(ctx("more than one active question".into()));
            }
        }
        last_phase = s.phase.phase;
        transitions = s.transitions.len();
    }
    Ok(last_phase)
}

/// Precision and recall of explicit-label coding on strategy tags, micro-averaged.
pub fn explicit_label_scores(seed: u64, turns: usize) -> (f64, f64) {
    let bundle = PromptBundle::default_bundle();
    let mut predicted = 0usize;
    let mut correct = 0usize;
    let items = synth::labelled_turns(seed, turns);
    for (turn, truth) in &items {
        let tags = mentor_core::annotator::tag_explicit_labels(turn, &bundle).strategies;
        predicted += tags.len();
        correct += tags.iter().filter(|t| *t == truth).count();
    }
    let precision = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    (precision, correct as f64 / items.len() as f64)
}
