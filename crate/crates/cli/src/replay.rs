//! Re-executes a stored session through a fresh orchestrator and compares
//! the regenerated transcript with the stored one.

use mentor_core::model::{Role, Session};
use mentor_core::orchestrator::Orchestrator;
use mentor_core::store::{export_transcript, TranscriptStyle};

use crate::{runtime, CliError, Context};

/// Rebuilds `stored` by replaying its mentee turns and attachments.
pub fn reenact(orch: &Orchestrator, stored: &Session) -> Result<Session, String> {
    let mut session = orch.start_session(stored.condition, stored.id.clone());
    let mut attachments = stored.attachments.iter().peekable();
    let mentee: Vec<usize> = stored
        .turns
        .iter()
        .filter(|t| t.role == Role::Mentee)
        .map(|t| t.index)
        .collect();
    for idx in mentee {
        while let Some(a) = attachments.next_if(|a| a.at_turn <= session.turns.len()) {
            orch.submit_attachment(&mut session, a.clone()).map_err(|e| e.to_string())?;
        }
        let content = &stored.turns[idx].content;
        let answered = stored.turns.get(idx + 1).is_some_and(|t| t.role == Role::Mentor);
        if answered {
            orch.handle_mentee_message(&mut session, content)
                .map_err(|e| format!("turn {idx}: {e}"))?;
        } else {
            orch.append_mentee(&mut session, content).map_err(|e| e.to_string())?;
        }
    }
    for a in attachments {
        orch.submit_attachment(&mut session, a.clone()).map_err(|e| e.to_string())?;
    }
    Ok(session)
}

/// Line-level differences between two transcripts.
pub fn diff_lines(expected: &str, actual: &str) -> Vec<String> {
    let e: Vec<&str> = expected.lines().collect();
    let a: Vec<&str> = actual.lines().collect();
    let mut out = Vec::new();
    for i in 0..e.len().max(a.len()) {
        match (e.get(i), a.get(i)) {
            (Some(x), Some(y)) if x == y => {}
            (x, y) => out.push(format!(
                "line {}:\n- {}\n+ {}",
                i + 1,
                x.unwrap_or(&"<missing>"),
                y.unwrap_or(&"<missing>")
            )),
        }
    }
    out
}

pub fn run(ctx: &Context, id: &str) -> Result<(), CliError> {
    let stored = ctx.store.load_session(id).map_err(runtime)?;
    let orch = ctx.orchestrator()?;
    let fresh = reenact(&orch, &stored).map_err(runtime)?;
    let diffs = diff_lines(
        &export_transcript(&stored, TranscriptStyle::Plain),
        &export_transcript(&fresh, TranscriptStyle::Plain),
    );
    for d in &diffs {
        println!("{d}");
    }
    println!("{} differences", diffs.len());
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("session `{id}` replayed with {} differences", diffs.len())))
    }
}
