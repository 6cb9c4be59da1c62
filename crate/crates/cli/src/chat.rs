//! Terminal chat loop. Mentor turns go to stdout; prompts and diagnostics
//! go to stderr so a piped transcript stays clean.

use std::io::{BufRead, Write};
use std::path::Path;

use mentor_core::gateway::sniff_media_type;
use mentor_core::model::{Attachment, AttachmentKind, Condition, Phase, Session};
use mentor_core::orchestrator::{Orchestrator, OrchestratorError};

use crate::{runtime, CliError, Context};

const QUIT: &str = "/quit";
const RETRY: &str = "/retry";

/// One-line progress banner shown after each mentor reply.
pub fn phase_banner(session: &Session) -> String {
    let goals = &session.phase.goals.items;
    let met = goals.iter().filter(|g| g.satisfied).count();
    let mut banner = format!("[phase: {} | goals {met}/{}", session.phase.phase, goals.len());
    if let Some(q) = session.phase.active_question.and_then(|i| session.agenda.questions.get(i)) {
        banner.push_str(&format!(" | question {}: {}", q.id, q.text));
    }
    banner.push(']');
    banner
}

fn attach(
    orch: &Orchestrator,
    ctx: &Context,
    session: &mut Session,
    path: &Path,
    caption: Option<String>,
) -> Result<(), String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let media_type = sniff_media_type(&bytes);
    if !media_type.starts_with("image/") {
        return Err(format!("{} is not a PNG, JPEG, GIF or WebP image", path.display()));
    }
    let bytes_ref = ctx.store.put_blob(&bytes).map_err(|e| e.to_string())?;
    orch.submit_attachment(
        session,
        Attachment {
            kind: AttachmentKind::ArtifactImage,
            media_type: media_type.to_string(),
            bytes_ref,
            caption,
            at_turn: 0,
        },
    )
    .map_err(|e| e.to_string())
}

pub fn run(
    ctx: &Context,
    condition: Condition,
    image: Option<&Path>,
    caption: Option<String>,
    id: Option<String>,
) -> Result<(), CliError> {
    let orch = ctx.orchestrator()?;
    let id = id.unwrap_or_else(|| format!("chat-{}", chrono::Utc::now().format("%Y%m%d-%H%M%S")));
    let mut session = orch.start_session(condition, id);
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut out = std::io::stdout();

    for t in &session.turns {
        println!("MENTOR: {}\n", t.content);
    }

    if let Some(path) = image {
        attach(&orch, ctx, &mut session, path, caption.clone()).map_err(crate::config)?;
    }
    while condition == Condition::Mentor && session.phase.phase == Phase::AwaitArtifact {
        eprint!("Path to your design artifact image: ");
        let Some(Ok(line)) = lines.next() else {
            ctx.store.save_session(&session).map_err(runtime)?;
            return Ok(());
        };
        let line = line.trim();
        if line == QUIT {
            break;
        }
        if let Err(e) = attach(&orch, ctx, &mut session, Path::new(line), caption.clone()) {
            eprintln!("{e}");
        }
    }

    while !session.closed {
        eprint!("> ");
        let _ = std::io::stderr().flush();
        let Some(Ok(line)) = lines.next() else { break };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == QUIT {
            break;
        }
        let result = if line == RETRY {
            orch.retry_pending(&mut session)
        } else {
            println!("MENTEE: {line}\n");
            orch.handle_mentee_message(&mut session, line)
        };
        match result {
            Ok(reply) => {
                println!("MENTOR: {}\n", reply.turn.content);
                if condition == Condition::Mentor {
                    println!("{}\n", phase_banner(&session));
                }
            }
            Err(e @ OrchestratorError::Gateway(_)) => {
                eprintln!("mentor unavailable: {e} (type {RETRY} to try again)");
            }
            Err(e) => eprintln!("{e}"),
        }
        let _ = out.flush();
        ctx.store.save_session(&session).map_err(runtime)?;
    }
    ctx.store.save_session(&session).map_err(runtime)?;
    eprintln!("session saved: {}", session.id);
    Ok(())
}
