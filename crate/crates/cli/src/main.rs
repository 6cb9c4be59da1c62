//! `mentor`: serve the API, chat in a terminal, run simulated studies,
//! annotate sessions and build comparison reports.

mod chat;
mod replay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mentor_core::annotator::{Annotator, CodeField, CodingMode, ManualCodes};
use mentor_core::gateway::{gateway_from_env, FixtureStore, Gateway, TransportMode};
use mentor_core::harness::{run_plan, RunPlan};
use mentor_core::metrics::{cohens_kappa, compare_conditions};
use mentor_core::model::{Condition, Session};
use mentor_core::orchestrator::Orchestrator;
use mentor_core::prompt::PromptBundle;
use mentor_core::report::{export_report, ReportFormat};
use mentor_core::store::{export_transcript, SessionStore, TranscriptStyle};
use mentor_server::{AppState, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "mentor", version, about = "Phase-guided design mentor sessions and conversation analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Session store root.
    #[arg(long, global = true, env = "MENTOR_STORE", default_value = "mentor-store")]
    store: PathBuf,
    /// Prompt bundle JSON; the built-in bundle when omitted.
    #[arg(long, global = true, env = "MENTOR_BUNDLE")]
    bundle: Option<PathBuf>,
    /// LLM transport.
    #[arg(long, global = true, env = "MENTOR_TRANSPORT", default_value = "live")]
    transport: TransportMode,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
        /// Directory with the built web UI.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Chat with the mentor in the terminal.
    Chat {
        #[arg(long, default_value = "mentor")]
        condition: Condition,
        /// Design artifact image.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        caption: Option<String>,
        /// Session id; generated when omitted.
        #[arg(long)]
        id: Option<String>,
    },
    /// Run a study plan with scripted or simulated mentees.
    Run {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Code stored sessions.
    Annotate {
        /// Session id pattern (`*` and `?` wildcards).
        #[arg(long, default_value = "*")]
        sessions: String,
        #[arg(long, default_value = "explicit")]
        mode: CodingMode,
        /// Manual codes CSV (manual mode).
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Coder whose codes are applied (manual mode).
        #[arg(long)]
        coder: Option<String>,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Compare conditions over coded sessions.
    Report {
        #[arg(long, default_value = "*")]
        sessions: String,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List stored sessions.
    List {
        #[arg(long, default_value = "*")]
        sessions: String,
    },
    /// Print a stored session transcript.
    Export {
        #[arg(long)]
        session: String,
        #[arg(long, default_value = "plain")]
        style: TranscriptStyle,
    },
    /// Re-run a stored session against recorded fixtures and diff transcripts.
    Replay {
        #[arg(long)]
        session: String,
    },
    /// Cohen's kappa between two coders in a manual codes CSV.
    Kappa {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long, default_value = "strategy")]
        field: CodeField,
        #[arg(long, num_args = 2, value_names = ["CODER_A", "CODER_B"])]
        coders: Vec<String>,
    },
}

#[derive(Debug)]
enum CliError {
    /// Bad flags, environment or input files. Exit 2.
    Config(String),
    /// Failure while doing the work. Exit 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

struct Context {
    store: SessionStore,
    bundle: Arc<PromptBundle>,
    transport: TransportMode,
}

impl Context {
    fn open(global: &Global) -> Result<Self, CliError> {
        let bundle = match &global.bundle {
            Some(path) => PromptBundle::from_path(path).map_err(|e| config(format!("{}: {e}", path.display())))?,
            None => PromptBundle::default_bundle(),
        };
        let store = SessionStore::open(&global.store).map_err(config)?;
        Ok(Context {
            store,
            bundle: Arc::new(bundle),
            transport: global.transport,
        })
    }

    fn gateway(&self) -> Result<Gateway, CliError> {
        let fixtures = match self.transport {
            TransportMode::Live => None,
            _ => Some(FixtureStore::open(self.store.fixtures_dir()).map_err(config)?),
        };
        gateway_from_env(self.transport, fixtures, Some(self.store.blobs_dir())).map_err(config)
    }

    fn orchestrator(&self) -> Result<Orchestrator, CliError> {
        Ok(Orchestrator::new(self.gateway()?, self.bundle.clone()))
    }

    /// Stored sessions whose id matches the pattern, in id order.
    fn sessions(&self, pattern: &str) -> Result<Vec<Session>, CliError> {
        let pat = glob::Pattern::new(pattern).map_err(|e| config(format!("bad session pattern: {e}")))?;
        let ids: Vec<String> = self
            .store
            .list_sessions()
            .map_err(runtime)?
            .into_iter()
            .filter(|id| pat.matches(id))
            .collect();
        if ids.is_empty() {
            return Err(runtime(format!("no sessions match `{pattern}`")));
        }
        let mut out = Vec::new();
        let mut errors = Vec::new();
        for id in ids {
            match self.store.load_session(&id) {
                Ok(s) => out.push(s),
                Err(e) => errors.push(format!("{id}: {e}")),
            }
        }
        if !errors.is_empty() {
            return Err(runtime(errors.join("\n")));
        }
        Ok(out)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Config(m) => format!("configuration error: {m}"),
                CliError::Runtime(m) => format!("error: {m}"),
            };
            eprintln!("{msg}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::open(&cli.global)?;
    match cli.command {
        Command::Serve { bind, ui } => serve(ctx, &bind, ui),
        Command::Chat {
            condition,
            image,
            caption,
            id,
        } => chat::run(&ctx, condition, image.as_deref(), caption, id),
        Command::Run { plan } => run_study(&ctx, &plan),
        Command::Annotate {
            sessions,
            mode,
            codes,
            coder,
            run_id,
        } => annotate(&ctx, &sessions, mode, codes.as_deref(), coder.as_deref(), run_id),
        Command::Report { sessions, format, out } => report(&ctx, &sessions, format, out.as_deref()),
        Command::List { sessions } => {
            for s in ctx.sessions(&sessions)? {
                let phase = if s.condition == Condition::Mentor { s.phase.phase.to_string() } else { "-".into() };
                println!("{}\t{}\t{}\t{} turns", s.id, s.condition, phase, s.turns.len());
            }
            Ok(())
        }
        Command::Export { session, style } => {
            let s = ctx.store.load_session(&session).map_err(runtime)?;
            print!("{}", export_transcript(&s, style));
            Ok(())
        }
        Command::Replay { session } => replay::run(&ctx, &session),
        Command::Kappa { codes, field, coders } => kappa(&codes, field, &coders[0], &coders[1]),
    }
}

fn serve(ctx: Context, bind: &str, ui: Option<PathBuf>) -> Result<(), CliError> {
    let addr: std::net::SocketAddr = bind.parse().map_err(|e| config(format!("bad --bind `{bind}`: {e}")))?;
    let orch = ctx.orchestrator()?;
    let state = AppState::new(
        orch,
        ctx.store,
        ServerConfig {
            ui_dir: ui,
            ..ServerConfig::default()
        },
    );
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(runtime)?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(runtime)?);
        mentor_server::serve(listener, state).await.map_err(runtime)
    })
}

fn run_study(ctx: &Context, plan_path: &Path) -> Result<(), CliError> {
    let (plan, base) = RunPlan::from_path(plan_path).map_err(config)?;
    plan.validate().map_err(config)?;
    let gateway = ctx.gateway()?;
    let outcome = run_plan(&plan, &base, &gateway, ctx.bundle.clone(), Some(&ctx.store)).map_err(runtime)?;
    for s in &outcome.sessions {
        println!("{}\t{}\t{} turns", s.id, s.condition, s.turns.len());
    }
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(outcome.failures.join("\n")))
    }
}

fn annotate(
    ctx: &Context,
    pattern: &str,
    mode: CodingMode,
    codes: Option<&Path>,
    coder: Option<&str>,
    run_id: Option<String>,
) -> Result<(), CliError> {
    let mut sessions = ctx.sessions(pattern)?;
    let mut annotator = Annotator::new(ctx.bundle.clone());
    match mode {
        CodingMode::LlmJudge => annotator = annotator.with_gateway(ctx.gateway()?),
        CodingMode::Manual => {
            let path = codes.ok_or_else(|| config("manual mode needs --codes"))?;
            let coder = coder.ok_or_else(|| config("manual mode needs --coder"))?;
            let file = std::fs::File::open(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
            let manual = ManualCodes::from_reader(file).map_err(config)?;
            manual.apply(&mut sessions, coder).map_err(runtime)?;
        }
        CodingMode::ExplicitLabel => {}
    }
    let run = annotator.annotate(&mut sessions, mode, run_id).map_err(runtime)?;
    for s in &sessions {
        ctx.store.save_session(s).map_err(runtime)?;
    }
    ctx.store.save_run(&run).map_err(runtime)?;
    println!("{}\t{} sessions", run.id, run.session_ids.len());
    if run.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(run.failures.join("\n")))
    }
}

fn report(ctx: &Context, pattern: &str, format: ReportFormat, out: Option<&Path>) -> Result<(), CliError> {
    let sessions = ctx.sessions(pattern)?;
    let report = compare_conditions(&sessions).map_err(runtime)?;
    let text = export_report(&report, format);
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn kappa(codes: &Path, field: CodeField, a: &str, b: &str) -> Result<(), CliError> {
    let file = std::fs::File::open(codes).map_err(|e| config(format!("{}: {e}", codes.display())))?;
    let manual = ManualCodes::from_reader(file).map_err(config)?;
    let (xa, xb) = manual.aligned(field, a, b);
    let k = cohens_kappa(&xa, &xb).map_err(runtime)?;
    println!("kappa\t{k:.4}\tunits\t{}", xa.len());
    Ok(())
}
