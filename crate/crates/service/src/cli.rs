//! `mindos` command line. Exit codes: 0 success, 1 runtime error, 2 usage.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use mindos_core::kernel::{AgentConfig, StoreKind};
use mindos_core::lui::{resolve_action, InputEvent, LayoutElement, LayoutPlan};
use mindos_core::orchestrator::{Feedback, FeedbackSource, FeedbackVerdict, SessionMode};

use crate::app::{EventReply, Service, ServiceError};
use crate::settings::Settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mindos", version, about = "MindOS agent runtime")]
struct Cli {
    /// Overrides MINDOS_DATA_DIR.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Refuse every non-loopback connection.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        /// Overrides MINDOS_BIND.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Interactive session: `/click <id>`, `/accept [note]`, `/reject [note]`, `/quit`.
    Chat {
        agent_id: String,
        #[arg(long, default_value = "goal_directed")]
        mode: String,
    },
    #[command(subcommand)]
    Tools(ToolsCommand),
    #[command(subcommand)]
    Knowledge(KnowledgeCommand),
    /// Re-render a recorded session trace.
    Replay { trace_file: PathBuf },
}

#[derive(Debug, Subcommand)]
enum AgentCommand {
    /// Create an agent from a JSON config file; prints the new agent id.
    Create {
        #[arg(short = 'f', long = "file")]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ToolsCommand {
    /// Import every operation of an OpenAPI document.
    Import {
        file: PathBuf,
        #[arg(long)]
        agent: String,
        /// Replaces the document's server url.
        #[arg(long)]
        base_url: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum KnowledgeCommand {
    /// Ingest a text file; the file name becomes the document id.
    Add {
        file: PathBuf,
        #[arg(long)]
        agent: String,
        #[arg(long)]
        store: String,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Runtime(format!("{}: {e}", e.code()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn read_file(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn render_plan(plan: &LayoutPlan) -> String {
    let mut lines = Vec::new();
    for element in &plan.elements {
        match element {
            LayoutElement::TextBlock { text } => lines.push(text.clone()),
            LayoutElement::Button { label, element_id } => lines.push(format!("  [{label}] ({element_id})")),
            LayoutElement::OptionList {
                label,
                element_id,
                options,
            } => {
                lines.push(format!("  {label} ({element_id}):"));
                lines.extend(options.iter().map(|o| format!("    - {} = {}", o.label, o.value)));
            }
            LayoutElement::FileRef { label, uri } => lines.push(format!("  {label}: {uri}")),
        }
    }
    lines.join("\n")
}

fn print_reply(out: &mut dyn Write, reply: &EventReply) -> std::io::Result<()> {
    for plan in &reply.outputs {
        writeln!(out, "{}", render_plan(plan))?;
    }
    if reply.session.awaiting_feedback {
        writeln!(out, "(awaiting feedback: /accept or /reject)")?;
    }
    Ok(())
}

async fn chat(
    service: &Service,
    agent_id: &str,
    mode: SessionMode,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let session_id = service.start_session(agent_id, mode)?;
    writeln!(out, "session {session_id}")?;
    let mut last_plan: Option<LayoutPlan> = None;
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let (command, rest) = text.split_once(' ').unwrap_or((text, ""));
        let result = match command {
            "/quit" => break,
            "/click" => match last_plan.as_ref().map(|p| resolve_action(p, rest.trim())) {
                Some(Ok(event)) => service.submit_event(&session_id, &event).await,
                Some(Err(e)) => {
                    writeln!(out, "error: {e}")?;
                    continue;
                }
                None => {
                    writeln!(out, "error: nothing to click")?;
                    continue;
                }
            },
            "/accept" | "/reject" => {
                let feedback = Feedback {
                    source: FeedbackSource::Human,
                    verdict: if command == "/accept" {
                        FeedbackVerdict::Accept
                    } else {
                        FeedbackVerdict::Reject
                    },
                    note: rest.trim().to_owned(),
                };
                service.apply_feedback(&session_id, &feedback).await
            }
            _ => service.submit_event(&session_id, &InputEvent::utterance(text)).await,
        };
        match result {
            Ok(reply) => {
                if let Some(plan) = reply.outputs.last() {
                    last_plan = Some(plan.clone());
                }
                print_reply(out, &reply)?;
            }
            Err(e) => writeln!(out, "error: {}: {e}", e.code())?,
        }
    }
    service
        .engine()
        .close_session(&session_id)
        .await
        .map_err(ServiceError::from)?;
    Ok(())
}

async fn execute(cli: Cli, settings: Settings, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    if let Command::Replay { trace_file } = &cli.command {
        let rendered = crate::replay::render_log(&read_file(trace_file)?).map_err(CliError::Runtime)?;
        write!(out, "{rendered}")?;
        return Ok(());
    }
    let service = Service::from_settings(&settings)?;
    match cli.command {
        Command::Serve { .. } => {
            let listener = tokio::net::TcpListener::bind(settings.bind).await?;
            writeln!(out, "listening on {}", listener.local_addr()?)?;
            out.flush()?;
            crate::http::serve(Arc::new(service), listener).await?;
        }
        Command::Agent(AgentCommand::Create { file }) => {
            let config = AgentConfig::from_json(&read_file(&file)?)
                .map_err(|e| CliError::Runtime(format!("InvalidConfig: {}: {e}", file.display())))?;
            let agent_id = service.create_agent(config).await?;
            writeln!(out, "{agent_id}")?;
        }
        Command::Chat { agent_id, mode } => {
            let mode: SessionMode = mode.parse().map_err(CliError::Usage)?;
            chat(&service, &agent_id, mode, input, out).await?;
        }
        Command::Tools(ToolsCommand::Import { file, agent, base_url }) => {
            let ids = service.import_tools(&agent, &read_file(&file)?, base_url).await?;
            for id in ids {
                writeln!(out, "{id}")?;
            }
        }
        Command::Knowledge(KnowledgeCommand::Add { file, agent, store }) => {
            let store: StoreKind = store.parse().map_err(CliError::Usage)?;
            let doc_id = file
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CliError::Usage(format!("{}: no file name", file.display())))?
                .to_owned();
            let chunks = service
                .add_knowledge(&agent, store, &doc_id, &read_file(&file)?)
                .await?;
            writeln!(out, "{doc_id}: {chunks} chunk(s)")?;
        }
        Command::Replay { .. } => unreachable!("handled above"),
    }
    Ok(())
}

/// Runs one invocation; `args` includes the program name.
pub fn run(
    args: impl IntoIterator<Item = impl Into<OsString> + Clone>,
    env: impl Fn(&str) -> Option<String>,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let mut settings = match Settings::from_lookup(env) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(dir) = &cli.data_dir {
        settings.data_dir = dir.clone();
    }
    if cli.offline {
        settings.offline = true;
    }
    if let Command::Serve { bind: Some(bind) } = &cli.command {
        settings.bind = *bind;
    }

    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_RUNTIME;
        }
    };
    match runtime.block_on(execute(cli, settings, input, out)) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(message)) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(message)) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_RUNTIME
        }
    }
}
