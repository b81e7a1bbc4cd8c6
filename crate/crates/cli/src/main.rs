mod table;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use bankflow_api::{AppState, ServeOptions, TokenTable};
use bankflow_core::catalog::{render_catalog, validate_catalog, SHIPPED_CATALOG};
use bankflow_core::scenario::{parse_scenario, run_scenario};
use bankflow_core::{
    replay, ChainRegistry, Clock, Engine, FileLog, InboxEntry, MemoryLog, RequestView,
    SteppingClock, SystemClock, TailPolicy,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bankflow",
    version,
    about = "Banking request workflows and customer notifications"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/JSON service.
    Serve(ServeArgs),
    /// Run scripted scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Check chain configuration files.
    #[command(subcommand)]
    Config(ConfigCommand),
    /// Check and render the pattern catalog.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Show a tier's pending queue.
    #[command(subcommand)]
    Queue(QueueCommand),
    /// Show a customer's notification inbox.
    Inbox {
        customer_id: String,
        #[command(flatten)]
        source: Source,
    },
    /// Rebuild state from a log and print it as canonical JSON.
    Replay {
        #[arg(long, env = "BANKFLOW_LOG")]
        log: PathBuf,
        #[arg(long, env = "BANKFLOW_CONFIG")]
        config: Option<PathBuf>,
        /// Stop after this sequence number.
        #[arg(long)]
        up_to: Option<u64>,
        #[arg(long)]
        drop_truncated_tail: bool,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Chain configuration; the built-in three-tier chains when omitted.
    #[arg(long, env = "BANKFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Token table (JSON array of {token, actor_id, role, tier_id?}).
    #[arg(long, env = "BANKFLOW_TOKENS")]
    tokens: PathBuf,
    /// Event log, created if missing.
    #[arg(long, env = "BANKFLOW_LOG")]
    log: PathBuf,
    #[arg(long, env = "BANKFLOW_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Deterministic timestamps starting at 2024-01-01T00:00:00Z.
    #[arg(long)]
    fixed_clock: bool,
    /// Discard an unterminated last line instead of refusing to start.
    #[arg(long)]
    drop_truncated_tail: bool,
    #[arg(long, default_value_t = 500)]
    outbox_interval_ms: u64,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Execute a scenario file; exit 0 iff every step passes.
    Run {
        file: PathBuf,
        #[arg(long, env = "BANKFLOW_CONFIG")]
        config: Option<PathBuf>,
        /// Write events here instead of keeping them in memory.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        fixed_clock: bool,
    },
}

#[derive(Subcommand)]
enum ConfigCommand {
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum CatalogCommand {
    Validate {
        path: PathBuf,
    },
    /// Render a catalog to Markdown.
    Render {
        /// Catalog to render; the shipped one when omitted.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum QueueCommand {
    List {
        tier_id: String,
        #[command(flatten)]
        source: Source,
    },
}

/// Where to read state from: a replayed log or a running service.
#[derive(Args)]
struct Source {
    #[arg(long, env = "BANKFLOW_LOG", conflicts_with = "api")]
    log: Option<PathBuf>,
    #[arg(long, env = "BANKFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Base URL of a running service, e.g. http://127.0.0.1:8080
    #[arg(long, env = "BANKFLOW_API", requires = "token")]
    api: Option<String>,
    #[arg(long, env = "BANKFLOW_TOKEN")]
    token: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_registry(path: Option<&Path>) -> Result<ChainRegistry> {
    match path {
        None => Ok(ChainRegistry::default_bank()),
        Some(path) => {
            let text = read(path)?;
            ChainRegistry::from_json_str(&text)
                .with_context(|| format!("invalid chain configuration {}", path.display()))
        }
    }
}

fn clock(fixed: bool) -> Arc<dyn Clock> {
    if fixed {
        Arc::new(SteppingClock::default())
    } else {
        Arc::new(SystemClock)
    }
}

fn tail_policy(drop: bool) -> TailPolicy {
    if drop {
        TailPolicy::DropTruncated
    } else {
        TailPolicy::Reject
    }
}

/// `Ok(false)` means the command ran but found problems (exit 1).
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Serve(args) => serve(args).map(|()| true),
        Command::Scenario(ScenarioCommand::Run {
            file,
            config,
            log,
            fixed_clock,
        }) => scenario(&file, config.as_deref(), log.as_deref(), fixed_clock),
        Command::Config(ConfigCommand::Validate { path }) => {
            let text = read(&path)?;
            match ChainRegistry::from_json_str(&text) {
                Ok(registry) => {
                    for chain in registry.chains() {
                        let tiers: Vec<String> = chain
                            .tiers
                            .iter()
                            .map(|t| format!("{}<={}", t.tier_id, t.authority_limit))
                            .collect();
                        println!(
                            "ok {} ({}): {}",
                            chain.chain_id,
                            chain.applies_to_kind,
                            tiers.join(" -> ")
                        );
                    }
                    Ok(true)
                }
                Err(bankflow_core::chain::ConfigError::Invalid { violations }) => {
                    for v in violations {
                        println!("{}: {v}", path.display());
                    }
                    Ok(false)
                }
                Err(err) => {
                    println!("{}: {err}", path.display());
                    Ok(false)
                }
            }
        }
        Command::Catalog(CatalogCommand::Validate { path }) => {
            let text = read(&path)?;
            match validate_catalog(&text) {
                Ok(entries) => {
                    for e in &entries {
                        println!("ok {}", e.name);
                    }
                    Ok(true)
                }
                Err(err) => {
                    println!("{}: {} {err}", path.display(), err.code());
                    Ok(false)
                }
            }
        }
        Command::Catalog(CatalogCommand::Render { source, out }) => {
            let text = match &source {
                Some(path) => read(path)?,
                None => SHIPPED_CATALOG.to_string(),
            };
            let entries = validate_catalog(&text)?;
            let markdown = render_catalog(&entries);
            match out {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        fs::create_dir_all(dir)?;
                    }
                    fs::write(&path, markdown)
                        .with_context(|| format!("cannot write {}", path.display()))?;
                }
                None => print!("{markdown}"),
            }
            Ok(true)
        }
        Command::Queue(QueueCommand::List { tier_id, source }) => {
            let views: Vec<RequestView> = match (&source.api, &source.log) {
                (Some(api), _) => {
                    get_json(api, source.token.as_deref(), &format!("/queues/{tier_id}"))?
                }
                (None, Some(log)) => {
                    let (registry, state) = replayed(log, source.config.as_deref())?;
                    if !registry.knows_tier(&tier_id) {
                        bail!("unknown tier `{tier_id}`");
                    }
                    state
                        .pending_for_tier(&tier_id, &registry)
                        .into_iter()
                        .map(|i| RequestView::new(i, &registry))
                        .collect()
                }
                (None, None) => bail!("pass --log <path> or --api <url> --token <token>"),
            };
            print!("{}", table::queue(&views));
            Ok(true)
        }
        Command::Inbox {
            customer_id,
            source,
        } => {
            let inbox: Vec<InboxEntry> = match (&source.api, &source.log) {
                (Some(api), _) => get_json(
                    api,
                    source.token.as_deref(),
                    &format!("/customers/{customer_id}/notifications"),
                )?,
                (None, Some(log)) => {
                    let (_, state) = replayed(log, source.config.as_deref())?;
                    state
                        .hub()
                        .deliveries_for(&customer_id)
                        .into_iter()
                        .map(|(delivery, event)| InboxEntry { delivery, event })
                        .collect()
                }
                (None, None) => bail!("pass --log <path> or --api <url> --token <token>"),
            };
            print!("{}", table::inbox(&inbox));
            Ok(true)
        }
        Command::Replay {
            log,
            config,
            up_to,
            drop_truncated_tail,
        } => {
            let registry = load_registry(config.as_deref())?;
            let events = FileLog::read(&log, tail_policy(drop_truncated_tail))?;
            let state = replay(&events, &registry, up_to)?;
            println!("{}", state.canonical_json());
            Ok(true)
        }
    }
}

fn replayed(
    log: &Path,
    config: Option<&Path>,
) -> Result<(ChainRegistry, bankflow_core::AggregateState)> {
    let registry = load_registry(config)?;
    let events = FileLog::read(log, TailPolicy::Reject)
        .with_context(|| format!("cannot read log {}", log.display()))?;
    let state = replay(&events, &registry, None)?;
    Ok((registry, state))
}

fn get_json<T: serde::de::DeserializeOwned>(
    base: &str,
    token: Option<&str>,
    path: &str,
) -> Result<T> {
    let url = format!("{}{path}", base.trim_end_matches('/'));
    let mut request = reqwest::blocking::Client::new().get(&url);
    if let Some(token) = token {
        request = request.bearer_auth(token);
    }
    let response = request.send().with_context(|| format!("GET {url}"))?;
    let status = response.status();
    if !status.is_success() {
        let body: serde_json::Value = response.json().unwrap_or_default();
        bail!(
            "GET {url}: {status} {} {}",
            body["code"].as_str().unwrap_or(""),
            body["message"].as_str().unwrap_or("")
        );
    }
    response
        .json()
        .with_context(|| format!("GET {url}: unexpected body"))
}

fn scenario(
    file: &Path,
    config: Option<&Path>,
    log: Option<&Path>,
    fixed_clock: bool,
) -> Result<bool> {
    let steps = parse_scenario(&read(file)?)
        .with_context(|| format!("cannot load scenario {}", file.display()))?;
    let registry = load_registry(config)?;
    let engine = match log {
        Some(path) => Engine::open_file(
            registry.clone(),
            path,
            TailPolicy::Reject,
            clock(fixed_clock),
        )?,
        None => Engine::open(
            registry.clone(),
            Box::new(MemoryLog::new()),
            clock(fixed_clock),
        )?,
    };
    let report = run_scenario(&engine, &steps);
    println!("{report}");

    let replayed = replay(&engine.events()?, &registry, None)?;
    let replay_ok = replayed.canonical_json() == engine.snapshot().canonical_json();
    println!(
        "replay check: {}",
        if replay_ok { "ok" } else { "MISMATCH" }
    );
    Ok(report.passed() && replay_ok)
}

fn serve(args: ServeArgs) -> Result<()> {
    let registry = load_registry(args.config.as_deref())?;
    let tokens = TokenTable::from_json_str(&read(&args.tokens)?, &registry)
        .with_context(|| format!("invalid token table {}", args.tokens.display()))?;
    if let Some(dir) = args.log.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let engine = Engine::open_file(
        registry,
        &args.log,
        tail_policy(args.drop_truncated_tail),
        clock(args.fixed_clock),
    )
    .with_context(|| format!("cannot open log {}", args.log.display()))?;
    let state = AppState::new(Arc::new(engine), tokens);
    let options = ServeOptions {
        outbox_interval: Duration::from_millis(args.outbox_interval_ms.max(1)),
        ..ServeOptions::default()
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.listen)
            .await
            .with_context(|| format!("cannot listen on {}", args.listen))?;
        bankflow_api::serve(listener, state, options, bankflow_api::ctrl_c()).await?;
        Ok(())
    })
}
