use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use qsign_core::api::{self, ApiConfig, AppState};
use qsign_core::backend::{RemoteClient, DEVICE_EMBEDDED};
use qsign_core::ingest::{HttpFileApi, IngestConfig, Ingestor, PhotoFetcher};
use qsign_core::pipeline::{self, nonce_from_seed};
use qsign_core::sig::NONCE_LEN;
use qsign_core::statcheck;
use qsign_core::{MessageRecord, QuantumBackend, Store};

#[derive(Parser)]
#[command(name = "qsign", version, about = "Quantum-seeded badge service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Issue one badge offline and print it as JSON plus the rendered line.
    Badge(BadgeArgs),
    /// Run both circuits at scale and print the randomness report.
    Stats(StatsArgs),
    /// Recompute the badge of a stored record and compare.
    Verify {
        /// A record file from the data directory.
        record: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Local,
    Remote,
    AlwaysFail,
    Hanging,
}

#[derive(clap::Args)]
struct BackendOpts {
    #[arg(long, value_enum, default_value = "local", env = "QSIGN_BACKEND")]
    backend: BackendArg,
    /// Base URL of the remote task service.
    #[arg(long, env = "QSIGN_REMOTE_ENDPOINT")]
    remote_endpoint: Option<String>,
    #[arg(long, env = "QSIGN_REMOTE_DEVICE", default_value = DEVICE_EMBEDDED)]
    remote_device: String,
    /// Bearer credential for the remote task service.
    #[arg(long, env = "QSIGN_REMOTE_TOKEN", hide_env_values = true)]
    remote_token: Option<String>,
    /// Quantum execution budget before falling back, in milliseconds.
    #[arg(long, env = "QSIGN_TIMEOUT_MS", default_value_t = 30_000)]
    timeout_ms: u64,
}

impl BackendOpts {
    fn build(&self) -> anyhow::Result<QuantumBackend> {
        Ok(match self.backend {
            BackendArg::Local => QuantumBackend::LocalSimulator,
            BackendArg::AlwaysFail => QuantumBackend::AlwaysFail,
            BackendArg::Hanging => QuantumBackend::Hanging,
            BackendArg::Remote => {
                let Some(endpoint) = &self.remote_endpoint else {
                    bail!("--backend remote needs --remote-endpoint");
                };
                let mut client =
                    RemoteClient::new(endpoint.trim_end_matches('/'), &self.remote_device);
                if let Some(token) = &self.remote_token {
                    client = client.with_credentials(token);
                }
                QuantumBackend::Remote(client)
            }
        })
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, env = "QSIGN_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "QSIGN_BIND", default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, env = "QSIGN_DATA_DIR", default_value = "qsign-data")]
    data_dir: PathBuf,
    #[arg(long, env = "QSIGN_WEBHOOK_SECRET", hide_env_values = true)]
    webhook_secret: String,
    #[arg(long, env = "QSIGN_ADMIN_PASSWORD", hide_env_values = true)]
    admin_password: String,
    #[arg(long, env = "QSIGN_SECRET_HEADER", default_value = api::DEFAULT_SECRET_HEADER)]
    secret_header: String,
    /// Handle the bot answers to, without the leading @.
    #[arg(long, env = "QSIGN_BOT_HANDLE")]
    bot_handle: String,
    /// Enables photo download through the bot file API.
    #[arg(long, env = "QSIGN_BOT_TOKEN", hide_env_values = true)]
    bot_token: Option<String>,
    #[arg(long, env = "QSIGN_BOT_API_BASE", default_value = HttpFileApi::DEFAULT_BASE)]
    bot_api_base: String,
    /// Origin allowed to call the API from a browser.
    #[arg(long, env = "QSIGN_UI_ORIGIN")]
    ui_origin: Option<String>,
    #[arg(long, env = "QSIGN_TOKEN_TTL_S", default_value_t = 12 * 60 * 60)]
    token_ttl_s: u64,
    #[command(flatten)]
    backend: BackendOpts,
}

#[derive(clap::Args)]
struct BadgeArgs {
    username: String,
    text: String,
    /// Seed for the circuit sampler.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 32-byte nonce as hex; derived from the seed when omitted.
    #[arg(long)]
    nonce: Option<String>,
    /// Timestamp fed to the fallback derivation, in Unix milliseconds.
    #[arg(long, default_value_t = 0)]
    timestamp: u64,
    #[command(flatten)]
    backend: BackendOpts,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long, default_value_t = 100_000)]
    shots: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of standard runs sampled for the q_num min-entropy estimate.
    #[arg(long, default_value_t = 1000)]
    qnum_runs: usize,
    /// Print only the JSON report.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

async fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Serve(args) => serve(args).await.map(|()| ExitCode::SUCCESS),
        Command::Badge(args) => badge(args).await.map(|()| ExitCode::SUCCESS),
        Command::Stats(args) => stats(args).map(|()| ExitCode::SUCCESS),
        Command::Verify { record } => verify(&record),
    }
}

async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    if args.webhook_secret.is_empty() || args.admin_password.is_empty() {
        bail!("webhook secret and admin password must be non-empty");
    }
    let backend = args.backend.build()?;
    let store = Arc::new(
        Store::open(&args.data_dir)
            .with_context(|| format!("opening data dir {}", args.data_dir.display()))?,
    );
    let fetcher = match &args.bot_token {
        Some(token) => PhotoFetcher::Http(HttpFileApi::new(&args.bot_api_base, token)),
        None => PhotoFetcher::Disabled,
    };
    let mut ingest = IngestConfig::new(args.bot_handle.trim_start_matches('@'));
    ingest.timeout = args.backend.timeout();
    let ingestor = Arc::new(Ingestor::new(store, backend, fetcher, ingest));

    let mut config = ApiConfig::new(args.webhook_secret, args.admin_password);
    config.secret_header = args.secret_header;
    config.token_ttl = Duration::from_secs(args.token_ttl_s);
    config.ui_origin = args.ui_origin;
    let state = AppState::new(ingestor.clone(), config);

    let addr: SocketAddr = format!("{}:{}", args.bind, args.port)
        .parse()
        .context("invalid bind address")?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, backend = %ingestor.backend().kind(), data_dir = %args.data_dir.display(), "listening");
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tracing::info!("draining in-flight badge pipelines");
    ingestor.wait_idle().await;
    Ok(())
}

fn parse_nonce(hex_str: &str) -> anyhow::Result<[u8; NONCE_LEN]> {
    let bytes = hex::decode(hex_str).context("--nonce is not hex")?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| anyhow::anyhow!("--nonce must be {NONCE_LEN} bytes, got {}", b.len()))
}

async fn badge(args: BadgeArgs) -> anyhow::Result<()> {
    let nonce = match &args.nonce {
        Some(h) => parse_nonce(h)?,
        None => nonce_from_seed(args.seed),
    };
    let backend = args.backend.build()?;
    let out = pipeline::offline_badge(
        &args.username,
        &args.text,
        args.seed,
        nonce,
        args.timestamp,
        &backend,
        args.backend.timeout(),
    )
    .await;
    println!("{}", out.to_json());
    println!("{}", out.rendered);
    Ok(())
}

fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let report = statcheck::run_report(args.shots, args.seed, args.qnum_runs)?;
    if !args.json {
        print!("{}", report.to_text());
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn verify(path: &PathBuf) -> anyhow::Result<ExitCode> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let record: MessageRecord = serde_json::from_slice(&raw).context("not a message record")?;
    let v = pipeline::verify_record(&record)?;
    println!("{}", serde_json::to_string_pretty(&v)?);
    if v.matches {
        println!("match: {}", v.message_id);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("mismatch: {}", v.message_id);
        Ok(ExitCode::from(1))
    }
}
