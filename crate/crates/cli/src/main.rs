use std::fs;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fieldsync::imaging::{decode_fsq1, load_pnm, process_document_with_report, psnr, save_pnm, to_monochrome};
use fieldsync::middleware::{serve, ServeOptions};
use fieldsync::netsim::{canonical_scenario, run_scenario};
use fieldsync::syncq::{status_pull, sync_session, SessionOutcome};
use fieldsync::transport::TcpTransport;
use fieldsync::{
    ApplicationRecord, CompressedDoc, CoreStub, DocumentKind, Middleware, PipelineConfig, Queue, Scenario, Strategy,
    SyncConfig,
};

const DEFAULT_SERVER: &str = "127.0.0.1:7878";

#[derive(Parser)]
#[command(
    name = "fieldsync",
    version,
    about = "Field document capture, sync and link simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a PPM/PGM capture into an FSQ1 container.
    Process(ProcessArgs),
    /// Decode an FSQ1 container to a PGM image.
    Decode { input: PathBuf, output: PathBuf },
    /// Queue an application record and its documents for upload.
    Enqueue(EnqueueArgs),
    /// Upload pending queue items to a middleware server.
    Sync(SyncArgs),
    /// Ask the middleware for application statuses.
    Status(StatusArgs),
    /// Run the middleware server until killed.
    Serve(ServeArgs),
    /// Run a network scenario and report per-region delivery.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ProcessArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value_t = PipelineConfig::default().quality)]
    quality: f64,
    #[arg(long, default_value_t = PipelineConfig::default().edge_k)]
    edge_k: f64,
    #[arg(long, default_value_t = PipelineConfig::default().sharpen_alpha)]
    alpha: f64,
    /// Print per-stage sizes and the PSNR of the decoded image against the monochrome input.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct DataDir {
    /// Client queue lives in `<dir>/queue`, server store in `<dir>/server`.
    #[arg(long, env = "FIELDSYNC_DATA_DIR", default_value = "fieldsync-data")]
    data_dir: PathBuf,
}

impl DataDir {
    fn queue(&self) -> PathBuf {
        self.data_dir.join("queue")
    }

    fn server(&self) -> PathBuf {
        self.data_dir.join("server")
    }
}

#[derive(Args)]
struct EnqueueArgs {
    #[command(flatten)]
    dir: DataDir,
    #[arg(long)]
    customer: String,
    #[arg(long)]
    region: String,
    #[arg(long)]
    amount: u64,
    #[arg(long, default_value = "")]
    details: String,
    /// Application id (UUID); a random one is generated if omitted.
    #[arg(long)]
    app_id: Option<String>,
    /// A document as KIND=PATH, e.g. identity-proof=id.fsq1. Repeatable.
    #[arg(long = "doc", value_name = "KIND=PATH")]
    docs: Vec<String>,
}

#[derive(Args)]
struct Endpoint {
    #[arg(long, default_value = DEFAULT_SERVER)]
    server: String,
    #[arg(long, default_value_t = SyncConfig::default().response_timeout_ms)]
    timeout_ms: u64,
}

#[derive(Args)]
struct SyncArgs {
    #[command(flatten)]
    dir: DataDir,
    #[command(flatten)]
    endpoint: Endpoint,
    #[arg(long, default_value_t = SyncConfig::default().batch)]
    batch: usize,
    #[arg(long, default_value_t = SyncConfig::default().chunk_size)]
    chunk_size: usize,
    #[arg(long, default_value = "device")]
    device_id: String,
    /// Seed for backoff jitter.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatusArgs {
    #[command(flatten)]
    dir: DataDir,
    #[command(flatten)]
    endpoint: Endpoint,
    /// Application ids; defaults to every application in the local queue.
    app_ids: Vec<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    dir: DataDir,
    #[arg(long, default_value = DEFAULT_SERVER)]
    listen: String,
    /// Interval between forwarding complete applications to the core stub.
    #[arg(long, default_value_t = 200)]
    core_interval_ms: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; the built-in canonical scenario if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Exit 1: the input or arguments are wrong. Exit 2: the environment failed.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Process(a) => cmd_process(a),
        Command::Decode { input, output } => cmd_decode(&input, &output),
        Command::Enqueue(a) => cmd_enqueue(a),
        Command::Sync(a) => cmd_sync(a),
        Command::Status(a) => cmd_status(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .invalid()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn cmd_process(a: ProcessArgs) -> Result<(), Failure> {
    let cfg = PipelineConfig {
        quality: a.quality,
        edge_k: a.edge_k,
        sharpen_alpha: a.alpha,
    };
    cfg.validate().invalid()?;
    let img = load_pnm(&read(&a.input)?)
        .with_context(|| format!("parsing {}", a.input.display()))
        .invalid()?;
    let (doc, stages) = process_document_with_report(&img, &cfg).invalid()?;
    write(&a.output, doc.bytes())?;
    if a.report {
        let decoded = decode_fsq1(doc.bytes()).invalid()?;
        let quality = psnr(&to_monochrome(&img), &decoded).invalid()?;
        println!("input        {:>10} bytes", stages.input_bytes);
        println!("monochrome   {:>10} bytes", stages.monochrome_bytes);
        println!("boundary     {:>10} pixels", stages.boundary_pixels);
        println!("sharpened    {:>10} bytes", stages.sharpened_bytes);
        println!("container    {:>10} bytes", stages.container_bytes);
        println!(
            "ratio        {:>10.4}",
            stages.container_bytes as f64 / stages.input_bytes as f64
        );
        println!("psnr         {:>10.2} dB", quality);
        println!("sha256       {}", doc.digest());
    }
    Ok(())
}

fn cmd_decode(input: &Path, output: &Path) -> Result<(), Failure> {
    let img = decode_fsq1(&read(input)?)
        .with_context(|| format!("decoding {}", input.display()))
        .invalid()?;
    write(output, &save_pnm(&img))
}

fn cmd_enqueue(a: EnqueueArgs) -> Result<(), Failure> {
    let mut rec = match a.app_id {
        Some(id) => ApplicationRecord::with_id(
            id,
            &a.customer,
            &a.region,
            a.amount,
            &a.details,
            fieldsync::records::now_ms(),
        ),
        None => ApplicationRecord::new(&a.customer, &a.region, a.amount, &a.details),
    }
    .invalid()?;
    let mut payloads = Vec::new();
    for spec in &a.docs {
        let (kind, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--doc expects KIND=PATH, got {spec:?}"))
            .invalid()?;
        let kind: DocumentKind = kind.parse().invalid()?;
        let doc = CompressedDoc::from_container(read(Path::new(path))?)
            .with_context(|| format!("{path} is not a valid FSQ1 container"))
            .invalid()?;
        rec = rec.attach_document(kind, &doc).invalid()?;
        payloads.push(doc.into_bytes());
    }
    let mut q = Queue::open(a.dir.queue()).runtime()?;
    let docs: Vec<&[u8]> = payloads.iter().map(Vec::as_slice).collect();
    let keys = q
        .enqueue_application(&rec, &docs, fieldsync::records::now_ms())
        .runtime()?;
    println!("{}", rec.app_id);
    for k in keys {
        eprintln!("queued {k}");
    }
    Ok(())
}

fn connect(e: &Endpoint) -> Result<TcpTransport, Failure> {
    let addr = e
        .server
        .to_socket_addrs()
        .with_context(|| format!("bad server address {:?}", e.server))
        .invalid()?
        .next()
        .ok_or_else(|| anyhow!("server address {:?} resolves to nothing", e.server))
        .invalid()?;
    TcpTransport::connect(addr, Duration::from_millis(e.timeout_ms))
        .with_context(|| format!("connecting to {}", e.server))
        .runtime()
}

fn cmd_sync(a: SyncArgs) -> Result<(), Failure> {
    let cfg = SyncConfig {
        device_id: a.device_id,
        batch: a.batch,
        chunk_size: a.chunk_size,
        response_timeout_ms: a.endpoint.timeout_ms,
        seed: a.seed,
        ..SyncConfig::default()
    };
    cfg.validate().invalid()?;
    let mut q = Queue::open(a.dir.queue()).runtime()?;
    let mut t = connect(&a.endpoint)?;
    let report = sync_session(&mut q, &mut t, &cfg).runtime()?;
    println!("{report}");
    println!("pending {}", q.pending_count());
    match report.outcome {
        SessionOutcome::Completed => Ok(()),
        SessionOutcome::TransportFailure => {
            Err(Failure::Runtime(anyhow!("connection to {} failed", a.endpoint.server)))
        }
        SessionOutcome::ProtocolViolation => Err(Failure::Runtime(anyhow!("server reported a protocol violation"))),
    }
}

fn cmd_status(a: StatusArgs) -> Result<(), Failure> {
    let ids: Vec<String> = if a.app_ids.is_empty() {
        Queue::open(a.dir.queue()).runtime()?.app_ids().into_iter().collect()
    } else {
        a.app_ids
    };
    let cfg = SyncConfig {
        response_timeout_ms: a.endpoint.timeout_ms,
        ..SyncConfig::default()
    };
    let mut t = connect(&a.endpoint)?;
    let statuses = status_pull(&mut t, &ids, &cfg).runtime()?;
    for (id, status) in statuses {
        match status {
            Some(s) => println!("{id}\t{s}"),
            None => println!("{id}\tunknown"),
        }
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let dir = a.dir.server();
    let mw = Middleware::open(&dir)
        .with_context(|| format!("opening store {}", dir.display()))
        .runtime()?;
    let opts = ServeOptions {
        core_interval: Some(Duration::from_millis(a.core_interval_ms.max(1))),
    };
    let handle = serve(&a.listen, Arc::new(mw), CoreStub::new(), opts)
        .with_context(|| format!("binding {}", a.listen))
        .runtime()?;
    println!("listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut sc = match &a.scenario {
        Some(path) => {
            let text = String::from_utf8(read(path)?)
                .with_context(|| format!("{} is not UTF-8", path.display()))
                .invalid()?;
            Scenario::from_json(&text)
                .with_context(|| format!("scenario {}", path.display()))
                .invalid()?
        }
        None => canonical_scenario(Strategy::PerRegionBest),
    };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    let report = run_scenario(&sc).invalid()?;
    let json = report.to_canonical_json();
    match &a.out {
        Some(path) => {
            write(path, json.as_bytes())?;
            print!("{}", report.table());
        }
        None => print!("{json}"),
    }
    Ok(())
}
