use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opp_client::{Client, ClientError};
use opp_core::alu::DivisionMode;
use opp_core::api::{
    self, ApiError, CalibrateRequest, ErrorKind, GenTraceRequest, GlobalOverride, ProgramSource, RunRequest,
    ValidateRequest, ValidateResponse,
};
use opp_core::calibrate::{CalibrationParams, CalibrationReport};
use opp_core::engine::EngineOptions;
use opp_core::extractor::IngestMode;
use opp_core::runner::RunConfig;
use opp_core::trace::{Column, Trace, TraceRecord};

#[derive(Parser)]
#[command(name = "opp", version, about = "Run OPP programs over packet traces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program (or a chain of programs) over a trace.
    Run(RunArgs),
    /// Check a program and print its shape.
    Validate {
        /// Program file or bundled program name.
        #[arg(long, required = true)]
        program: Vec<String>,
        #[arg(long)]
        server: Option<String>,
    },
    /// Generate a synthetic trace.
    GenTrace {
        /// poisson_flows, portscan_mix, bucket_stress or classifier_grid.
        #[arg(long)]
        kind: String,
        /// Generator parameter as key=value; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        server: Option<String>,
    },
    /// Sweep EWMA time shifts for the port-scan program.
    CalibratePortscan {
        #[arg(long, default_value_t = 40.0)]
        scanner_rate: f64,
        #[arg(long, default_value_t = 5.0)]
        benign_rate: f64,
        #[arg(long, default_value_t = 20)]
        threshold: u32,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Shift to evaluate; repeatable. Defaults to a built-in sweep.
        #[arg(long = "shift")]
        shifts: Vec<u8>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long)]
        server: Option<String>,
    },
    /// Run one of the reference models standalone.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Serve the HTTP/JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Convert a classic pcap capture into a canonical CSV trace.
    #[cfg(feature = "pcap")]
    ConvertPcap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tick value assigned to the first packet.
        #[arg(long, default_value_t = 0)]
        base: u32,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Program file or bundled program name; repeat to chain stages.
    #[arg(long, required = true)]
    program: Vec<String>,
    #[arg(long)]
    trace: PathBuf,
    /// Verdict CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stats JSON destination.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    hazard_window: u32,
    /// Truncate divider operands to 16 bits.
    #[arg(long)]
    hw_faithful_div: bool,
    #[arg(long, default_value = "csv")]
    mode: IngestMode,
    /// Override a global register, `Gi=value` or `stage:Gi=value`; repeatable.
    #[arg(long = "global")]
    globals: Vec<GlobalOverride>,
    #[arg(long, default_value_t = 1)]
    partitions: usize,
    /// Record wall-clock throughput in the stats.
    #[arg(long)]
    timing: bool,
    /// Send the work to an `opp serve` instance instead of running locally.
    #[arg(long)]
    server: Option<String>,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Counter-based token bucket, one bucket per `ip_src` when present.
    TokenBucket {
        #[arg(long)]
        burst: u64,
        #[arg(long)]
        period: u64,
        #[arg(long)]
        trace: PathBuf,
    },
    /// WEB/P2P decision tree.
    Tree {
        #[arg(long)]
        mean: u64,
        #[arg(long)]
        var: u64,
        #[arg(long)]
        bytes: u64,
        #[arg(long, default_value_t = 306)]
        mean_threshold: u64,
        #[arg(long, default_value_t = 1575)]
        var_threshold: u64,
        #[arg(long, default_value_t = 203)]
        bytes_threshold: u64,
    },
    /// Replays the mean/variance recurrences over one trace column.
    Stats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "pkt_len")]
        column: String,
    },
    /// Closed-form decayed sum with time `ts >> shift` and weight 1 per packet.
    Ewma {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 19)]
        shift: u8,
    },
}

#[derive(Debug)]
enum Failure {
    Api(ApiError),
    Server(String),
}

impl Failure {
    fn io(what: &Path, e: std::io::Error) -> Self {
        Failure::Api(ApiError::new(ErrorKind::Io, format!("{}: {e}", what.display())))
    }

    fn usage(msg: impl Into<String>) -> Self {
        Failure::Api(ApiError::new(ErrorKind::Usage, msg))
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Api(e) => match e.kind {
                ErrorKind::Usage | ErrorKind::NotFound => 2,
                ErrorKind::Parse => 3,
                ErrorKind::Validation => 4,
                ErrorKind::Io => 5,
                ErrorKind::Internal => 1,
            },
            Failure::Server(_) => 6,
        }
    }

    fn report(&self) {
        match self {
            Failure::Api(e) => {
                eprintln!("error: {e}");
                for i in &e.issues {
                    eprintln!("  {}: {}", i.location, i.message);
                }
            }
            Failure::Server(m) => eprintln!("error: {m}"),
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Api(e)
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { error, .. } => Failure::Api(error),
            ClientError::Http(e) => Failure::Server(format!("server unreachable: {e}")),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run(a) => run(a),
        Cmd::Validate { program, server } => validate(&program, server),
        Cmd::GenTrace {
            kind,
            params,
            seed,
            out,
            server,
        } => {
            let params = opp_core::gen::parse_params(params.iter().map(String::as_str)).map_err(ApiError::from)?;
            let req = GenTraceRequest { kind, params, seed };
            let resp = match server {
                Some(url) => remote(|c| async move { c.gen_trace(&req).await }, url)?,
                None => api::gen_trace(&req)?,
            };
            emit(out.as_deref(), resp.trace_csv.as_bytes())
        }
        Cmd::CalibratePortscan {
            scanner_rate,
            benign_rate,
            threshold,
            duration,
            seed,
            shifts,
            json,
            server,
        } => {
            let req = CalibrateRequest {
                params: CalibrationParams {
                    scanner_rate,
                    benign_rate,
                    threshold,
                    duration,
                    seed,
                },
                shifts,
            };
            let report: CalibrationReport = match server {
                Some(url) => remote(|c| async move { c.calibrate(&req).await }, url)?,
                None => api::calibrate(&req)?,
            };
            let text = if json {
                serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
            } else {
                report.render()
            };
            emit(None, text.as_bytes())
        }
        Cmd::Oracle(o) => oracle(o),
        Cmd::Serve { listen } => serve(listen),
        #[cfg(feature = "pcap")]
        Cmd::ConvertPcap { input, out, base } => {
            let file = std::fs::File::open(&input).map_err(|e| Failure::io(&input, e))?;
            let trace = opp_core::pcap::read_pcap(std::io::BufReader::new(file), base).map_err(|e| {
                let kind = match e {
                    opp_core::pcap::PcapError::Io(_) => ErrorKind::Io,
                    _ => ErrorKind::Parse,
                };
                ApiError::new(kind, format!("{}: {e}", input.display()))
            })?;
            emit(out.as_deref(), trace.to_csv_string().as_bytes())
        }
    }
}

/// A file path when one exists, otherwise a bundled program name.
fn program_source(arg: &str) -> Result<ProgramSource, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        return Ok(ProgramSource::Toml(text));
    }
    if arg.contains(std::path::MAIN_SEPARATOR) || arg.ends_with(".toml") {
        return Err(Failure::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(ProgramSource::Builtin(arg.to_string()))
}

fn remote<T, F, Fut>(f: F, url: String) -> Result<T, Failure>
where
    F: FnOnce(Client) -> Fut,
    Fut: std::future::Future<Output = Result<T, ClientError>>,
{
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Server(format!("cannot start runtime: {e}")))?;
    Ok(rt.block_on(f(Client::new(url)))?)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Failure::io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

fn run(a: RunArgs) -> Result<(), Failure> {
    if a.partitions == 0 {
        return Err(Failure::usage("--partitions must be at least 1"));
    }
    let programs = a
        .program
        .iter()
        .map(|p| program_source(p))
        .collect::<Result<Vec<_>, _>>()?;
    let trace_csv = std::fs::read_to_string(&a.trace).map_err(|e| Failure::io(&a.trace, e))?;
    let req = RunRequest {
        programs,
        trace_csv,
        globals: a.globals,
        config: RunConfig {
            opts: EngineOptions {
                seed: a.seed,
                hazard_window: a.hazard_window,
                division: if a.hw_faithful_div {
                    DivisionMode::Hw16
                } else {
                    DivisionMode::Full32
                },
                mode: a.mode,
            },
            partitions: a.partitions,
            timing: a.timing,
        },
    };
    let resp = match a.server {
        Some(url) => remote(|c| async move { c.run(&req).await }, url)?,
        None => api::run(&req)?,
    };
    emit(a.out.as_deref(), resp.verdicts_csv.as_bytes())?;
    if let Some(p) = &a.stats {
        emit(Some(p), resp.stats.to_json().as_bytes())?;
    }
    Ok(())
}

fn validate(programs: &[String], server: Option<String>) -> Result<(), Failure> {
    let mut reports: Vec<ValidateResponse> = Vec::new();
    for p in programs {
        let req = ValidateRequest {
            program: program_source(p)?,
        };
        reports.push(match &server {
            Some(url) => remote(|c| async move { c.validate(&req).await }, url.clone())?,
            None => api::validate(&req)?,
        });
    }
    let mut text = String::new();
    for r in reports {
        let states: Vec<String> = r.states.iter().map(|(k, v)| format!("{k}={v}")).collect();
        text.push_str(&format!(
            "{}: ok, {} rows, states [{}], conditions [{}], columns [{}], partitionable {}\n",
            r.name,
            r.rows,
            states.join(", "),
            r.conditions.join(", "),
            r.required_columns.join(", "),
            r.partitionable
        ));
    }
    emit(None, text.as_bytes())
}

fn read_trace(path: &Path) -> Result<Trace, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::io(path, e))?;
    Ok(Trace::read_csv(std::io::BufReader::new(file)).map_err(ApiError::from)?)
}

type ColumnReader = Box<dyn Fn(&TraceRecord) -> u64>;

fn column_reader(name: &str) -> Result<ColumnReader, Failure> {
    match name {
        "ts" => Ok(Box::new(|r| r.ts as u64)),
        "in_port" => Ok(Box::new(|r| r.in_port as u64)),
        "pkt_len" => Ok(Box::new(|r| r.pkt_len as u64)),
        _ => Column::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .map(|c| Box::new(move |r: &TraceRecord| r.get(c)) as ColumnReader)
            .ok_or_else(|| Failure::usage(format!("unknown column `{name}`"))),
    }
}

fn oracle(cmd: OracleCmd) -> Result<(), Failure> {
    use opp_oracle::{stats, token_bucket::TokenBucket, tree};
    let text = match cmd {
        OracleCmd::TokenBucket { burst, period, trace } => {
            if burst == 0 || period == 0 {
                return Err(Failure::usage("--burst and --period must be at least 1"));
            }
            let trace = read_trace(&trace)?;
            let keyed = trace.has_column(Column::IpSrc);
            let mut buckets: BTreeMap<u64, TokenBucket> = BTreeMap::new();
            let mut s = String::from("seq,ts,action\n");
            for (seq, r) in trace.records.iter().enumerate() {
                let key = if keyed { r.get(Column::IpSrc) } else { 0 };
                let b = buckets.entry(key).or_insert_with(|| TokenBucket::new(burst, period));
                let action = if b.arrive(r.ts as u64) { "FORWARD(1)" } else { "DROP" };
                s.push_str(&format!("{seq},{},{action}\n", r.ts));
            }
            s
        }
        OracleCmd::Tree {
            mean,
            var,
            bytes,
            mean_threshold,
            var_threshold,
            bytes_threshold,
        } => {
            let t = tree::web_p2p_tree(mean_threshold, var_threshold, bytes_threshold);
            let mut features = [0; 3];
            features[tree::MEAN] = mean;
            features[tree::VARIANCE] = var;
            features[tree::BYTES] = bytes;
            format!("{}\n", t.classify(&features))
        }
        OracleCmd::Stats { trace, column } => {
            let get = column_reader(&column)?;
            let trace = read_trace(&trace)?;
            let samples: Vec<u64> = trace.records.iter().map(get).collect();
            let m = stats::replay(&samples);
            format!("count,mean,var,total\n{},{},{},{}\n", m.count, m.mean, m.var, m.total)
        }
        OracleCmd::Ewma { trace, shift } => {
            if shift >= 32 {
                return Err(Failure::usage("--shift must be below 32"));
            }
            let trace = read_trace(&trace)?;
            let events: Vec<stats::Event> = trace.records.iter().map(|r| ((r.ts >> shift) as u64, 1)).collect();
            let value = match events.first() {
                Some(&(t0, _)) => stats::ewma(t0, 0, &events),
                None => 0,
            };
            if value > u32::MAX as u64 {
                return Err(Failure::Api(ApiError::new(
                    ErrorKind::Validation,
                    format!("decayed sum {value} exceeds 32 bits; the engine register would wrap"),
                )));
            }
            format!("{value}\n")
        }
    };
    emit(None, text.as_bytes())
}

fn serve(listen: SocketAddr) -> Result<(), Failure> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Server(format!("cannot start runtime: {e}")))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| Failure::io(Path::new(&listen.to_string()), e))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::io(Path::new("listener"), e))?;
        println!("listening on {addr}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        opp_service::serve(listener, shutdown)
            .await
            .map_err(|e| Failure::io(Path::new("server"), e))
    })
}
