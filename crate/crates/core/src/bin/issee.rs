use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};

use issee::call::{CallState, Caller};
use issee::engine::{parse_near, results_document, results_text, QueryError, QueryFilter};
use issee::http::{HttpRequest, HttpResponse};
use issee::live::{LiveConfig, LiveDeployment, LiveRuntime};
use issee::netsim::Addr;
use issee::scenario::{RunError, Scenario};
use issee::sip::event::Originator;
use issee::world::{World, WorldConfig, ISSEE_ADDR, SCSCF_ADDR};
use issee::xdms::{decode_log, ChangeKind, Xdms};

// Writes to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        if let Err(e) = write!(std::io::stdout().lock(), $($t)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

macro_rules! outln {
    () => { out!("\n") };
    ($($t:tt)*) => {{ out!($($t)*); out!("\n"); }};
}

#[derive(Parser)]
#[command(name = "issee", version, about = "Sensor search engine over a minimal IMS core")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Xml,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file in the simulator and check its expectations.
    Run {
        scenario: PathBuf,
        /// Write the message trace here (`-` for stdout).
        #[arg(long)]
        trace: Option<String>,
        /// Keep XDMS state in this log file.
        #[arg(long)]
        xdms_log: Option<PathBuf>,
        /// Write enriched documents into this directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Search the sensor index.
    Query {
        /// Build the index by running this scenario first.
        #[arg(long, conflicts_with = "server", required_unless_present = "server")]
        scenario: Option<PathBuf>,
        /// Ask a running `issee serve` at this UDP socket.
        #[arg(long)]
        server: Option<SocketAddr>,
        #[arg(long = "type")]
        sensor_type: Option<String>,
        #[arg(long)]
        country: Option<String>,
        #[arg(long)]
        town: Option<String>,
        /// lat,lon,radius_m
        #[arg(long, allow_hyphen_values = true)]
        near: Option<String>,
        #[arg(long)]
        poi: Option<String>,
        #[arg(long)]
        available_only: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Open a data session with a sensor and print the frames received.
    Call {
        /// Sensor name or SIP URI.
        sensor: String,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        /// Actuator command sent by INFO, e.g. zoom=2 (repeatable).
        #[arg(long = "command")]
        commands: Vec<String>,
        /// Simulated: run this scenario first instead of spawning the sensor.
        #[arg(long, conflicts_with = "scscf")]
        scenario: Option<PathBuf>,
        /// Simulated: type and position of the spawned sensor.
        #[arg(long = "type", default_value = "camera")]
        sensor_type: String,
        #[arg(long, default_value_t = 48.8584, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, default_value_t = 2.2945, allow_hyphen_values = true)]
        lon: f64,
        /// Live: the S-CSCF socket of a running `issee serve`.
        #[arg(long)]
        scscf: Option<SocketAddr>,
        /// Live: give up after this many seconds.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
    },
    /// Run the deployment on UDP sockets.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// First port; each logical address takes the next one.
        #[arg(long, default_value_t = 15060)]
        base_port: u16,
        /// In-process sensor as name:type:lat:lon (repeatable).
        #[arg(long = "sensor", allow_hyphen_values = true)]
        sensors: Vec<String>,
        /// Start the mash-up application.
        #[arg(long)]
        mashup: bool,
        #[arg(long)]
        xdms_log: Option<PathBuf>,
        /// Stop after this many seconds (default: run until killed).
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode an XDMS change log and print its records.
    Replay {
        log: PathBuf,
        /// Only records under this path prefix.
        #[arg(long)]
        prefix: Option<String>,
        /// Print the final documents instead of the records.
        #[arg(long)]
        documents: bool,
    },
}

enum Failure {
    /// Exit status 1.
    Runtime(String),
    /// Exit status 2.
    Usage(String),
}

type CmdResult = Result<(), Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn run_scenario(sc: &Scenario, cfg: WorldConfig) -> Result<World, Failure> {
    match sc.run_with(cfg) {
        Ok(run) => Ok(run.world.expect("world built")),
        Err((e @ RunError::ExpectFailed { .. }, _)) => Err(Failure::Runtime(format!("{}: {e}", sc.name))),
        Err((e, _)) => Err(runtime(e)),
    }
}

fn cmd_run(path: PathBuf, trace: Option<String>, xdms_log: Option<PathBuf>, output_dir: Option<PathBuf>) -> CmdResult {
    let sc = load_scenario(&path)?;
    let mut cfg = WorldConfig::standard(sc.seed).map_err(runtime)?;
    cfg.xdms_log = xdms_log;
    cfg.output_dir = output_dir;
    let result = sc.run_with(cfg);
    let trace_text = match &result {
        Ok(run) => run.trace_text(),
        Err((_, run)) => run.trace_text(),
    };
    match trace.as_deref() {
        Some("-") => out!("{trace_text}"),
        Some(p) => std::fs::write(p, &trace_text).map_err(runtime)?,
        None => {}
    }
    match result {
        Ok(run) => {
            let w = run.world.as_ref().expect("world built");
            outln!(
                "{}: ok ({} steps, {} sensors indexed, t={} ms, {} drops)",
                sc.name,
                sc.steps.len(),
                w.engine().sensor_count(),
                w.sim.now(),
                w.sim.drops()
            );
            Ok(())
        }
        Err((e, _)) => Err(Failure::Runtime(format!("{}: {e}", sc.name))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_query(
    scenario: Option<PathBuf>,
    server: Option<SocketAddr>,
    sensor_type: Option<String>,
    country: Option<String>,
    town: Option<String>,
    near: Option<String>,
    poi: Option<String>,
    available_only: bool,
    format: Format,
) -> CmdResult {
    if let Some(server) = server {
        let mut pairs = Vec::new();
        let fields = [
            ("type", &sensor_type),
            ("country", &country),
            ("town", &town),
            ("near", &near),
            ("poi", &poi),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                pairs.push(format!("{k}={}", utf8_percent_encode(v, NON_ALPHANUMERIC)));
            }
        }
        if available_only {
            pairs.push("available=1".into());
        }
        if matches!(format, Format::Xml) {
            pairs.push("format=xml".into());
        }
        let req = HttpRequest::new("GET", &format!("/query?{}", pairs.join("&")));
        let local = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
        let sock = UdpSocket::bind(local).map_err(runtime)?;
        sock.set_read_timeout(Some(Duration::from_secs(5))).map_err(runtime)?;
        sock.send_to(&req.to_bytes(), server).map_err(runtime)?;
        let mut buf = vec![0u8; 65_536];
        let (n, _) = sock.recv_from(&mut buf).map_err(|e| Failure::Runtime(format!("no answer from {server}: {e}")))?;
        let resp = HttpResponse::parse(&buf[..n]).ok_or_else(|| runtime("malformed HTTP response"))?;
        let body = String::from_utf8_lossy(&resp.body).into_owned();
        return match resp.status {
            200 => {
                out!("{body}");
                if matches!(format, Format::Xml) {
                    outln!();
                }
                Ok(())
            }
            400 => Err(Failure::Usage(body)),
            s => Err(Failure::Runtime(format!("server answered {s} {}", resp.reason))),
        };
    }

    let filter = QueryFilter {
        sensor_type,
        country,
        town,
        near: near
            .as_deref()
            .map(parse_near)
            .transpose()
            .map_err(|e| Failure::Usage(e.to_string()))?,
        poi,
        available_only,
    };
    let path = scenario.expect("clap requires scenario or server");
    let sc = load_scenario(&path)?;
    let w = run_scenario(&sc, WorldConfig::standard(sc.seed).map_err(runtime)?)?;
    match w.search.query(&filter) {
        Ok(r) => {
            match format {
                Format::Text => out!("{}", results_text(&r)),
                Format::Xml => outln!("{}", results_document("query", &r)),
            }
            Ok(())
        }
        Err(e @ QueryError::BadFilter(_)) => Err(Failure::Usage(e.to_string())),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_call(
    sensor: String,
    frames: usize,
    commands: Vec<String>,
    scenario: Option<PathBuf>,
    sensor_type: String,
    lat: f64,
    lon: f64,
    scscf: Option<SocketAddr>,
    timeout: u64,
) -> CmdResult {
    let target = World::sensor_uri(&sensor).map_err(|e| Failure::Usage(e.to_string()))?;
    let (got, state, infos) = if let Some(scscf) = scscf {
        let mut rt = LiveRuntime::new(LiveConfig {
            bind_ip: if scscf.ip().is_loopback() { scscf.ip() } else { LiveConfig::default().bind_ip },
            ..LiveConfig::default()
        });
        let proxy: Addr = SCSCF_ADDR.parse().expect("constant address");
        rt.map_peer(proxy.clone(), scscf);
        let caller_uri = "sip:cli@hommel.com".parse().expect("constant URI");
        let (id, _) = rt
            .add_node_on_socket(|a| Caller::new(Originator::new(caller_uri, a), proxy, frames).with_commands(commands))
            .map_err(runtime)?;
        rt.with_node(id, |c: &mut Caller, ctx| c.dial(ctx, target.clone()));
        rt.run_until(Duration::from_secs(timeout), |rt| {
            rt.node::<Caller>(id)
                .and_then(Caller::state)
                .is_some_and(|s| matches!(s, CallState::Ended | CallState::Failed(_)))
        });
        let c = rt.node::<Caller>(id).expect("caller node");
        let call = c.call.as_ref().expect("dialled");
        (c.frames().to_vec(), call.state.clone(), call.info_replies.clone())
    } else {
        let mut w = match &scenario {
            Some(p) => {
                let sc = load_scenario(p)?;
                run_scenario(&sc, WorldConfig::standard(sc.seed).map_err(runtime)?)?
            }
            None => {
                let mut w = World::standard(0).map_err(runtime)?;
                let p = w.sensor_profile(&sensor, &sensor_type, lat, lon).map_err(|e| Failure::Usage(e.to_string()))?;
                w.spawn_sensor(p).map_err(runtime)?;
                w.idle().map_err(runtime)?;
                w
            }
        };
        let id = w.call(&sensor, frames, commands).map_err(runtime)?;
        w.idle().map_err(runtime)?;
        for _ in 0..timeout {
            let done = w
                .caller(id)
                .and_then(Caller::state)
                .is_some_and(|s| matches!(s, CallState::Ended | CallState::Failed(_)));
            if done {
                break;
            }
            w.advance(1_000).map_err(runtime)?;
        }
        let c = w.caller(id).expect("caller node");
        let call = c.call.as_ref().expect("dialled");
        (c.frames().to_vec(), call.state.clone(), call.info_replies.clone())
    };
    for (code, body) in &infos {
        outln!("info {code} {body}");
    }
    for f in &got {
        outln!("{f}");
    }
    match state {
        CallState::Ended if got.len() >= frames => Ok(()),
        CallState::Failed(code) => Err(Failure::Runtime(format!("call to {target} failed with {code}"))),
        other => Err(Failure::Runtime(format!(
            "call to {target} stopped in state {other:?} after {} of {frames} frames",
            got.len()
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_serve(
    bind: IpAddr,
    base_port: u16,
    sensors: Vec<String>,
    mashup: bool,
    xdms_log: Option<PathBuf>,
    duration: Option<u64>,
    seed: u64,
) -> CmdResult {
    let mut cfg = WorldConfig::standard(seed).map_err(runtime)?;
    cfg.xdms_log = xdms_log;
    let live = LiveConfig { bind_ip: bind, base_port, seed };
    let mut d = LiveDeployment::start(live, &cfg).map_err(runtime)?;
    for spec in &sensors {
        let parts: Vec<&str> = spec.split(':').collect();
        let [name, ty, lat, lon] = parts[..] else {
            return Err(Failure::Usage(format!("sensor {spec:?} is not name:type:lat:lon")));
        };
        let lat: f64 = lat.parse().map_err(|_| Failure::Usage(format!("bad latitude in {spec:?}")))?;
        let lon: f64 = lon.parse().map_err(|_| Failure::Usage(format!("bad longitude in {spec:?}")))?;
        d.spawn_sensor(name, ty, lat, lon).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if mashup {
        d.start_mashup();
    }
    for (logical, sock) in d.rt.bindings() {
        outln!("{logical} -> udp {sock}");
    }
    let engine: Addr = ISSEE_ADDR.parse().expect("constant address");
    if let Some(s) = d.rt.socket_of(&engine) {
        outln!("query with: issee query --server {s} --type temperature");
    }
    match duration {
        Some(secs) => d.rt.run_for(Duration::from_secs(secs)),
        None => loop {
            d.rt.run_for(Duration::from_secs(3600));
        },
    }
    let st = d.rt.stats();
    outln!(
        "served {} s: {} sensors indexed, {} datagrams sent, {} received, {} dropped",
        duration.unwrap_or(0),
        d.engine().sensor_count(),
        st.sent,
        st.received,
        st.dropped
    );
    Ok(())
}

fn cmd_replay(log: PathBuf, prefix: Option<String>, documents: bool) -> CmdResult {
    let under = |p: &str| prefix.as_deref().is_none_or(|x| p.starts_with(x));
    if documents {
        let x = Xdms::open(&log).map_err(runtime)?;
        for (path, (content, version)) in x.snapshot() {
            if under(&path) {
                outln!("{path} v{version}\n{content}");
            }
        }
        return Ok(());
    }
    let buf = std::fs::read(&log).map_err(|e| Failure::Runtime(format!("{}: {e}", log.display())))?;
    let records = decode_log(&buf).map_err(runtime)?;
    for r in records.iter().filter(|r| under(&r.path)) {
        let kind = match r.kind {
            ChangeKind::Put => "put",
            ChangeKind::Delete => "delete",
        };
        outln!("{} {kind} {} {} bytes", r.version, r.path, r.content.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            scenario,
            trace,
            xdms_log,
            output_dir,
        } => cmd_run(scenario, trace, xdms_log, output_dir),
        Cmd::Query {
            scenario,
            server,
            sensor_type,
            country,
            town,
            near,
            poi,
            available_only,
            format,
        } => cmd_query(scenario, server, sensor_type, country, town, near, poi, available_only, format),
        Cmd::Call {
            sensor,
            frames,
            commands,
            scenario,
            sensor_type,
            lat,
            lon,
            scscf,
            timeout,
        } => cmd_call(sensor, frames, commands, scenario, sensor_type, lat, lon, scscf, timeout),
        Cmd::Serve {
            bind,
            base_port,
            sensors,
            mashup,
            xdms_log,
            duration,
            seed,
        } => cmd_serve(bind, base_port, sensors, mashup, xdms_log, duration, seed),
        Cmd::Replay { log, prefix, documents } => cmd_replay(log, prefix, documents),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
