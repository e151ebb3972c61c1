//! Line-oriented scenario files driving a [`World`].
//!
//! ```text
//! scenario registration
//! seed 42
//! spawn sensorA temperature 48 2 cseq=70
//! advance 100ms
//! expect doc /sensors/sensorA%40hommel.com.xml exists
//! expect group by-type/temperature sensorA
//! ```
//!
//! Directives run strictly in order and the simulation is drained after
//! each one. `scenario` and `seed` must come before any other directive.
//!
//! | directive | arguments |
//! |---|---|
//! | `spawn` | `name type lat lon [cseq=N] [call-id=ID] [expires=S] [refresh=S] [publish=S] [publish-expires=S] [unit=U] [value=V \| ramp=V0,SLOPE \| script=V,V,..] [frame-ms=N] [actuator=yes\|no]` |
//! | `advance` | duration: `250`, `250ms`, `5s`, `2m`, `1h` |
//! | `kill` / `stop-refresh` / `stop-publish` | sensor name |
//! | `subscribe` | `app group-key` |
//! | `news` | a feed line: `slug \| keywords \| [lat,lon,r] \| headline` |
//! | `mashup` | starts the mash-up application |
//! | `call` | `sensor [frames=N] [command=name=value]...` |
//! | `unbind` | `issee` |
//! | `expect doc` | `path exists \| absent \| contains TEXT` |
//! | `expect group` | `key member... \| key empty` |
//! | `expect query` | `querystring member... \| querystring none` |
//! | `expect registered` | `sensor yes\|no` |
//! | `expect availability` | `sensor open\|closed` |
//! | `expect notifies` | `app N` |
//! | `expect call` | `sensor frames N` |
//! | `expect enriched` | `slug media N` |
//! | `expect trace` | `TEXT` (substring of some trace line) |
//! | `expect drops` | `N` |
//! | `expect coherent` | |

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::engine::{parse_group_document, parse_query_string, GroupKey};
use crate::feed::{parse_item, NewsItem};
use crate::netsim::{Addr, NodeId};
use crate::presence::Status;
use crate::sensor::{ReadingGenerator, SensorUa};
use crate::world::{World, WorldConfig, WorldError, PRESENCE_ADDR, SCSCF_ADDR};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {reason}")]
pub struct ScenarioParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("line {line}: expectation failed: {what}\n  expected: {expected}\n    actual: {actual}")]
    ExpectFailed {
        line: usize,
        what: String,
        expected: String,
        actual: String,
    },
    #[error("line {line}: {source}")]
    World {
        line: usize,
        #[source]
        source: WorldError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpawnSpec {
    pub name: String,
    pub sensor_type: String,
    pub lat: f64,
    pub lon: f64,
    pub cseq: Option<u32>,
    pub call_id: Option<String>,
    pub expires: Option<u32>,
    pub refresh: Option<u32>,
    pub publish: Option<u32>,
    pub publish_expires: Option<u32>,
    pub unit: Option<String>,
    pub generator: Option<ReadingGenerator>,
    pub frame_ms: Option<u64>,
    pub actuator: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    DocExists(String),
    DocAbsent(String),
    DocContains(String, String),
    Group(GroupKey, Vec<String>),
    Query(String, Vec<String>),
    Registered(String, bool),
    Availability(String, Status),
    Notifies(String, usize),
    CallFrames(String, usize),
    Enriched(String, usize),
    Trace(String),
    Drops(u64),
    Coherent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Spawn(SpawnSpec),
    Advance(u64),
    Kill(String),
    StopRefresh(String),
    StopPublish(String),
    Subscribe(String, GroupKey),
    News(NewsItem),
    Mashup,
    Call { sensor: String, frames: usize, commands: Vec<String> },
    UnbindEngine,
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub steps: Vec<(usize, Directive)>,
}

fn err(line: usize, reason: impl Into<String>) -> ScenarioParseError {
    ScenarioParseError {
        line,
        reason: reason.into(),
    }
}

pub fn parse_duration_ms(s: &str) -> Option<u64> {
    let (num, mult) = if let Some(n) = s.strip_suffix("ms") {
        (n, 1)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1_000)
    } else if let Some(n) = s.strip_suffix('m') {
        (n, 60_000)
    } else if let Some(n) = s.strip_suffix('h') {
        (n, 3_600_000)
    } else {
        (s, 1)
    };
    num.parse::<u64>().ok()?.checked_mul(mult)
}

fn parse_num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, ScenarioParseError> {
    s.parse().map_err(|_| err(line, format!("bad {what} {s:?}")))
}

fn parse_floats(line: usize, s: &str) -> Result<Vec<f64>, ScenarioParseError> {
    s.split(',').map(|v| parse_num(line, "number", v.trim())).collect()
}

fn parse_spawn(line: usize, args: &[&str]) -> Result<SpawnSpec, ScenarioParseError> {
    let [name, sensor_type, lat, lon, opts @ ..] = args else {
        return Err(err(line, "spawn needs: name type lat lon [options]"));
    };
    let mut spec = SpawnSpec {
        name: name.to_string(),
        sensor_type: sensor_type.to_string(),
        lat: parse_num(line, "latitude", lat)?,
        lon: parse_num(line, "longitude", lon)?,
        cseq: None,
        call_id: None,
        expires: None,
        refresh: None,
        publish: None,
        publish_expires: None,
        unit: None,
        generator: None,
        frame_ms: None,
        actuator: None,
    };
    for opt in opts {
        let (k, v) = opt
            .split_once('=')
            .ok_or_else(|| err(line, format!("option {opt:?} is not key=value")))?;
        match k {
            "cseq" => spec.cseq = Some(parse_num(line, k, v)?),
            "call-id" => spec.call_id = Some(v.to_string()),
            "expires" => spec.expires = Some(parse_num(line, k, v)?),
            "refresh" => spec.refresh = Some(parse_num(line, k, v)?),
            "publish" => spec.publish = Some(parse_num(line, k, v)?),
            "publish-expires" => spec.publish_expires = Some(parse_num(line, k, v)?),
            "unit" => spec.unit = Some(v.to_string()),
            "value" => spec.generator = Some(ReadingGenerator::Constant(parse_num(line, k, v)?)),
            "ramp" => match parse_floats(line, v)?[..] {
                [start, slope] => spec.generator = Some(ReadingGenerator::Ramp { start, slope }),
                _ => return Err(err(line, "ramp needs start,slope")),
            },
            "script" => spec.generator = Some(ReadingGenerator::Scripted(parse_floats(line, v)?)),
            "frame-ms" => spec.frame_ms = Some(parse_num(line, k, v)?),
            "actuator" => {
                spec.actuator = Some(match v {
                    "yes" | "true" => true,
                    "no" | "false" => false,
                    _ => return Err(err(line, "actuator is yes or no")),
                })
            }
            _ => return Err(err(line, format!("unknown spawn option {k:?}"))),
        }
    }
    Ok(spec)
}

fn one<'a>(line: usize, args: &[&'a str], what: &str) -> Result<&'a str, ScenarioParseError> {
    match args {
        [a] => Ok(a),
        _ => Err(err(line, format!("expected exactly one argument: {what}"))),
    }
}

fn parse_expect(line: usize, args: &[&str], rest: &str) -> Result<Expectation, ScenarioParseError> {
    let Some((kind, args)) = args.split_first() else {
        return Err(err(line, "expect needs a kind"));
    };
    let key = |s: &str| s.parse::<GroupKey>().map_err(|e| err(line, e.to_string()));
    Ok(match (*kind, args) {
        ("doc", [path, "exists"]) => Expectation::DocExists(path.to_string()),
        ("doc", [path, "absent"]) => Expectation::DocAbsent(path.to_string()),
        ("doc", [path, "contains", ..]) => {
            let text = rest
                .split_once("contains")
                .map(|(_, t)| t.trim().to_string())
                .unwrap_or_default();
            Expectation::DocContains(path.to_string(), text)
        }
        ("group", [k, "empty"]) => Expectation::Group(key(k)?, Vec::new()),
        ("group", [k, members @ ..]) if !members.is_empty() => {
            Expectation::Group(key(k)?, members.iter().map(|m| m.to_string()).collect())
        }
        ("query", [q, "none"]) => Expectation::Query(q.to_string(), Vec::new()),
        ("query", [q, members @ ..]) if !members.is_empty() => {
            Expectation::Query(q.to_string(), members.iter().map(|m| m.to_string()).collect())
        }
        ("registered", [s, yn]) => Expectation::Registered(
            s.to_string(),
            match *yn {
                "yes" => true,
                "no" => false,
                _ => return Err(err(line, "registered takes yes or no")),
            },
        ),
        ("availability", [s, st]) => Expectation::Availability(
            s.to_string(),
            match *st {
                "open" => Status::Open,
                "closed" => Status::Closed,
                _ => return Err(err(line, "availability is open or closed")),
            },
        ),
        ("notifies", [app, n]) => Expectation::Notifies(app.to_string(), parse_num(line, "count", n)?),
        ("call", [s, "frames", n]) => Expectation::CallFrames(s.to_string(), parse_num(line, "count", n)?),
        ("enriched", [slug, "media", n]) => Expectation::Enriched(slug.to_string(), parse_num(line, "count", n)?),
        ("trace", [_, ..]) => Expectation::Trace(rest.split_once("trace").map(|(_, t)| t.trim().to_string()).unwrap_or_default()),
        ("drops", [n]) => Expectation::Drops(parse_num(line, "count", n)?),
        ("coherent", []) => Expectation::Coherent,
        _ => return Err(err(line, format!("unrecognized expectation {:?}", rest.trim()))),
    })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioParseError> {
        let mut sc = Scenario {
            name: "unnamed".into(),
            seed: 0,
            steps: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (word, rest) = l.split_once(char::is_whitespace).unwrap_or((l, ""));
            let args: Vec<&str> = rest.split_whitespace().collect();
            let header = matches!(word, "scenario" | "seed");
            if header && !sc.steps.is_empty() {
                return Err(err(line, format!("{word} must precede other directives")));
            }
            let d = match word {
                "scenario" => {
                    sc.name = one(line, &args, "name")?.to_string();
                    continue;
                }
                "seed" => {
                    sc.seed = parse_num(line, "seed", one(line, &args, "seed")?)?;
                    continue;
                }
                "spawn" => Directive::Spawn(parse_spawn(line, &args)?),
                "advance" => {
                    let d = one(line, &args, "duration")?;
                    Directive::Advance(parse_duration_ms(d).ok_or_else(|| err(line, format!("bad duration {d:?}")))?)
                }
                "kill" => Directive::Kill(one(line, &args, "sensor")?.to_string()),
                "stop-refresh" => Directive::StopRefresh(one(line, &args, "sensor")?.to_string()),
                "stop-publish" => Directive::StopPublish(one(line, &args, "sensor")?.to_string()),
                "subscribe" => match args[..] {
                    [app, key] => Directive::Subscribe(
                        app.to_string(),
                        key.parse().map_err(|e: crate::engine::BadGroupKey| err(line, e.to_string()))?,
                    ),
                    _ => return Err(err(line, "subscribe needs: app group-key")),
                },
                "news" => Directive::News(parse_item(rest).map_err(|e| err(line, e))?),
                "mashup" => Directive::Mashup,
                "call" => {
                    let Some((sensor, opts)) = args.split_first() else {
                        return Err(err(line, "call needs a sensor"));
                    };
                    let mut frames = 5;
                    let mut commands = Vec::new();
                    for o in opts {
                        match o.split_once('=') {
                            Some(("frames", n)) => frames = parse_num(line, "frames", n)?,
                            Some(("command", c)) => commands.push(c.to_string()),
                            _ => return Err(err(line, format!("unknown call option {o:?}"))),
                        }
                    }
                    Directive::Call {
                        sensor: sensor.to_string(),
                        frames,
                        commands,
                    }
                }
                "unbind" => match one(line, &args, "node")? {
                    "issee" => Directive::UnbindEngine,
                    other => return Err(err(line, format!("cannot unbind {other:?}"))),
                },
                "expect" => Directive::Expect(parse_expect(line, &args, rest)?),
                other => return Err(err(line, format!("unknown directive {other:?}"))),
            };
            sc.steps.push((line, d));
        }
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioParseError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| err(0, format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Runs on a fresh standard world.
    pub fn run(&self) -> Result<ScenarioRun, (RunError, Box<ScenarioRun>)> {
        let cfg = WorldConfig::standard(self.seed).map_err(|e| {
            let run = ScenarioRun {
                world: None,
                calls: BTreeMap::new(),
            };
            (RunError::World { line: 0, source: e }, Box::new(run))
        })?;
        self.run_with(cfg)
    }

    /// Runs on a world built from `cfg` (its seed is replaced by the scenario's).
    pub fn run_with(&self, mut cfg: WorldConfig) -> Result<ScenarioRun, (RunError, Box<ScenarioRun>)> {
        cfg.net.seed = self.seed;
        let mut run = ScenarioRun {
            world: None,
            calls: BTreeMap::new(),
        };
        match World::new(cfg) {
            Ok(w) => run.world = Some(w),
            Err(e) => return Err((RunError::World { line: 0, source: e }, Box::new(run))),
        }
        for (line, d) in &self.steps {
            if let Err(e) = run.step(*line, d) {
                return Err((e, Box::new(run)));
            }
        }
        Ok(run)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (seed {}, {} steps)", self.name, self.seed, self.steps.len())
    }
}

pub struct ScenarioRun {
    pub world: Option<World>,
    pub calls: BTreeMap<String, NodeId>,
}

fn const_addr(s: &str) -> Addr {
    s.parse().expect("constant address")
}

fn fail(line: usize, what: &str, expected: impl fmt::Display, actual: impl fmt::Display) -> RunError {
    RunError::ExpectFailed {
        line,
        what: what.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

fn uri_list(names: &[String]) -> Result<Vec<String>, WorldError> {
    let mut v: Vec<String> = names
        .iter()
        .map(|n| World::sensor_uri(n).map(|u| u.to_string()))
        .collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn show(list: &[String]) -> String {
    if list.is_empty() {
        "(none)".into()
    } else {
        list.join(" ")
    }
}

impl ScenarioRun {
    pub fn world(&self) -> &World {
        self.world.as_ref().expect("world built")
    }

    pub fn trace_text(&self) -> String {
        self.world.as_ref().map(|w| w.sim.trace_text()).unwrap_or_default()
    }

    fn step(&mut self, line: usize, d: &Directive) -> Result<(), RunError> {
        let wrap = |source: WorldError| RunError::World { line, source };
        let w = self.world.as_mut().expect("world built");
        match d {
            Directive::Spawn(s) => {
                let mut p = w.sensor_profile(&s.name, &s.sensor_type, s.lat, s.lon).map_err(wrap)?;
                if let Some(c) = s.cseq {
                    p.initial_cseq = c;
                }
                if let Some(e) = s.expires {
                    p.reg_expires_s = e;
                    p.reg_interval_s = s.refresh.unwrap_or((e / 2).max(1));
                } else if let Some(r) = s.refresh {
                    p.reg_interval_s = r;
                }
                if let Some(e) = s.publish_expires {
                    p.publish_expires_s = e;
                    p.publish_interval_s = s.publish.unwrap_or((e / 2).max(1));
                } else if let Some(r) = s.publish {
                    p.publish_interval_s = r;
                }
                if let Some(u) = &s.unit {
                    p.unit = u.clone();
                }
                if let Some(g) = &s.generator {
                    p.generator = g.clone();
                }
                if let Some(f) = s.frame_ms {
                    p.frame_interval_ms = f;
                }
                if let Some(a) = s.actuator {
                    p.actuator_capable = a;
                }
                let mut ua = SensorUa::new(p, const_addr(SCSCF_ADDR), const_addr(PRESENCE_ADDR));
                if let Some(c) = &s.call_id {
                    ua = ua.with_call_id(c);
                }
                w.spawn_sensor_ua(ua).map_err(wrap)?;
            }
            Directive::Advance(ms) => w.advance(*ms).map_err(wrap)?,
            Directive::Kill(s) => w.kill_sensor(s).map_err(wrap)?,
            Directive::StopRefresh(s) => w.stop_refresh(s).map_err(wrap)?,
            Directive::StopPublish(s) => w.stop_publishing(s).map_err(wrap)?,
            Directive::Subscribe(app, key) => {
                w.subscribe_app(app, key.clone()).map_err(wrap)?;
            }
            Directive::News(item) => w.news(item.clone()),
            Directive::Mashup => w.start_mashup(),
            Directive::Call {
                sensor,
                frames,
                commands,
            } => {
                let id = w.call(sensor, *frames, commands.clone()).map_err(wrap)?;
                let key = World::sensor_uri(sensor).map_err(wrap)?.to_string();
                self.calls.insert(key, id);
            }
            Directive::UnbindEngine => {
                w.unbind_engine();
            }
            Directive::Expect(e) => return self.check(line, e),
        }
        self.world.as_mut().expect("world built").idle().map_err(wrap)?;
        Ok(())
    }

    fn check(&self, line: usize, e: &Expectation) -> Result<(), RunError> {
        let wrap = |source: WorldError| RunError::World { line, source };
        let w = self.world();
        match e {
            Expectation::DocExists(p) => {
                if w.xdms.document(p).is_none() {
                    return Err(fail(line, &format!("document {p}"), "exists", "absent"));
                }
            }
            Expectation::DocAbsent(p) => {
                if let Some(d) = w.xdms.document(p) {
                    return Err(fail(line, &format!("document {p}"), "absent", format!("version {}", d.version)));
                }
            }
            Expectation::DocContains(p, text) => {
                let content = w.xdms.document(p).map(|d| d.content.to_string());
                if !content.as_deref().is_some_and(|c| c.contains(text.as_str())) {
                    return Err(fail(
                        line,
                        &format!("document {p}"),
                        format!("contains {text:?}"),
                        content.unwrap_or_else(|| "(absent)".into()),
                    ));
                }
            }
            Expectation::Group(key, names) => {
                let want = uri_list(names).map_err(wrap)?;
                let got = w
                    .xdms
                    .document(&key.path())
                    .and_then(|d| parse_group_document(&d.content))
                    .map(|(_, m)| m)
                    .unwrap_or_default();
                if got != want {
                    return Err(fail(line, &format!("group {key}"), show(&want), show(&got)));
                }
            }
            Expectation::Query(q, names) => {
                let want = uri_list(names).map_err(wrap)?;
                let got = parse_query_string(q)
                    .and_then(|(f, _)| w.search.query(&f))
                    .map(|r| r.iter().map(|d| d.uri_string()).collect::<Vec<_>>())
                    .map_err(|e| fail(line, &format!("query {q}"), show(&want), e))?;
                if got != want {
                    return Err(fail(line, &format!("query {q}"), show(&want), show(&got)));
                }
            }
            Expectation::Registered(s, yes) => {
                let uri = World::sensor_uri(s).map_err(wrap)?;
                let got = w.scscf().is_registered(&uri);
                if got != *yes {
                    return Err(fail(line, &format!("registration of {uri}"), yes, got));
                }
            }
            Expectation::Availability(s, st) => {
                let uri = World::sensor_uri(s).map_err(wrap)?;
                let got = w.engine().descriptor(&uri).map(|d| d.availability.to_string());
                if got.as_deref() != Some(st.as_str()) {
                    return Err(fail(
                        line,
                        &format!("availability of {uri}"),
                        st,
                        got.unwrap_or_else(|| "(not indexed)".into()),
                    ));
                }
            }
            Expectation::Notifies(app, n) => {
                let got = w.app(app).map_err(wrap)?.notifications.len();
                if got != *n {
                    return Err(fail(line, &format!("NOTIFYs received by {app}"), n, got));
                }
            }
            Expectation::CallFrames(s, n) => {
                let key = World::sensor_uri(s).map_err(wrap)?.to_string();
                let got = self
                    .calls
                    .get(&key)
                    .and_then(|id| w.caller(*id))
                    .map(|c| c.frames().len())
                    .unwrap_or(0);
                if got != *n {
                    return Err(fail(line, &format!("frames received from {key}"), n, got));
                }
            }
            Expectation::Enriched(slug, n) => {
                let doc = w.mashup().documents().iter().find(|d| &d.news_slug == slug);
                let got = doc.map(|d| d.media_refs.len().to_string());
                if got.as_deref() != Some(n.to_string().as_str()) {
                    return Err(fail(
                        line,
                        &format!("media refs in enriched document {slug}"),
                        n,
                        got.unwrap_or_else(|| "(no document)".into()),
                    ));
                }
            }
            Expectation::Trace(text) => {
                if !w.sim.trace().iter().any(|l| l.contains(text.as_str())) {
                    return Err(fail(line, "trace", format!("a line containing {text:?}"), "no such line"));
                }
            }
            Expectation::Drops(n) => {
                if w.sim.drops() != *n {
                    return Err(fail(line, "transport drops", n, w.sim.drops()));
                }
            }
            Expectation::Coherent => {
                if let Err(e) = w.engine().audit() {
                    return Err(fail(line, "index coherence", "coherent", e));
                }
            }
        }
        Ok(())
    }
}
