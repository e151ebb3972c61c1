//! The standard topology: S-CSCF, search engine, presence server, XDMS,
//! feed server, sensors and applications on one simulated network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::call::Caller;
use crate::engine::{EngineConfig, GroupKey, IsseeEngine, SearchHandle};
use crate::feed::{FeedServer, NewsItem};
use crate::geo::{parse_pois, GeoError, Gazetteer, PoiEntry};
use crate::mashup::{MashupApp, MashupConfig, MediaStore, UserProfile};
use crate::netsim::{Addr, NetConfig, NodeId, SimError, Simulation};
use crate::presence::PresenceServer;
use crate::scscf::{parse_ifc, IfcDocument, IfcError, Scscf, ScscfConfig};
use crate::sensor::{SensorProfile, SensorUa};
use crate::sip::event::Originator;
use crate::sip::{SensorAnnotation, SipUri};
use crate::watcher::GroupWatcher;
use crate::xdms::{Xdms, XdmsError, XdmsHttpNode};

pub const DOMAIN: &str = "hommel.com";
pub const SCSCF_URI: &str = "sip:scscfl.hommel.com";
pub const SCSCF_ADDR: &str = "scscfl.hommel.com:5060";
/// Application server name as it appears in the service profile.
pub const ISSEE_SERVER_NAME: &str = "sip:issee@192.168.130.76:5050";
/// Request URI the S-CSCF uses toward the search engine.
pub const ISSEE_REQUEST_URI: &str = "sip:issee.hommel.com";
pub const ISSEE_URI: &str = "sip:issee@hommel.com";
pub const ISSEE_ADDR: &str = "192.168.130.76:5050";
pub const PRESENCE_URI: &str = "sip:ps.hommel.com";
pub const PRESENCE_ADDR: &str = "ps.hommel.com:5060";
pub const XDMS_ADDR: &str = "xdms.hommel.com:8080";
pub const FEED_ADDR: &str = "news.example.com:80";
pub const MASHUP_URI: &str = "sip:mashup@hommel.com";
pub const MASHUP_ADDR: &str = "mashup.hommel.com:5070";

pub const STEP_LIMIT: u64 = 50_000_000;

pub const BUNDLED_IFC: &str = include_str!("../fixtures/service_profile.xml");
pub const BUNDLED_GAZETTEER: &str = include_str!("../fixtures/gazetteer.txt");
pub const BUNDLED_POIS: &str = include_str!("../fixtures/pois.txt");
pub const BUNDLED_FEED: &str = include_str!("../fixtures/feed.txt");

/// Environment variable naming a directory that overrides bundled fixtures.
pub const FIXTURE_ENV: &str = "ISSEE_FIXTURES";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("service profile: {0}")]
    Ifc(#[from] IfcError),
    #[error("geo data: {0}")]
    Geo(#[from] GeoError),
    #[error("XDMS: {0}")]
    Xdms(#[from] XdmsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("no sensor {0}")]
    NoSensor(String),
    #[error("no application {0}")]
    NoApp(String),
    #[error("sensor profile: {0}")]
    Profile(String),
    #[error("{0}")]
    Other(String),
}

pub(crate) fn addr(s: &str) -> Addr {
    s.parse().expect("constant address")
}

pub(crate) fn uri(s: &str) -> SipUri {
    s.parse().expect("constant URI")
}

/// Reads `name` from the fixture override directory when set, else returns
/// the bundled text.
pub fn fixture_text(name: &str, bundled: &str) -> String {
    if let Ok(dir) = std::env::var(FIXTURE_ENV) {
        if let Ok(t) = std::fs::read_to_string(Path::new(&dir).join(name)) {
            return t;
        }
    }
    bundled.to_string()
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub net: NetConfig,
    pub ifc: IfcDocument,
    pub gazetteer: Gazetteer,
    pub pois: Vec<PoiEntry>,
    pub feed_text: String,
    pub profile: UserProfile,
    pub collect_frames: usize,
    pub xdms_log: Option<PathBuf>,
    pub media_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// When false the engine's address is left unbound.
    pub engine_bound: bool,
}

impl WorldConfig {
    /// Bundled fixtures (or the override directory), tracing on.
    pub fn standard(seed: u64) -> Result<Self, WorldError> {
        Ok(WorldConfig {
            net: NetConfig {
                seed,
                ..NetConfig::default()
            },
            ifc: parse_ifc(&fixture_text("service_profile.xml", BUNDLED_IFC))?,
            gazetteer: Gazetteer::parse(&fixture_text("gazetteer.txt", BUNDLED_GAZETTEER))?,
            pois: parse_pois(&fixture_text("pois.txt", BUNDLED_POIS))?,
            feed_text: fixture_text("feed.txt", BUNDLED_FEED),
            profile: UserProfile::new("alice", &["temperature", "humidity"]),
            collect_frames: 5,
            xdms_log: None,
            media_dir: None,
            output_dir: None,
            engine_bound: true,
        })
    }
}

/// The fixed nodes of a deployment, built but not yet placed on a network.
pub struct Infrastructure {
    pub scscf: Scscf,
    pub engine: IsseeEngine,
    pub presence: PresenceServer,
    pub xdms_http: XdmsHttpNode,
    pub feed: FeedServer,
    pub mashup: MashupApp,
    pub search: SearchHandle,
}

impl Infrastructure {
    pub fn build(cfg: &WorldConfig, xdms: Arc<Xdms>) -> Self {
        let mut sc = ScscfConfig::new(uri(SCSCF_URI), addr(SCSCF_ADDR), cfg.ifc.clone());
        sc.as_request_uris.push((uri(ISSEE_SERVER_NAME), uri(ISSEE_REQUEST_URI)));

        let mut ec = EngineConfig::new(uri(ISSEE_URI), addr(ISSEE_ADDR), addr(SCSCF_ADDR), addr(PRESENCE_ADDR));
        ec.gazetteer = Arc::new(cfg.gazetteer.clone());
        ec.pois = Arc::new(cfg.pois.clone());
        let engine = IsseeEngine::new(ec, xdms.clone());
        let search = engine.search_handle();

        let mut mc = MashupConfig::new(
            uri(MASHUP_URI),
            addr(MASHUP_ADDR),
            addr(SCSCF_ADDR),
            addr(FEED_ADDR),
            cfg.profile.clone(),
        );
        mc.collect_frames = cfg.collect_frames;
        mc.output_dir = cfg.output_dir.clone();
        let store = match &cfg.media_dir {
            Some(d) => MediaStore::on_disk(d),
            None => MediaStore::in_memory(),
        };
        Infrastructure {
            scscf: Scscf::new(sc),
            engine,
            presence: PresenceServer::new(uri(PRESENCE_URI), addr(PRESENCE_ADDR)),
            xdms_http: XdmsHttpNode::new(xdms),
            feed: FeedServer::new(cfg.feed_text.clone()),
            mashup: MashupApp::new(mc, search.clone(), store),
            search,
        }
    }
}

pub struct World {
    pub sim: Simulation,
    pub scscf: NodeId,
    pub engine: NodeId,
    pub presence: NodeId,
    pub feed: NodeId,
    pub xdms_node: NodeId,
    pub mashup: NodeId,
    pub xdms: Arc<Xdms>,
    pub search: SearchHandle,
    sensors: BTreeMap<String, NodeId>,
    apps: BTreeMap<String, NodeId>,
    next_host: u32,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        let mut sim = Simulation::new(cfg.net.clone());
        let xdms = Arc::new(match &cfg.xdms_log {
            Some(p) => Xdms::open(p)?,
            None => Xdms::new(),
        });
        let parts = Infrastructure::build(&cfg, xdms.clone());
        let search = parts.search.clone();
        let scscf = sim.add_node(parts.scscf, &[addr(SCSCF_ADDR)])?;
        let engine_addrs = if cfg.engine_bound { vec![addr(ISSEE_ADDR)] } else { vec![] };
        let engine = sim.add_node(parts.engine, &engine_addrs)?;
        let presence = sim.add_node(parts.presence, &[addr(PRESENCE_ADDR)])?;
        let xdms_node = sim.add_node(parts.xdms_http, &[addr(XDMS_ADDR)])?;
        let feed = sim.add_node(parts.feed, &[addr(FEED_ADDR)])?;
        let mashup = sim.add_node(parts.mashup, &[addr(MASHUP_ADDR)])?;

        Ok(World {
            sim,
            scscf,
            engine,
            presence,
            feed,
            xdms_node,
            mashup,
            xdms,
            search,
            sensors: BTreeMap::new(),
            apps: BTreeMap::new(),
            next_host: 1,
        })
    }

    pub fn standard(seed: u64) -> Result<Self, WorldError> {
        Self::new(WorldConfig::standard(seed)?)
    }

    /// `sensorA` becomes `sip:sensorA@hommel.com`; full URIs pass through.
    pub fn sensor_uri(name: &str) -> Result<SipUri, WorldError> {
        let text = if name.starts_with("sip:") {
            name.to_string()
        } else if name.contains('@') {
            format!("sip:{name}")
        } else {
            format!("sip:{name}@{DOMAIN}")
        };
        text.parse().map_err(|e| WorldError::Other(format!("bad sensor name {name:?}: {e}")))
    }

    fn next_addr(&mut self, port: u16) -> Addr {
        let n = self.next_host;
        self.next_host += 1;
        Addr::new(&format!("10.{}.{}.{}", 1 + n / 65_536, (n / 256) % 256, n % 256), port)
    }

    /// A profile with the next free sensor address and default timings.
    pub fn sensor_profile(&mut self, name: &str, sensor_type: &str, lat: f64, lon: f64) -> Result<SensorProfile, WorldError> {
        let uri = Self::sensor_uri(name)?;
        let annotation =
            SensorAnnotation::new(sensor_type, lat, lon).map_err(|e| WorldError::Profile(e.to_string()))?;
        let addr = self.next_addr(5060);
        Ok(SensorProfile::new(uri, addr, annotation))
    }

    pub fn spawn_sensor(&mut self, profile: SensorProfile) -> Result<NodeId, WorldError> {
        self.spawn_sensor_ua(SensorUa::new(profile, addr(SCSCF_ADDR), addr(PRESENCE_ADDR)))
    }

    pub fn spawn_sensor_ua(&mut self, ua: SensorUa) -> Result<NodeId, WorldError> {
        ua.profile().validate().map_err(|e| WorldError::Profile(e.to_string()))?;
        let key = ua.profile().uri.to_string();
        if self.sensors.contains_key(&key) {
            return Err(WorldError::Other(format!("sensor {key} already spawned")));
        }
        let a = ua.profile().addr.clone();
        let id = self.sim.add_node(ua, &[a])?;
        self.sim.with_node(id, |ua: &mut SensorUa, ctx| ua.start(ctx));
        self.sensors.insert(key, id);
        Ok(id)
    }

    pub fn sensor_id(&self, name: &str) -> Result<NodeId, WorldError> {
        let key = Self::sensor_uri(name)?.to_string();
        self.sensors.get(&key).copied().ok_or(WorldError::NoSensor(key))
    }

    pub fn sensor(&self, name: &str) -> Result<&SensorUa, WorldError> {
        let id = self.sensor_id(name)?;
        Ok(self.sim.node::<SensorUa>(id).expect("sensor node type"))
    }

    pub fn sensor_names(&self) -> impl Iterator<Item = &String> {
        self.sensors.keys()
    }

    /// Deregisters the sensor and stops its timers.
    pub fn kill_sensor(&mut self, name: &str) -> Result<(), WorldError> {
        let id = self.sensor_id(name)?;
        self.sim.with_node(id, |ua: &mut SensorUa, ctx| ua.deregister(ctx));
        Ok(())
    }

    /// Stops registration and presence refreshes.
    pub fn stop_refresh(&mut self, name: &str) -> Result<(), WorldError> {
        let id = self.sensor_id(name)?;
        self.sim.with_node(id, |ua: &mut SensorUa, ctx| ua.stop_refresh(ctx));
        Ok(())
    }

    pub fn stop_publishing(&mut self, name: &str) -> Result<(), WorldError> {
        let id = self.sensor_id(name)?;
        self.sim.with_node(id, |ua: &mut SensorUa, ctx| ua.stop_publishing(ctx));
        Ok(())
    }

    /// Adds an application that subscribes to one group document.
    pub fn subscribe_app(&mut self, name: &str, key: GroupKey) -> Result<NodeId, WorldError> {
        if self.apps.contains_key(name) {
            return Err(WorldError::Other(format!("application {name} already exists")));
        }
        let a = self.next_addr(5080);
        let me = Originator::new(Self::sensor_uri(name)?, a.clone());
        let w = GroupWatcher::new(me, uri(ISSEE_URI), addr(ISSEE_ADDR));
        let id = self.sim.add_node(w, &[a])?;
        self.sim
            .with_node(id, |w: &mut GroupWatcher, ctx| w.subscribe(ctx, key, 3600));
        self.apps.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn app(&self, name: &str) -> Result<&GroupWatcher, WorldError> {
        let id = *self.apps.get(name).ok_or_else(|| WorldError::NoApp(name.to_string()))?;
        Ok(self.sim.node::<GroupWatcher>(id).expect("watcher node type"))
    }

    /// Publishes a news item on the feed and hands it to the engine.
    pub fn news(&mut self, item: NewsItem) {
        let line = item.to_line();
        self.sim.with_node(self.feed, |f: &mut FeedServer, _| f.push_line(&line));
        self.sim
            .with_node(self.engine, |e: &mut IsseeEngine, ctx| e.add_news(ctx, item));
    }

    pub fn start_mashup(&mut self) {
        self.sim.with_node(self.mashup, |m: &mut MashupApp, ctx| m.start(ctx));
    }

    pub fn mashup(&self) -> &MashupApp {
        self.sim.node(self.mashup).expect("mashup node type")
    }

    pub fn engine(&self) -> &IsseeEngine {
        self.sim.node(self.engine).expect("engine node type")
    }

    pub fn scscf(&self) -> &Scscf {
        self.sim.node(self.scscf).expect("scscf node type")
    }

    pub fn presence(&self) -> &PresenceServer {
        self.sim.node(self.presence).expect("presence node type")
    }

    /// Places a call to a sensor from a fresh caller; returns the caller id.
    pub fn call(&mut self, name: &str, frames: usize, commands: Vec<String>) -> Result<NodeId, WorldError> {
        let target = Self::sensor_uri(name)?;
        let a = self.next_addr(5090);
        let me = Originator::new(uri(&format!("sip:caller{}@{DOMAIN}", self.next_host)), a.clone());
        let caller = Caller::new(me, addr(SCSCF_ADDR), frames).with_commands(commands);
        let id = self.sim.add_node(caller, &[a])?;
        self.sim.with_node(id, |c: &mut Caller, ctx| c.dial(ctx, target));
        Ok(id)
    }

    pub fn caller(&self, id: NodeId) -> Option<&Caller> {
        self.sim.node(id)
    }

    pub fn unbind_engine(&mut self) -> bool {
        self.sim.unbind(&addr(ISSEE_ADDR))
    }

    pub fn idle(&mut self) -> Result<u64, WorldError> {
        Ok(self.sim.run_until_idle(STEP_LIMIT)?)
    }

    /// Advances simulated time, then drains in-flight traffic.
    pub fn advance(&mut self, ms: u64) -> Result<(), WorldError> {
        self.sim.advance_clock(ms);
        self.idle()?;
        Ok(())
    }
}
