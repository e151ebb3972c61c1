//! Runs the same [`Node`]s over real UDP sockets with wall-clock timers.
//!
//! Each logical address handed to [`LiveRuntime::add_node`] is bound to
//! `bind_ip:base_port+i`, where `i` counts bound addresses in order
//! (`base_port` 0 picks ephemeral ports). Peers in other processes are made
//! reachable with [`LiveRuntime::map_peer`]. Datagrams from unknown sockets
//! appear to nodes as coming from `ip:port`, so replies find their way back.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{IsseeEngine, SearchHandle};
use crate::mashup::MashupApp;
use crate::netsim::{Addr, Ctx, Node, NodeId, TimerId};
use crate::scscf::Scscf;
use crate::sensor::{SensorProfile, SensorUa};
use crate::sip::SensorAnnotation;
use crate::world::{
    addr, Infrastructure, World, WorldConfig, WorldError, FEED_ADDR, ISSEE_ADDR, MASHUP_ADDR, PRESENCE_ADDR,
    SCSCF_ADDR, XDMS_ADDR,
};
use crate::xdms::Xdms;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub bind_ip: IpAddr,
    pub base_port: u16,
    pub seed: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            bind_ip: IpAddr::V4(Ipv4Addr::LOCALHOST),
            base_port: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LiveStats {
    pub sent: u64,
    pub received: u64,
    pub dropped: u64,
    pub timers_fired: u64,
}

struct Bound {
    logical: Addr,
    socket: UdpSocket,
    node: NodeId,
}

pub struct LiveRuntime {
    cfg: LiveConfig,
    start: Instant,
    rng: ChaCha8Rng,
    next_timer: u64,
    seq: u64,
    nodes: Vec<Option<Box<dyn Node>>>,
    bound: Vec<Bound>,
    local: HashMap<Addr, usize>,
    to_socket: HashMap<Addr, SocketAddr>,
    to_logical: HashMap<SocketAddr, Addr>,
    timers: BTreeMap<(u64, u64), (TimerId, NodeId, u64)>,
    timer_keys: HashMap<TimerId, (u64, u64)>,
    stats: LiveStats,
}

impl LiveRuntime {
    pub fn new(cfg: LiveConfig) -> Self {
        LiveRuntime {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            start: Instant::now(),
            next_timer: 1,
            seq: 0,
            nodes: Vec::new(),
            bound: Vec::new(),
            local: HashMap::new(),
            to_socket: HashMap::new(),
            to_logical: HashMap::new(),
            timers: BTreeMap::new(),
            timer_keys: HashMap::new(),
            stats: LiveStats::default(),
        }
    }

    /// Milliseconds since the runtime was created.
    pub fn now(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    pub fn stats(&self) -> LiveStats {
        self.stats
    }

    pub fn add_node<N: Node>(&mut self, node: N, addrs: &[Addr]) -> io::Result<NodeId> {
        let id = self.nodes.len();
        for a in addrs {
            if self.local.contains_key(a) {
                return Err(io::Error::new(io::ErrorKind::AddrInUse, format!("{a} already bound")));
            }
        }
        let mut sockets = Vec::new();
        for a in addrs {
            let port = match self.next_port()? {
                0 => 0,
                p => p
                    .checked_add(sockets.len() as u16)
                    .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "port range exhausted"))?,
            };
            let s = UdpSocket::bind(SocketAddr::new(self.cfg.bind_ip, port))?;
            s.set_nonblocking(true)?;
            sockets.push((a.clone(), s));
        }
        self.nodes.push(Some(Box::new(node)));
        for (a, s) in sockets {
            let sa = s.local_addr()?;
            log::info!("{a} listening on udp {sa}");
            self.local.insert(a.clone(), self.bound.len());
            self.to_socket.insert(a.clone(), sa);
            self.to_logical.insert(sa, a.clone());
            self.bound.push(Bound {
                logical: a,
                socket: s,
                node: id,
            });
        }
        Ok(id)
    }

    fn next_port(&self) -> io::Result<u16> {
        match self.cfg.base_port {
            0 => Ok(0),
            base => base
                .checked_add(self.bound.len() as u16)
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "port range exhausted")),
        }
    }

    /// Binds the next socket and uses its real address as the node's logical
    /// one, so peers in other processes can reach it directly.
    pub fn add_node_on_socket<N: Node>(&mut self, make: impl FnOnce(Addr) -> N) -> io::Result<(NodeId, Addr)> {
        let s = UdpSocket::bind(SocketAddr::new(self.cfg.bind_ip, self.next_port()?))?;
        s.set_nonblocking(true)?;
        let sa = s.local_addr()?;
        let a = Addr::new(&sa.ip().to_string(), sa.port());
        let id = self.nodes.len();
        self.nodes.push(Some(Box::new(make(a.clone()))));
        self.local.insert(a.clone(), self.bound.len());
        self.to_socket.insert(a.clone(), sa);
        self.to_logical.insert(sa, a.clone());
        self.bound.push(Bound {
            logical: a.clone(),
            socket: s,
            node: id,
        });
        Ok((id, a))
    }

    /// Logical addresses bound in this process with their sockets.
    pub fn bindings(&self) -> Vec<(Addr, SocketAddr)> {
        self.bound
            .iter()
            .map(|b| (b.logical.clone(), self.to_socket[&b.logical]))
            .collect()
    }

    /// The real socket a logical address is bound or mapped to.
    pub fn socket_of(&self, a: &Addr) -> Option<SocketAddr> {
        self.to_socket.get(a).copied()
    }

    /// Makes a logical address that lives in another process reachable.
    pub fn map_peer(&mut self, logical: Addr, socket: SocketAddr) {
        self.to_logical.insert(socket, logical.clone());
        self.to_socket.insert(logical, socket);
    }

    pub fn node<T: Node>(&self, id: NodeId) -> Option<&T> {
        let n: &dyn Any = self.nodes.get(id)?.as_deref()?;
        n.downcast_ref()
    }

    pub fn with_node<T: Node, R>(&mut self, id: NodeId, f: impl FnOnce(&mut T, &mut Ctx<'_>) -> R) -> Option<R> {
        let mut node = self.nodes.get_mut(id)?.take()?;
        let now = self.now();
        let out = match (node.as_mut() as &mut dyn Any).downcast_mut::<T>() {
            Some(typed) => {
                let mut ctx = Ctx::new(now, &mut self.rng, &mut self.next_timer);
                let r = f(typed, &mut ctx);
                let parts = (ctx.sends, ctx.timers, ctx.cancels);
                Some((r, parts))
            }
            None => None,
        };
        self.nodes[id] = Some(node);
        let (r, (s, t, c)) = out?;
        self.apply(id, now, s, t, c);
        Some(r)
    }

    fn dispatch(&mut self, id: NodeId, f: impl FnOnce(&mut dyn Node, &mut Ctx<'_>)) {
        let Some(mut node) = self.nodes.get_mut(id).and_then(Option::take) else { return };
        let now = self.now();
        let mut ctx = Ctx::new(now, &mut self.rng, &mut self.next_timer);
        f(node.as_mut(), &mut ctx);
        let (s, t, c) = (ctx.sends, ctx.timers, ctx.cancels);
        self.nodes[id] = Some(node);
        self.apply(id, now, s, t, c);
    }

    fn apply(
        &mut self,
        node: NodeId,
        now: u64,
        sends: Vec<(Addr, Addr, Vec<u8>)>,
        timers: Vec<(TimerId, u64, u64)>,
        cancels: Vec<TimerId>,
    ) {
        for (from, to, payload) in sends {
            self.transmit(&from, &to, &payload);
        }
        for (id, delay, token) in timers {
            self.seq += 1;
            let key = (now + delay, self.seq);
            self.timers.insert(key, (id, node, token));
            self.timer_keys.insert(id, key);
        }
        for id in cancels {
            if let Some(key) = self.timer_keys.remove(&id) {
                self.timers.remove(&key);
            }
        }
    }

    fn resolve(&self, to: &Addr) -> Option<SocketAddr> {
        self.to_socket
            .get(to)
            .copied()
            .or_else(|| to.host.parse::<IpAddr>().ok().map(|ip| SocketAddr::new(ip, to.port)))
    }

    fn transmit(&mut self, from: &Addr, to: &Addr, payload: &[u8]) {
        let (Some(&i), Some(dest)) = (self.local.get(from), self.resolve(to)) else {
            self.stats.dropped += 1;
            log::debug!("drop {from} -> {to}: no route");
            return;
        };
        match self.bound[i].socket.send_to(payload, dest) {
            Ok(_) => self.stats.sent += 1,
            Err(e) => {
                self.stats.dropped += 1;
                log::warn!("send {from} -> {to} ({dest}) failed: {e}");
            }
        }
    }

    fn fire_due_timers(&mut self) -> usize {
        let mut fired = 0;
        loop {
            let now = self.now();
            let Some((&key, _)) = self.timers.iter().next() else { break };
            if key.0 > now {
                break;
            }
            let (id, node, token) = self.timers.remove(&key).expect("present");
            self.timer_keys.remove(&id);
            self.stats.timers_fired += 1;
            fired += 1;
            self.dispatch(node, |n, ctx| n.on_timer(ctx, token));
        }
        fired
    }

    fn receive_ready(&mut self) -> usize {
        let mut buf = vec![0u8; 65_536];
        let mut got = 0;
        for i in 0..self.bound.len() {
            loop {
                let (n, src) = match self.bound[i].socket.recv_from(&mut buf) {
                    Ok(r) => r,
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                    Err(e) => {
                        log::warn!("recv on {} failed: {e}", self.bound[i].logical);
                        break;
                    }
                };
                got += 1;
                self.stats.received += 1;
                let from = match self.to_logical.get(&src) {
                    Some(a) => a.clone(),
                    None => {
                        let a = Addr::new(&src.ip().to_string(), src.port());
                        self.to_logical.insert(src, a.clone());
                        self.to_socket.insert(a.clone(), src);
                        a
                    }
                };
                let local = self.bound[i].logical.clone();
                let node = self.bound[i].node;
                let payload = buf[..n].to_vec();
                self.dispatch(node, |nd, ctx| nd.on_datagram(ctx, &local, &from, &payload));
            }
        }
        got
    }

    /// Handles whatever is ready; sleeps briefly when nothing was.
    pub fn poll_once(&mut self) -> usize {
        let n = self.fire_due_timers() + self.receive_ready();
        if n == 0 {
            let idle = self
                .timers
                .keys()
                .next()
                .map(|k| k.0.saturating_sub(self.now()))
                .unwrap_or(5)
                .clamp(0, 5);
            std::thread::sleep(Duration::from_millis(idle.max(1)));
        }
        n
    }

    pub fn run_for(&mut self, d: Duration) {
        let end = Instant::now() + d;
        while Instant::now() < end {
            self.poll_once();
        }
    }

    /// Polls until `done` holds or `limit` elapses; returns whether it held.
    pub fn run_until(&mut self, limit: Duration, mut done: impl FnMut(&Self) -> bool) -> bool {
        let end = Instant::now() + limit;
        loop {
            if done(self) {
                return true;
            }
            if Instant::now() >= end {
                return false;
            }
            self.poll_once();
        }
    }
}

/// The standard deployment (S-CSCF, iSSEE, presence, XDMS, feed, mash-up)
/// on real sockets, with sensors hosted in the same process.
pub struct LiveDeployment {
    pub rt: LiveRuntime,
    pub engine: NodeId,
    pub scscf: NodeId,
    pub mashup: NodeId,
    pub xdms: Arc<Xdms>,
    pub search: SearchHandle,
    sensors: BTreeMap<String, NodeId>,
}

impl LiveDeployment {
    pub fn start(live: LiveConfig, cfg: &WorldConfig) -> Result<Self, WorldError> {
        let xdms = Arc::new(match &cfg.xdms_log {
            Some(p) => Xdms::open(p)?,
            None => Xdms::new(),
        });
        let parts = Infrastructure::build(cfg, xdms.clone());
        let mut rt = LiveRuntime::new(live);
        let io = |e: io::Error| WorldError::Other(e.to_string());
        let scscf = rt.add_node(parts.scscf, &[addr(SCSCF_ADDR)]).map_err(io)?;
        let engine = rt.add_node(parts.engine, &[addr(ISSEE_ADDR)]).map_err(io)?;
        rt.add_node(parts.presence, &[addr(PRESENCE_ADDR)]).map_err(io)?;
        rt.add_node(parts.xdms_http, &[addr(XDMS_ADDR)]).map_err(io)?;
        rt.add_node(parts.feed, &[addr(FEED_ADDR)]).map_err(io)?;
        let mashup = rt.add_node(parts.mashup, &[addr(MASHUP_ADDR)]).map_err(io)?;
        Ok(LiveDeployment {
            rt,
            engine,
            scscf,
            mashup,
            xdms,
            search: parts.search,
            sensors: BTreeMap::new(),
        })
    }

    pub fn spawn_sensor(&mut self, name: &str, sensor_type: &str, lat: f64, lon: f64) -> Result<NodeId, WorldError> {
        let uri = World::sensor_uri(name)?;
        let annotation =
            SensorAnnotation::new(sensor_type, lat, lon).map_err(|e| WorldError::Profile(e.to_string()))?;
        SensorProfile::new(uri.clone(), Addr::new("0.0.0.0", 0), annotation.clone())
            .validate()
            .map_err(|e| WorldError::Profile(e.to_string()))?;
        let (id, _) = self
            .rt
            .add_node_on_socket(|a| {
                let profile = SensorProfile::new(uri.clone(), a, annotation);
                SensorUa::new(profile, addr(SCSCF_ADDR), addr(PRESENCE_ADDR))
            })
            .map_err(|e| WorldError::Other(e.to_string()))?;
        self.rt.with_node(id, |ua: &mut SensorUa, ctx| ua.start(ctx));
        self.sensors.insert(uri.to_string(), id);
        Ok(id)
    }

    pub fn start_mashup(&mut self) {
        self.rt.with_node(self.mashup, |m: &mut MashupApp, ctx| m.start(ctx));
    }

    pub fn engine(&self) -> &IsseeEngine {
        self.rt.node(self.engine).expect("engine node type")
    }

    pub fn scscf(&self) -> &Scscf {
        self.rt.node(self.scscf).expect("scscf node type")
    }

    pub fn mashup(&self) -> &MashupApp {
        self.rt.node(self.mashup).expect("mashup node type")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Echo {
        got: Vec<(Addr, Vec<u8>)>,
        fired: Vec<u64>,
        reply: bool,
    }

    impl Node for Echo {
        fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
            self.got.push((from.clone(), payload.to_vec()));
            if self.reply {
                ctx.send(local, from, payload.to_vec());
            }
        }

        fn on_timer(&mut self, _ctx: &mut Ctx<'_>, token: u64) {
            self.fired.push(token);
        }
    }

    #[test]
    fn deployment_indexes_a_sensor_over_udp() {
        let cfg = WorldConfig::standard(1).unwrap();
        let mut d = LiveDeployment::start(LiveConfig::default(), &cfg).unwrap();
        d.spawn_sensor("live1", "temperature", 48.0, 2.0).unwrap();
        let engine = d.engine;
        let ok = d.rt.run_until(Duration::from_secs(5), |rt| {
            rt.node::<IsseeEngine>(engine).is_some_and(|e| e.sensor_count() == 1)
        });
        assert!(ok, "sensor never indexed: {:?}", d.rt.stats());
        assert_eq!(d.search.members(&crate::engine::GroupKey::by_type("temperature")).len(), 1);
        assert!(d.xdms.document("/sensors/live1%40hommel.com.xml").is_some());
    }

    #[test]
    fn round_trip_over_loopback() {
        let mut rt = LiveRuntime::new(LiveConfig::default());
        let a = Addr::new("a.test", 1);
        let b = Addr::new("b.test", 2);
        let ia = rt.add_node(Echo::default(), std::slice::from_ref(&a)).unwrap();
        let ib = rt
            .add_node(
                Echo {
                    reply: true,
                    ..Echo::default()
                },
                std::slice::from_ref(&b),
            )
            .unwrap();
        rt.with_node(ia, |_: &mut Echo, ctx| ctx.send(&a, &b, b"hello".to_vec()));
        let ok = rt.run_until(Duration::from_secs(2), |rt| !rt.node::<Echo>(ia).unwrap().got.is_empty());
        assert!(ok);
        assert_eq!(rt.node::<Echo>(ib).unwrap().got, vec![(a.clone(), b"hello".to_vec())]);
        assert_eq!(rt.node::<Echo>(ia).unwrap().got, vec![(b, b"hello".to_vec())]);
        assert_eq!(rt.stats().sent, 2);
    }

    #[test]
    fn timers_fire_and_cancel() {
        let mut rt = LiveRuntime::new(LiveConfig::default());
        let id = rt.add_node(Echo::default(), &[Addr::new("t.test", 1)]).unwrap();
        rt.with_node(id, |_: &mut Echo, ctx| {
            ctx.set_timer(5, 1);
            let t = ctx.set_timer(10, 2);
            ctx.cancel_timer(t);
            ctx.set_timer(20, 3);
        });
        rt.run_for(Duration::from_millis(60));
        assert_eq!(rt.node::<Echo>(id).unwrap().fired, vec![1, 3]);
    }

    #[test]
    fn unroutable_send_is_dropped() {
        let mut rt = LiveRuntime::new(LiveConfig::default());
        let a = Addr::new("a.test", 1);
        let id = rt.add_node(Echo::default(), std::slice::from_ref(&a)).unwrap();
        rt.with_node(id, |_: &mut Echo, ctx| ctx.send(&a, &Addr::new("nowhere.test", 9), vec![1]));
        assert_eq!(rt.stats().dropped, 1);
    }

    #[test]
    fn unknown_sender_gets_replies() {
        let mut rt = LiveRuntime::new(LiveConfig::default());
        let b = Addr::new("b.test", 2);
        rt.add_node(
            Echo {
                reply: true,
                ..Echo::default()
            },
            std::slice::from_ref(&b),
        )
        .unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        client.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        client.send_to(b"ping", rt.socket_of(&b).unwrap()).unwrap();
        rt.run_for(Duration::from_millis(50));
        let mut buf = [0u8; 16];
        let (n, _) = client.recv_from(&mut buf).unwrap();
        assert_eq!(&buf[..n], b"ping");
    }
}
