//! Deterministic datagram transport and virtual clock.
//!
//! Every simulated node implements [`Node`] and is bound to one or more
//! [`Addr`]esses. Handlers never touch the network directly: they push sends
//! and timer requests into a [`Ctx`], which the driver applies after the
//! handler returns. The same contract is used by the live UDP runtime in
//! [`crate::live`].
//!
//! Events are ordered by `(time, insertion sequence)`, so with the default
//! fixed latency datagrams between one pair of addresses arrive in send
//! order, and timers due at the same instant fire in the order they were
//! armed.

use std::any::Any;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sip::SipMessage;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Addr {
    pub host: String,
    pub port: u16,
}

impl Addr {
    pub fn new(host: &str, port: u16) -> Self {
        Addr {
            host: host.to_string(),
            port,
        }
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Addr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, p) = s.rsplit_once(':').ok_or_else(|| format!("missing port in {s:?}"))?;
        let port = p.parse().map_err(|_| format!("bad port in {s:?}"))?;
        if h.is_empty() {
            return Err(format!("empty host in {s:?}"));
        }
        Ok(Addr::new(h, port))
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(pub u64);

/// A simulated network participant.
pub trait Node: Any {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]);

    fn on_timer(&mut self, _ctx: &mut Ctx<'_>, _token: u64) {}
}

/// Handler-side view of the network: current time, randomness, and queues
/// for outgoing datagrams and timer changes.
pub struct Ctx<'a> {
    now: u64,
    rng: &'a mut ChaCha8Rng,
    next_timer: &'a mut u64,
    pub(crate) sends: Vec<(Addr, Addr, Vec<u8>)>,
    pub(crate) timers: Vec<(TimerId, u64, u64)>,
    pub(crate) cancels: Vec<TimerId>,
}

impl<'a> Ctx<'a> {
    pub(crate) fn new(now: u64, rng: &'a mut ChaCha8Rng, next_timer: &'a mut u64) -> Self {
        Ctx {
            now,
            rng,
            next_timer,
            sends: Vec::new(),
            timers: Vec::new(),
            cancels: Vec::new(),
        }
    }

    /// Milliseconds since the start of the run.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn send(&mut self, from: &Addr, to: &Addr, payload: Vec<u8>) {
        self.sends.push((from.clone(), to.clone(), payload));
    }

    pub fn send_sip(&mut self, from: &Addr, to: &Addr, msg: &SipMessage) {
        self.send(from, to, msg.to_bytes());
    }

    pub fn set_timer(&mut self, delay_ms: u64, token: u64) -> TimerId {
        let id = TimerId(*self.next_timer);
        *self.next_timer += 1;
        self.timers.push((id, delay_ms, token));
        id
    }

    pub fn cancel_timer(&mut self, id: TimerId) {
        self.cancels.push(id);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("address {0} already bound")]
    AddressInUse(Addr),
    #[error("step limit {0} exceeded before the simulation went idle")]
    StepLimitExceeded(u64),
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub seed: u64,
    pub latency_ms: u64,
    /// Extra uniformly distributed latency in `0..=jitter_ms`. Non-zero jitter
    /// can reorder datagrams.
    pub jitter_ms: u64,
    /// Probability of silently losing a datagram in flight.
    pub drop_rate: f64,
    pub trace: bool,
    /// Keep a copy of every datagram handed to the network.
    pub capture: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            seed: 0,
            latency_ms: 1,
            jitter_ms: 0,
            drop_rate: 0.0,
            trace: true,
            capture: false,
        }
    }
}

struct Delivery {
    from: Addr,
    to: Addr,
    payload: Vec<u8>,
}

struct TimerEntry {
    id: TimerId,
    node: NodeId,
    token: u64,
}

/// The virtual clock: current time plus armed timers.
#[derive(Default)]
pub struct SimClock {
    now: u64,
    timers: BTreeMap<(u64, u64), TimerEntry>,
    index: HashMap<TimerId, (u64, u64)>,
}

impl SimClock {
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending_timers(&self) -> usize {
        self.timers.len()
    }
}

pub struct Simulation {
    config: NetConfig,
    clock: SimClock,
    seq: u64,
    next_timer: u64,
    rng: ChaCha8Rng,
    nodes: Vec<Option<Box<dyn Node>>>,
    labels: Vec<String>,
    bindings: HashMap<Addr, NodeId>,
    deliveries: BTreeMap<(u64, u64), Delivery>,
    cancelled: HashSet<TimerId>,
    drops: u64,
    steps: u64,
    trace: Vec<String>,
    captured: Vec<Captured>,
}

/// A datagram as it was sent, kept when [`NetConfig::capture`] is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub at: u64,
    pub from: Addr,
    pub to: Addr,
    pub payload: Vec<u8>,
}

impl Simulation {
    pub fn new(config: NetConfig) -> Self {
        Simulation {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            clock: SimClock::default(),
            seq: 0,
            next_timer: 1,
            nodes: Vec::new(),
            labels: Vec::new(),
            bindings: HashMap::new(),
            deliveries: BTreeMap::new(),
            cancelled: HashSet::new(),
            drops: 0,
            steps: 0,
            trace: Vec::new(),
            captured: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.clock.now
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Total events processed since creation.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut s = self.trace.join("\n");
        s.push('\n');
        s
    }

    pub fn captured(&self) -> &[Captured] {
        &self.captured
    }

    pub fn pending_deliveries(&self) -> usize {
        self.deliveries.len()
    }

    pub fn add_node<N: Node>(&mut self, node: N, addrs: &[Addr]) -> Result<NodeId, SimError> {
        if let Some(a) = addrs.iter().find(|a| self.bindings.contains_key(*a)) {
            return Err(SimError::AddressInUse(a.clone()));
        }
        let id = self.nodes.len();
        self.nodes.push(Some(Box::new(node)));
        self.labels
            .push(addrs.first().map(Addr::to_string).unwrap_or_else(|| format!("node{id}")));
        for a in addrs {
            self.bindings.insert(a.clone(), id);
        }
        Ok(id)
    }

    /// Removes an address binding; later datagrams to it are dropped.
    pub fn unbind(&mut self, addr: &Addr) -> bool {
        self.bindings.remove(addr).is_some()
    }

    pub fn bind(&mut self, addr: Addr, node: NodeId) -> Result<(), SimError> {
        if self.bindings.contains_key(&addr) {
            return Err(SimError::AddressInUse(addr));
        }
        self.bindings.insert(addr, node);
        Ok(())
    }

    pub fn node_at(&self, addr: &Addr) -> Option<NodeId> {
        self.bindings.get(addr).copied()
    }

    pub fn node<T: Node>(&self, id: NodeId) -> Option<&T> {
        let n: &dyn Any = self.nodes.get(id)?.as_deref()?;
        n.downcast_ref()
    }

    pub fn node_mut<T: Node>(&mut self, id: NodeId) -> Option<&mut T> {
        let n: &mut dyn Any = self.nodes.get_mut(id)?.as_deref_mut()?;
        n.downcast_mut()
    }

    /// Runs `f` against a node with a live context; its sends and timers are
    /// applied afterwards as if a handler had run.
    pub fn with_node<T: Node, R>(
        &mut self,
        id: NodeId,
        f: impl FnOnce(&mut T, &mut Ctx<'_>) -> R,
    ) -> Option<R> {
        let mut node = self.nodes.get_mut(id)?.take()?;
        let r = match (node.as_mut() as &mut dyn Any).downcast_mut::<T>() {
            Some(typed) => {
                let mut ctx = Ctx::new(self.clock.now, &mut self.rng, &mut self.next_timer);
                let r = f(typed, &mut ctx);
                let (s, t, c) = (ctx.sends, ctx.timers, ctx.cancels);
                self.nodes[id] = Some(node);
                self.apply(id, s, t, c);
                Some(r)
            }
            None => {
                self.nodes[id] = Some(node);
                None
            }
        };
        r
    }

    /// Queues a datagram from outside any node (test drivers, scripted clients).
    pub fn inject(&mut self, from: &Addr, to: &Addr, payload: Vec<u8>) {
        self.enqueue(from.clone(), to.clone(), payload);
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn record(&mut self, kind: &str, from: &str, to: &str, summary: &str) {
        if self.config.trace {
            let line = format!("{} {} {} {} {}", self.clock.now, kind, from, to, summary);
            self.trace.push(line);
        }
    }

    fn enqueue(&mut self, from: Addr, to: Addr, payload: Vec<u8>) {
        if self.config.capture {
            self.captured.push(Captured {
                at: self.clock.now,
                from: from.clone(),
                to: to.clone(),
                payload: payload.clone(),
            });
        }
        let summary = summarize(&payload);
        if !self.bindings.contains_key(&to) {
            self.drops += 1;
            log::debug!("drop {from} -> {to}: unknown destination");
            self.record("drop", &from.to_string(), &to.to_string(), &summary);
            return;
        }
        self.record("send", &from.to_string(), &to.to_string(), &summary);
        if self.config.drop_rate > 0.0 && self.rng.gen_bool(self.config.drop_rate) {
            self.drops += 1;
            self.record("lost", &from.to_string(), &to.to_string(), &summary);
            return;
        }
        let jitter = if self.config.jitter_ms > 0 {
            self.rng.gen_range(0..=self.config.jitter_ms)
        } else {
            0
        };
        let at = self.clock.now + self.config.latency_ms + jitter;
        let seq = self.next_seq();
        self.deliveries.insert((at, seq), Delivery { from, to, payload });
    }

    fn apply(
        &mut self,
        node: NodeId,
        sends: Vec<(Addr, Addr, Vec<u8>)>,
        timers: Vec<(TimerId, u64, u64)>,
        cancels: Vec<TimerId>,
    ) {
        for (from, to, payload) in sends {
            self.enqueue(from, to, payload);
        }
        for (id, delay, token) in timers {
            let key = (self.clock.now + delay, self.next_seq());
            self.clock.timers.insert(key, TimerEntry { id, node, token });
            self.clock.index.insert(id, key);
        }
        for id in cancels {
            if let Some(key) = self.clock.index.remove(&id) {
                self.clock.timers.remove(&key);
            } else {
                self.cancelled.insert(id);
            }
        }
    }

    fn next_event(&self, horizon: Option<u64>) -> Option<(u64, u64, bool)> {
        let d = self.deliveries.keys().next().copied();
        let t = self.clock.timers.keys().next().copied();
        let pick = match (d, t) {
            (Some(d), Some(t)) => Some(if t < d { (t, true) } else { (d, false) }),
            (Some(d), None) => Some((d, false)),
            (None, Some(t)) => Some((t, true)),
            (None, None) => None,
        }?;
        let ((time, seq), is_timer) = pick;
        match horizon {
            Some(h) if time > h => None,
            _ => Some((time, seq, is_timer)),
        }
    }

    /// Processes one event; returns whether it was a timer firing.
    fn step(&mut self, time: u64, seq: u64, is_timer: bool) -> bool {
        self.clock.now = self.clock.now.max(time);
        self.steps += 1;
        if is_timer {
            let entry = self.clock.timers.remove(&(time, seq)).expect("timer present");
            self.clock.index.remove(&entry.id);
            if self.cancelled.remove(&entry.id) {
                return false;
            }
            let label = self.labels[entry.node].clone();
            self.record("timer", &label, "-", &format!("token={}", entry.token));
            self.dispatch(entry.node, |n, ctx| n.on_timer(ctx, entry.token));
            true
        } else {
            let d = self.deliveries.remove(&(time, seq)).expect("delivery present");
            let Some(&node) = self.bindings.get(&d.to) else {
                self.drops += 1;
                self.record("drop", &d.from.to_string(), &d.to.to_string(), &summarize(&d.payload));
                return false;
            };
            self.record("recv", &d.from.to_string(), &d.to.to_string(), &summarize(&d.payload));
            self.dispatch(node, |n, ctx| n.on_datagram(ctx, &d.to, &d.from, &d.payload));
            false
        }
    }

    fn dispatch(&mut self, id: NodeId, f: impl FnOnce(&mut dyn Node, &mut Ctx<'_>)) {
        let Some(mut node) = self.nodes[id].take() else {
            return;
        };
        let mut ctx = Ctx::new(self.clock.now, &mut self.rng, &mut self.next_timer);
        f(node.as_mut(), &mut ctx);
        let (s, t, c) = (ctx.sends, ctx.timers, ctx.cancels);
        self.nodes[id] = Some(node);
        self.apply(id, s, t, c);
    }

    /// Delivers datagrams until none are in flight, firing any timers that
    /// fall due on the way. Timers further out stay armed.
    pub fn run_until_idle(&mut self, limit: u64) -> Result<u64, SimError> {
        let mut steps = 0;
        while !self.deliveries.is_empty() {
            if steps >= limit {
                return Err(SimError::StepLimitExceeded(limit));
            }
            let (time, seq, is_timer) = self.next_event(None).expect("delivery pending");
            self.step(time, seq, is_timer);
            steps += 1;
        }
        Ok(steps)
    }

    /// Moves the clock forward by `delta_ms`, processing every delivery and
    /// timer due in the window in order. Returns the number of timers fired.
    pub fn advance_clock(&mut self, delta_ms: u64) -> usize {
        let target = self.clock.now + delta_ms;
        let mut fired = 0;
        while let Some((time, seq, is_timer)) = self.next_event(Some(target)) {
            if self.step(time, seq, is_timer) {
                fired += 1;
            }
        }
        self.clock.now = target;
        fired
    }
}

fn summarize(payload: &[u8]) -> String {
    let end = payload
        .iter()
        .position(|&b| b == b'\r' || b == b'\n')
        .unwrap_or(payload.len())
        .min(100);
    String::from_utf8_lossy(&payload[..end]).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Recorder {
        got: Vec<(Addr, Vec<u8>)>,
        fired: Vec<u64>,
        echo: bool,
    }

    impl Node for Recorder {
        fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
            self.got.push((from.clone(), payload.to_vec()));
            if self.echo {
                ctx.send(local, from, payload.to_vec());
            }
        }

        fn on_timer(&mut self, _ctx: &mut Ctx<'_>, token: u64) {
            self.fired.push(token);
        }
    }

    fn a(h: &str) -> Addr {
        Addr::new(h, 5060)
    }

    #[test]
    fn fifo_per_pair() {
        let mut sim = Simulation::new(NetConfig::default());
        let b = sim.add_node(Recorder::default(), &[a("b")]).unwrap();
        sim.inject(&a("a"), &a("b"), b"one".to_vec());
        sim.inject(&a("a"), &a("b"), b"two".to_vec());
        assert_eq!(sim.run_until_idle(10), Ok(2));
        let got: Vec<_> = sim.node::<Recorder>(b).unwrap().got.iter().map(|g| g.1.clone()).collect();
        assert_eq!(got, vec![b"one".to_vec(), b"two".to_vec()]);
        assert_eq!(sim.now(), 1);
    }

    #[test]
    fn capture_keeps_payloads_when_enabled() {
        let mut sim = Simulation::new(NetConfig {
            capture: true,
            ..NetConfig::default()
        });
        let b = sim.add_node(Recorder { echo: true, ..Recorder::default() }, &[a("b")]).unwrap();
        sim.inject(&a("a"), &a("b"), b"ping".to_vec());
        sim.run_until_idle(10).unwrap();
        let cap = sim.captured();
        assert_eq!(cap.len(), 2);
        assert_eq!(cap[1].from, a("b"));
        assert_eq!(cap[1].payload, b"ping".to_vec());
        assert_eq!(sim.node::<Recorder>(b).unwrap().got.len(), 1);

        let mut quiet = Simulation::new(NetConfig::default());
        quiet.inject(&a("a"), &a("b"), b"x".to_vec());
        assert!(quiet.captured().is_empty());
    }

    #[test]
    fn unbound_destination_counts_a_drop() {
        let mut sim = Simulation::new(NetConfig::default());
        sim.inject(&a("a"), &a("nowhere"), b"x".to_vec());
        assert_eq!(sim.drops(), 1);
        assert_eq!(sim.run_until_idle(10), Ok(0));
        assert!(sim.trace()[0].starts_with("0 drop a:5060 nowhere:5060 x"));
    }

    #[test]
    fn empty_simulation_is_idle() {
        let mut sim = Simulation::new(NetConfig::default());
        assert_eq!(sim.run_until_idle(1), Ok(0));
        assert_eq!(sim.advance_clock(0), 0);
    }

    #[test]
    fn ping_pong_hits_step_limit() {
        let mut sim = Simulation::new(NetConfig::default());
        sim.add_node(Recorder { echo: true, ..Default::default() }, &[a("x")]).unwrap();
        sim.add_node(Recorder { echo: true, ..Default::default() }, &[a("y")]).unwrap();
        sim.inject(&a("x"), &a("y"), b"ping".to_vec());
        assert_eq!(sim.run_until_idle(50), Err(SimError::StepLimitExceeded(50)));
    }

    #[test]
    fn timers_fire_in_deadline_then_insertion_order() {
        let mut sim = Simulation::new(NetConfig::default());
        let id = sim.add_node(Recorder::default(), &[a("t")]).unwrap();
        sim.with_node::<Recorder, _>(id, |_, ctx| {
            ctx.set_timer(10, 1);
            ctx.set_timer(5, 2);
            ctx.set_timer(10, 3);
            let gone = ctx.set_timer(7, 4);
            ctx.cancel_timer(gone);
        });
        assert_eq!(sim.advance_clock(9), 1);
        assert_eq!(sim.advance_clock(1), 2);
        assert_eq!(sim.node::<Recorder>(id).unwrap().fired, vec![2, 1, 3]);
        assert_eq!(sim.now(), 10);
    }

    #[test]
    fn clock_expiry_fires_once() {
        let mut sim = Simulation::new(NetConfig::default());
        let id = sim.add_node(Recorder::default(), &[a("t")]).unwrap();
        sim.with_node::<Recorder, _>(id, |_, ctx| ctx.set_timer(3_600_000, 9));
        assert_eq!(sim.advance_clock(3_599_999), 0);
        assert_eq!(sim.advance_clock(2), 1);
        assert_eq!(sim.advance_clock(10_000), 0);
    }

    #[test]
    fn address_in_use() {
        let mut sim = Simulation::new(NetConfig::default());
        sim.add_node(Recorder::default(), &[a("t")]).unwrap();
        assert_eq!(
            sim.add_node(Recorder::default(), &[a("t")]).err(),
            Some(SimError::AddressInUse(a("t")))
        );
    }

    #[test]
    fn jitter_run_is_reproducible() {
        let run = || {
            let mut sim = Simulation::new(NetConfig { seed: 7, jitter_ms: 5, ..Default::default() });
            sim.add_node(Recorder::default(), &[a("b")]).unwrap();
            for i in 0..20u8 {
                sim.inject(&a("a"), &a("b"), vec![b'0' + i % 10]);
            }
            sim.run_until_idle(100).unwrap();
            sim.trace_text()
        };
        assert_eq!(run(), run());
    }
}
