//! Simulated sensor user agents.
//!
//! A sensor registers with its annotation in Contact parameters, publishes
//! presence, and refreshes both on timers. It accepts INVITE data sessions
//! and, once ACKed, streams one text frame per tick to the address named in
//! the INVITE body until BYE. Camera-like sensors also take `pan`, `tilt`
//! and `zoom` commands as in-dialog INFO requests.
//!
//! Session descriptor body: `data <host>:<port> text-frames`.
//! Frame: `<ts> <value> <unit> <seq>`.

use std::collections::BTreeMap;
use std::fmt;

use crate::netsim::{Addr, Ctx, Node, TimerId};
use crate::presence::{presence_document, Status, PRESENCE_CONTENT_TYPE};
use crate::scscf::build_register;
use crate::sip::{
    make_response, new_branch, new_call_id, new_tag, parse_message, CSeq, Header, Method, NameAddr,
    SensorAnnotation, SipMessage, SipUri, Via,
};

pub const DEFAULT_MAX_SESSIONS: usize = 4;
pub const SESSION_CONTENT_TYPE: &str = "text/x-data-session";

#[derive(Debug, Clone, PartialEq)]
pub enum ReadingGenerator {
    Constant(f64),
    Ramp { start: f64, slope: f64 },
    /// Cycles through the list.
    Scripted(Vec<f64>),
}

impl ReadingGenerator {
    /// Reading for frame `seq` (1-based).
    pub fn value(&self, seq: u64) -> f64 {
        let n = seq.saturating_sub(1);
        match self {
            ReadingGenerator::Constant(v) => *v,
            ReadingGenerator::Ramp { start, slope } => start + slope * n as f64,
            ReadingGenerator::Scripted(list) => list[(n % list.len() as u64) as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorProfile {
    pub uri: SipUri,
    pub addr: Addr,
    pub annotation: SensorAnnotation,
    pub reg_expires_s: u32,
    pub reg_interval_s: u32,
    pub publish_expires_s: u32,
    pub publish_interval_s: u32,
    pub generator: ReadingGenerator,
    pub unit: String,
    pub actuator_capable: bool,
    pub frame_interval_ms: u64,
    pub max_sessions: usize,
    /// CSeq of the first REGISTER.
    pub initial_cseq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProfileError {
    #[error("refresh intervals must be positive and shorter than the lifetimes")]
    Interval,
    #[error("scripted readings need at least one value")]
    EmptyScript,
}

impl SensorProfile {
    pub fn new(uri: SipUri, addr: Addr, annotation: SensorAnnotation) -> Self {
        let actuator_capable = annotation.sensor_type == "camera";
        SensorProfile {
            uri,
            addr,
            annotation,
            reg_expires_s: 3600,
            reg_interval_s: 1800,
            publish_expires_s: 600,
            publish_interval_s: 300,
            generator: ReadingGenerator::Constant(20.0),
            unit: "C".into(),
            actuator_capable,
            frame_interval_ms: 1000,
            max_sessions: DEFAULT_MAX_SESSIONS,
            initial_cseq: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let ok = self.reg_interval_s > 0
            && self.publish_interval_s > 0
            && self.reg_interval_s < self.reg_expires_s
            && self.publish_interval_s < self.publish_expires_s
            && self.frame_interval_ms > 0;
        if !ok {
            return Err(ProfileError::Interval);
        }
        if matches!(&self.generator, ReadingGenerator::Scripted(v) if v.is_empty()) {
            return Err(ProfileError::EmptyScript);
        }
        Ok(())
    }

    pub fn contact_uri(&self) -> SipUri {
        let mut c = SipUri::new(self.uri.user.as_deref(), &self.addr.host);
        c.port = Some(self.addr.port);
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataFrame {
    pub timestamp: u64,
    pub value: f64,
    pub unit: String,
    pub seq: u64,
}

impl fmt::Display for DataFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.timestamp, self.value, self.unit, self.seq)
    }
}

impl DataFrame {
    pub fn parse(line: &str) -> Option<Self> {
        let mut it = line.split_ascii_whitespace();
        let f = DataFrame {
            timestamp: it.next()?.parse().ok()?,
            value: it.next()?.parse().ok()?,
            unit: it.next()?.to_string(),
            seq: it.next()?.parse().ok()?,
        };
        it.next().is_none().then_some(f)
    }
}

pub fn session_descriptor(addr: &Addr) -> String {
    format!("data {addr} text-frames")
}

pub fn parse_session_descriptor(body: &str) -> Option<Addr> {
    let mut it = body.split_ascii_whitespace();
    if it.next()? != "data" {
        return None;
    }
    let addr = it.next()?.parse().ok()?;
    (it.next()? == "text-frames").then_some(addr)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActuatorState {
    pub pan: f64,
    pub tilt: f64,
    pub zoom: f64,
}

impl fmt::Display for ActuatorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pan={};tilt={};zoom={}", self.pan, self.tilt, self.zoom)
    }
}

impl ActuatorState {
    /// Applies `name=value` lines in order; nothing changes on error.
    pub fn apply(&mut self, body: &str) -> Result<(), String> {
        let mut next = *self;
        let mut any = false;
        for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (name, value) = line.split_once('=').ok_or_else(|| format!("expected name=value, got {line:?}"))?;
            let v: f64 = value
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| format!("bad value {value:?}"))?;
            match name.trim() {
                "pan" => next.pan = v,
                "tilt" => next.tilt = v,
                "zoom" => next.zoom = v,
                other => return Err(format!("unknown control {other:?}")),
            }
            any = true;
        }
        if !any {
            return Err("empty command".into());
        }
        *self = next;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegState {
    Idle,
    Registering,
    Registered,
    Deregistered,
    Failed(String),
}

#[derive(Debug)]
struct Session {
    data_to: Addr,
    acked: bool,
    seq: u64,
    token: u64,
    timer: Option<TimerId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SensorStats {
    pub registers_sent: u64,
    pub publishes_sent: u64,
    pub sessions_accepted: u64,
    pub sessions_refused: u64,
    pub frames_sent: u64,
}

const TOKEN_REGISTER: u64 = 1;
const TOKEN_PUBLISH: u64 = 2;
const TOKEN_SESSION_BASE: u64 = 1 << 32;

pub struct SensorUa {
    profile: SensorProfile,
    scscf: Addr,
    presence: Addr,
    reg_state: RegState,
    reg_call_id: String,
    reg_cseq: u32,
    reg_timer: Option<TimerId>,
    pub_timer: Option<TimerId>,
    pub_cseq: u32,
    etag: Option<String>,
    refreshing: bool,
    sessions: BTreeMap<String, Session>,
    next_session_token: u64,
    actuator: ActuatorState,
    stats: SensorStats,
}

impl SensorUa {
    pub fn new(profile: SensorProfile, scscf: Addr, presence: Addr) -> Self {
        SensorUa {
            reg_cseq: profile.initial_cseq.saturating_sub(1),
            profile,
            scscf,
            presence,
            reg_state: RegState::Idle,
            reg_call_id: String::new(),
            reg_timer: None,
            pub_timer: None,
            pub_cseq: 0,
            etag: None,
            refreshing: true,
            sessions: BTreeMap::new(),
            next_session_token: TOKEN_SESSION_BASE,
            actuator: ActuatorState::default(),
            stats: SensorStats::default(),
        }
    }

    /// Fixes the REGISTER Call-ID (otherwise one is drawn at start).
    pub fn with_call_id(mut self, call_id: &str) -> Self {
        self.reg_call_id = call_id.to_string();
        self
    }

    pub fn profile(&self) -> &SensorProfile {
        &self.profile
    }

    pub fn reg_state(&self) -> &RegState {
        &self.reg_state
    }

    pub fn stats(&self) -> SensorStats {
        self.stats
    }

    pub fn actuator(&self) -> ActuatorState {
        self.actuator
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Sends the initial REGISTER and PUBLISH and arms the refresh timers.
    pub fn start(&mut self, ctx: &mut Ctx<'_>) {
        if self.reg_call_id.is_empty() {
            self.reg_call_id = new_call_id(ctx.rng());
        }
        self.reg_state = RegState::Registering;
        self.send_register(ctx, self.profile.reg_expires_s);
        self.send_publish(ctx, true, self.profile.publish_expires_s);
        self.reg_timer = Some(ctx.set_timer(u64::from(self.profile.reg_interval_s) * 1000, TOKEN_REGISTER));
        self.pub_timer = Some(ctx.set_timer(u64::from(self.profile.publish_interval_s) * 1000, TOKEN_PUBLISH));
    }

    /// Fault injection: stop refreshing registration and presence.
    pub fn stop_refresh(&mut self, ctx: &mut Ctx<'_>) {
        self.refreshing = false;
        for t in [self.reg_timer.take(), self.pub_timer.take()].into_iter().flatten() {
            ctx.cancel_timer(t);
        }
    }

    /// Stops presence refreshes only; registration keeps going.
    pub fn stop_publishing(&mut self, ctx: &mut Ctx<'_>) {
        if let Some(t) = self.pub_timer.take() {
            ctx.cancel_timer(t);
        }
    }

    /// Deregisters (Expires 0), withdraws presence and stops all timers.
    pub fn deregister(&mut self, ctx: &mut Ctx<'_>) {
        self.stop_refresh(ctx);
        self.send_register(ctx, 0);
        if self.etag.is_some() {
            self.send_publish(ctx, false, 0);
        }
        self.reg_state = RegState::Deregistered;
        for (_, s) in std::mem::take(&mut self.sessions) {
            if let Some(t) = s.timer {
                ctx.cancel_timer(t);
            }
        }
    }

    fn me(&self) -> &Addr {
        &self.profile.addr
    }

    fn via(&self, ctx: &mut Ctx<'_>) -> Via {
        let port = (self.profile.addr.port != crate::sip::DEFAULT_SIP_PORT).then_some(self.profile.addr.port);
        Via::udp(&self.profile.addr.host, port, &new_branch(ctx.rng()))
    }

    fn send_register(&mut self, ctx: &mut Ctx<'_>, expires: u32) {
        self.reg_cseq += 1;
        let msg = build_register(
            &self.profile.uri,
            &self.profile.contact_uri(),
            Some(&self.profile.annotation),
            expires,
            &self.reg_call_id,
            self.reg_cseq,
            ctx.rng(),
        );
        self.stats.registers_sent += 1;
        ctx.send_sip(&self.profile.addr, &self.scscf, &msg);
    }

    fn send_publish(&mut self, ctx: &mut Ctx<'_>, full: bool, expires: u32) {
        self.pub_cseq += 1;
        let id = &self.profile.uri;
        let mut msg = SipMessage::request(Method::Publish, id.clone())
            .with(Header::Via(self.via(ctx)))
            .with(Header::MaxForwards(70))
            .with(Header::From(NameAddr::new(id.clone()).with_param("tag", Some(&new_tag(ctx.rng())))))
            .with(Header::To(NameAddr::new(id.clone())))
            .with(Header::CallId(new_call_id(ctx.rng())))
            .with(Header::CSeq(CSeq {
                seq: self.pub_cseq,
                method: Method::Publish,
            }))
            .with(Header::other("Event", "presence"))
            .with(Header::Expires(expires));
        match (&self.etag, full) {
            (Some(tag), false) => msg.headers.push(Header::other("SIP-If-Match", tag.clone())),
            _ => {
                let doc = presence_document(id, Status::Open, Some(&self.profile.annotation.sensor_type));
                msg = msg.with_body(PRESENCE_CONTENT_TYPE, doc);
            }
        }
        self.stats.publishes_sent += 1;
        ctx.send_sip(&self.profile.addr, &self.presence, &msg);
    }

    fn handle_response(&mut self, ctx: &mut Ctx<'_>, resp: &SipMessage) {
        let code = resp.status().unwrap_or(0);
        match resp.cseq().map(|c| c.method) {
            Some(Method::Register) if code >= 200 => {
                if self.reg_state == RegState::Deregistered {
                    return;
                }
                if code < 300 {
                    self.reg_state = RegState::Registered;
                } else {
                    let reason = format!("REGISTER rejected: {code} {}", reason_of(resp));
                    log::error!("{}: {reason}", self.profile.uri);
                    self.stop_refresh(ctx);
                    self.reg_state = RegState::Failed(reason);
                }
            }
            Some(Method::Publish) if code >= 200 => {
                if code < 300 {
                    if let Some(tag) = resp.header("SIP-ETag") {
                        self.etag = Some(tag);
                    }
                } else if code == 412 && self.refreshing {
                    self.etag = None;
                    self.send_publish(ctx, true, self.profile.publish_expires_s);
                }
            }
            _ => {}
        }
    }

    fn reply(&self, ctx: &mut Ctx<'_>, req: &SipMessage, resp: &SipMessage) {
        if let Some(v) = req.top_via() {
            ctx.send_sip(self.me(), &v.sent_by(), resp);
        }
    }

    fn contact(&self) -> Header {
        Header::Contact(crate::sip::Contact::Addr(NameAddr::new(self.profile.contact_uri())))
    }

    pub fn handle_invite(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let call_id = req.call_id().unwrap_or_default().to_string();
        if !self.sessions.contains_key(&call_id) {
            if self.sessions.len() >= self.profile.max_sessions {
                self.stats.sessions_refused += 1;
                let resp = make_response(req, 486, "Busy Here");
                self.reply(ctx, req, &resp);
                return;
            }
            let data_to = parse_session_descriptor(req.body_str())
                .or_else(|| req.contact_addrs().next().map(|c| c.uri.transport_addr()));
            let Some(data_to) = data_to else {
                let resp = make_response(req, 400, "No Data Channel");
                self.reply(ctx, req, &resp);
                return;
            };
            let token = self.next_session_token;
            self.next_session_token += 1;
            self.sessions.insert(
                call_id,
                Session {
                    data_to,
                    acked: false,
                    seq: 0,
                    token,
                    timer: None,
                },
            );
            self.stats.sessions_accepted += 1;
        }
        let resp = make_response(req, 200, "OK")
            .with(self.contact())
            .with_body(SESSION_CONTENT_TYPE, session_descriptor(self.me()));
        self.reply(ctx, req, &resp);
    }

    fn handle_ack(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let interval = self.profile.frame_interval_ms;
        let Some(s) = req.call_id().and_then(|c| self.sessions.get_mut(c)) else { return };
        if !s.acked {
            s.acked = true;
            s.timer = Some(ctx.set_timer(interval, s.token));
        }
    }

    fn handle_bye(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let found = req.call_id().and_then(|c| self.sessions.remove(c));
        let resp = match found {
            Some(s) => {
                if let Some(t) = s.timer {
                    ctx.cancel_timer(t);
                }
                make_response(req, 200, "OK")
            }
            None => make_response(req, 481, "Call/Transaction Does Not Exist"),
        };
        self.reply(ctx, req, &resp);
    }

    pub fn handle_actuator(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let in_dialog = req.call_id().is_some_and(|c| self.sessions.contains_key(c));
        let resp = if !in_dialog {
            make_response(req, 481, "Call/Transaction Does Not Exist")
        } else if !self.profile.actuator_capable {
            make_response(req, 501, "Not Implemented")
        } else {
            match self.actuator.apply(req.body_str()) {
                Ok(()) => make_response(req, 200, "OK").with_body("text/plain", self.actuator.to_string()),
                Err(e) => make_response(req, 400, &format!("Bad Command ({e})")),
            }
        };
        self.reply(ctx, req, &resp);
    }

    fn emit_frame(&mut self, ctx: &mut Ctx<'_>, call_id: &str) {
        let interval = self.profile.frame_interval_ms;
        let unit = if self.profile.actuator_capable {
            format!("{};{}", self.profile.unit, self.actuator)
        } else {
            self.profile.unit.clone()
        };
        let Some(s) = self.sessions.get_mut(call_id) else { return };
        s.seq += 1;
        let frame = DataFrame {
            timestamp: ctx.now(),
            value: self.profile.generator.value(s.seq),
            unit,
            seq: s.seq,
        };
        let to = s.data_to.clone();
        s.timer = Some(ctx.set_timer(interval, s.token));
        self.stats.frames_sent += 1;
        ctx.send(&self.profile.addr, &to, frame.to_string().into_bytes());
    }
}

fn reason_of(resp: &SipMessage) -> &str {
    match &resp.start {
        crate::sip::StartLine::Response { reason, .. } => reason,
        _ => "",
    }
}

impl Node for SensorUa {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: &Addr, from: &Addr, payload: &[u8]) {
        let msg = match parse_message(payload) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("{}: unparseable datagram from {from}: {e}", self.profile.uri);
                return;
            }
        };
        match msg.method() {
            None => self.handle_response(ctx, &msg),
            Some(Method::Invite) => self.handle_invite(ctx, &msg),
            Some(Method::Ack) => self.handle_ack(ctx, &msg),
            Some(Method::Bye) => self.handle_bye(ctx, &msg),
            Some(Method::Info) => self.handle_actuator(ctx, &msg),
            Some(_) => {
                let resp = make_response(&msg, 405, "Method Not Allowed");
                self.reply(ctx, &msg, &resp);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        match token {
            TOKEN_REGISTER if self.refreshing => {
                self.send_register(ctx, self.profile.reg_expires_s);
                self.reg_timer = Some(ctx.set_timer(u64::from(self.profile.reg_interval_s) * 1000, TOKEN_REGISTER));
            }
            TOKEN_PUBLISH if self.refreshing => {
                self.send_publish(ctx, self.etag.is_none(), self.profile.publish_expires_s);
                self.pub_timer = Some(ctx.set_timer(u64::from(self.profile.publish_interval_s) * 1000, TOKEN_PUBLISH));
            }
            t if t >= TOKEN_SESSION_BASE => {
                let call_id = self
                    .sessions
                    .iter()
                    .find(|(_, s)| s.token == t)
                    .map(|(c, _)| c.clone());
                if let Some(c) = call_id {
                    self.emit_frame(ctx, &c);
                }
            }
            _ => {}
        }
    }
}
