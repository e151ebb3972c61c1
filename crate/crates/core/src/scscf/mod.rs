//! Minimal S-CSCF: registrar with binding lifetimes, initial filter criteria
//! on REGISTER, third-party registration toward triggered application
//! servers, the `reg` event package, and request routing to registered
//! contacts.

mod ifc;

use std::collections::{BTreeMap, HashMap};

use crate::netsim::{Addr, Ctx, Node, TimerId};
use crate::sip::event::{Accepted, EventPackage, Originator, SubState, SubscriptionTable};
use crate::sip::{
    extract_sensor_annotation, make_response, new_branch, new_call_id, new_tag, parse_message,
    CSeq, Contact, Header, Method, NameAddr, SensorAnnotation, SipMessage, SipUri, Via,
};

pub use ifc::{
    evaluate_ifc, parse_ifc, ContentPattern, DefaultHandling, IfcDocument, IfcError, IfcRule,
    ServicePointTrigger, SptKind,
};

/// Session case applied to REGISTER from the served user.
pub const SESSION_CASE_ORIGINATING: u8 = 0;
pub const DEFAULT_REGISTER_EXPIRES: u32 = 3600;
/// How long a third-party REGISTER may stay unanswered before the
/// application server counts as unreachable (RFC 3261 timer F).
pub const THIRD_PARTY_TIMEOUT_MS: u64 = 32_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrarBinding {
    pub public_identity: SipUri,
    pub contact: NameAddr,
    pub annotation: Option<SensorAnnotation>,
    pub registered_at: u64,
    pub expires_at: u64,
    pub call_id: String,
    pub cseq: u32,
    /// Call-ID used for third-party registrations on behalf of this binding.
    pub third_party_call_id: String,
}

impl RegistrarBinding {
    pub fn remaining_secs(&self, now: u64) -> u64 {
        self.expires_at.saturating_sub(now).div_ceil(1000)
    }
}

#[derive(Debug, Clone)]
pub struct ScscfConfig {
    pub uri: SipUri,
    pub addr: Addr,
    pub default_ifc: IfcDocument,
    /// Per-identity service profiles overriding `default_ifc`.
    pub profiles: HashMap<SipUri, IfcDocument>,
    /// Request URI to use for a given application server name; defaults to
    /// the host part of the server name.
    pub as_request_uris: Vec<(SipUri, SipUri)>,
    pub default_expires: u32,
}

impl ScscfConfig {
    pub fn new(uri: SipUri, addr: Addr, default_ifc: IfcDocument) -> Self {
        ScscfConfig {
            uri,
            addr,
            default_ifc,
            profiles: HashMap::new(),
            as_request_uris: Vec::new(),
            default_expires: DEFAULT_REGISTER_EXPIRES,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScscfStats {
    pub registrations: u64,
    pub expirations: u64,
    pub deregistrations: u64,
    pub third_party_sent: u64,
    pub third_party_failed: u64,
    pub rejected: u64,
}

struct PendingThirdParty {
    identity: SipUri,
    handling: DefaultHandling,
    timer: TimerId,
}

type BindingKey = (SipUri, SipUri);

pub struct Scscf {
    config: Originator,
    settings: ScscfConfig,
    bindings: BTreeMap<BindingKey, RegistrarBinding>,
    expiry_timers: HashMap<u64, (BindingKey, TimerId)>,
    binding_timer: HashMap<BindingKey, u64>,
    next_token: u64,
    reg_subs: SubscriptionTable,
    pending: HashMap<String, PendingThirdParty>,
    pending_by_token: HashMap<u64, String>,
    stats: ScscfStats,
}

const TOKEN_THIRD_PARTY: u64 = 1 << 62;

impl Scscf {
    pub fn new(settings: ScscfConfig) -> Self {
        Scscf {
            config: Originator::new(settings.uri.clone(), settings.addr.clone()),
            settings,
            bindings: BTreeMap::new(),
            expiry_timers: HashMap::new(),
            binding_timer: HashMap::new(),
            next_token: 1,
            reg_subs: SubscriptionTable::new(),
            pending: HashMap::new(),
            pending_by_token: HashMap::new(),
            stats: ScscfStats::default(),
        }
    }

    pub fn addr(&self) -> &Addr {
        &self.settings.addr
    }

    pub fn stats(&self) -> ScscfStats {
        self.stats
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    pub fn bindings(&self) -> impl Iterator<Item = &RegistrarBinding> {
        self.bindings.values()
    }

    pub fn bindings_for(&self, identity: &SipUri) -> Vec<&RegistrarBinding> {
        let id = identity.identity();
        self.bindings
            .range((id.clone(), SipUri::new(None, ""))..)
            .take_while(|((i, _), _)| *i == id)
            .map(|(_, b)| b)
            .collect()
    }

    pub fn is_registered(&self, identity: &SipUri) -> bool {
        !self.bindings_for(identity).is_empty()
    }

    pub fn reg_subscriptions(&self) -> &SubscriptionTable {
        &self.reg_subs
    }

    fn profile(&self, identity: &SipUri) -> &IfcDocument {
        self.settings
            .profiles
            .get(identity)
            .unwrap_or(&self.settings.default_ifc)
    }

    fn reply(&self, ctx: &mut Ctx<'_>, req: &SipMessage, resp: &SipMessage) {
        if let Some(via) = req.top_via() {
            ctx.send_sip(&self.settings.addr, &via.sent_by(), resp);
        }
    }

    /// REGISTER from a served user.
    pub fn handle_register(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let now = ctx.now();
        let Some(to) = req.to() else { return };
        let identity = to.uri.identity();
        let annotation = match extract_sensor_annotation(req) {
            Ok(a) => a,
            Err(e) => {
                self.stats.rejected += 1;
                log::info!("rejecting REGISTER for {identity}: {e}");
                let resp = make_response(req, 400, &format!("Invalid Sensor Annotation ({e})"));
                self.reply(ctx, req, &resp);
                return;
            }
        };
        let call_id = req.call_id().unwrap_or_default().to_string();
        let cseq = req.cseq().map(|c| c.seq).unwrap_or_default();
        let header_expires = req.expires();

        let mut changed_to_active = false;
        let mut removed_any = false;

        if req.contacts().any(|c| *c == Contact::Wildcard) {
            if header_expires != Some(0) {
                let resp = make_response(req, 400, "Wildcard Contact Requires Expires 0");
                self.reply(ctx, req, &resp);
                return;
            }
            let keys: Vec<_> = self.bindings_for(&identity).iter().map(|b| (identity.clone(), b.contact.uri.identity())).collect();
            for k in keys {
                removed_any |= self.remove_binding(ctx, &k);
                self.stats.deregistrations += 1;
            }
        }

        // reject out-of-order refreshes before touching any binding
        for c in req.contact_addrs() {
            let key = (identity.clone(), c.uri.identity());
            if let Some(b) = self.bindings.get(&key) {
                if b.call_id == call_id && cseq <= b.cseq {
                    self.stats.rejected += 1;
                    let resp = make_response(req, 400, "CSeq Out Of Order");
                    self.reply(ctx, req, &resp);
                    return;
                }
            }
        }

        let mut any_active = false;
        for c in req.contact_addrs() {
            let key = (identity.clone(), c.uri.identity());
            let expires = c
                .expires()
                .or(header_expires)
                .unwrap_or(self.settings.default_expires);
            if expires == 0 {
                if self.remove_binding(ctx, &key) {
                    removed_any = true;
                    self.stats.deregistrations += 1;
                }
                continue;
            }
            any_active = true;
            self.stats.registrations += 1;
            let expires_at = now + u64::from(expires) * 1000;
            let third_party_call_id = match self.bindings.get(&key) {
                Some(b) => b.third_party_call_id.clone(),
                None => {
                    changed_to_active = true;
                    new_call_id(ctx.rng())
                }
            };
            let registered_at = self.bindings.get(&key).map(|b| b.registered_at).unwrap_or(now);
            self.bindings.insert(
                key.clone(),
                RegistrarBinding {
                    public_identity: identity.clone(),
                    contact: c.clone(),
                    annotation: annotation.clone(),
                    registered_at,
                    expires_at,
                    call_id: call_id.clone(),
                    cseq,
                    third_party_call_id,
                },
            );
            self.arm_expiry(ctx, key, expires);
        }

        let mut resp = make_response(req, 200, "OK");
        for b in self.bindings_for(&identity) {
            let mut c = b.contact.clone();
            c.set_param("expires", Some(&b.remaining_secs(now).to_string()));
            resp.headers.push(Header::Contact(Contact::Addr(c)));
        }
        self.reply(ctx, req, &resp);

        if changed_to_active || (removed_any && !self.is_registered(&identity)) {
            self.notify_reg_state(ctx, &identity);
        }

        if any_active {
            self.trigger_application_servers(ctx, req, &identity, annotation.as_ref());
        }
    }

    fn trigger_application_servers(
        &mut self,
        ctx: &mut Ctx<'_>,
        req: &SipMessage,
        identity: &SipUri,
        annotation: Option<&SensorAnnotation>,
    ) {
        // Annotations arrive as Contact parameters; triggers look at headers,
        // so evaluate against the message with the standalone form lifted in.
        let mut view = req.clone();
        if let Some(a) = annotation {
            if !view.has_header("Sensor-type") {
                view.headers.push(a.packed_header());
            }
        }
        let matched = evaluate_ifc(self.profile(identity), &view, SESSION_CASE_ORIGINATING);
        let Some(binding) = self.bindings_for(identity).into_iter().max_by_key(|b| b.expires_at).cloned() else {
            return;
        };
        for (server, handling) in matched {
            let msg = self.build_third_party_register(ctx, &binding, &server);
            let branch = msg.top_via().and_then(|v| v.branch()).unwrap_or_default().to_string();
            let token = TOKEN_THIRD_PARTY | self.next_token;
            self.next_token += 1;
            let timer = ctx.set_timer(THIRD_PARTY_TIMEOUT_MS, token);
            self.pending.insert(
                branch.clone(),
                PendingThirdParty {
                    identity: identity.clone(),
                    handling,
                    timer,
                },
            );
            self.pending_by_token.insert(token, branch);
            self.stats.third_party_sent += 1;
            ctx.send_sip(&self.settings.addr, &server.transport_addr(), &msg);
        }
    }

    fn request_uri_for(&self, server: &SipUri) -> SipUri {
        self.settings
            .as_request_uris
            .iter()
            .find(|(s, _)| s.identity() == server.identity())
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| server.domain())
    }

    /// The REGISTER sent to an application server on behalf of `binding`:
    /// To is the registered identity, while From and Contact name the
    /// S-CSCF itself so the server never learns the user's own contact.
    pub fn build_third_party_register(
        &self,
        ctx: &mut Ctx<'_>,
        binding: &RegistrarBinding,
        server: &SipUri,
    ) -> SipMessage {
        let own = &self.settings.uri;
        let expires = binding.remaining_secs(ctx.now()).to_string();
        let mut msg = SipMessage::request(Method::Register, self.request_uri_for(server))
            .with(Header::Via(self.config.via(ctx.rng())))
            .with(Header::MaxForwards(70))
            .with(Header::From(NameAddr::new(own.clone()).with_param("tag", Some(&new_tag(ctx.rng())))))
            .with(Header::To(NameAddr::new(binding.public_identity.clone())))
            .with(Header::Contact(Contact::Addr(
                NameAddr::new(own.clone()).with_param("expires", Some(&expires)),
            )));
        if let Some(a) = &binding.annotation {
            msg.headers.push(a.packed_header());
        }
        msg.headers.push(Header::CallId(binding.third_party_call_id.clone()));
        msg.headers.push(Header::CSeq(CSeq {
            seq: binding.cseq,
            method: Method::Register,
        }));
        msg
    }

    fn arm_expiry(&mut self, ctx: &mut Ctx<'_>, key: BindingKey, expires_secs: u32) {
        if let Some(old) = self.binding_timer.remove(&key) {
            if let Some((_, t)) = self.expiry_timers.remove(&old) {
                ctx.cancel_timer(t);
            }
        }
        let token = self.next_token;
        self.next_token += 1;
        let t = ctx.set_timer(u64::from(expires_secs) * 1000, token);
        self.expiry_timers.insert(token, (key.clone(), t));
        self.binding_timer.insert(key, token);
    }

    fn remove_binding(&mut self, ctx: &mut Ctx<'_>, key: &BindingKey) -> bool {
        if let Some(token) = self.binding_timer.remove(key) {
            if let Some((_, t)) = self.expiry_timers.remove(&token) {
                ctx.cancel_timer(t);
            }
        }
        self.bindings.remove(key).is_some()
    }

    fn reg_body(identity: &SipUri, active: bool) -> String {
        let state = if active { "active" } else { "terminated" };
        format!("<reginfo><registration aor=\"{identity}\" state=\"{state}\"/></reginfo>")
    }

    fn notify_reg_state(&mut self, ctx: &mut Ctx<'_>, identity: &SipUri) {
        let active = self.is_registered(identity);
        let body = Self::reg_body(identity, active);
        let state = if active {
            SubState::Active
        } else {
            SubState::Terminated("deactivated")
        };
        let now = ctx.now();
        for id in self.reg_subs.watchers(&identity.to_string(), EventPackage::Reg, now) {
            if let Some((to, msg)) = self.reg_subs.notify(
                id,
                state.clone(),
                "application/reginfo+xml",
                body.as_bytes(),
                vec![],
                now,
                &self.config,
                ctx.rng(),
            ) {
                ctx.send_sip(&self.settings.addr, &to, &msg);
            }
        }
    }

    /// SUBSCRIBE to the `reg` event package of a registered identity.
    pub fn handle_subscribe_reg_event(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage, source: &Addr) {
        let Some(target) = req.request_uri().map(SipUri::identity) else { return };
        if !self.is_registered(&target) {
            let resp = make_response(req, 404, "Not Found");
            self.reply(ctx, req, &resp);
            return;
        }
        let now = ctx.now();
        let Some((resp, accepted)) = self.reg_subs.accept(
            req,
            &target.to_string(),
            EventPackage::Reg,
            DEFAULT_REGISTER_EXPIRES,
            now,
            &self.config,
            source,
        ) else {
            return;
        };
        self.reply(ctx, req, &resp);
        let body = Self::reg_body(&target, true);
        match accepted {
            Accepted::Active(id) => {
                if let Some((to, msg)) = self.reg_subs.notify(
                    id,
                    SubState::Active,
                    "application/reginfo+xml",
                    body.as_bytes(),
                    vec![],
                    now,
                    &self.config,
                    ctx.rng(),
                ) {
                    ctx.send_sip(&self.settings.addr, &to, &msg);
                }
            }
            Accepted::Ended(mut sub) => {
                sub.notify_cseq += 1;
                let msg = crate::sip::event::build_notify(
                    &sub,
                    &SubState::Terminated("timeout"),
                    "application/reginfo+xml",
                    body.as_bytes(),
                    vec![],
                    now,
                    &self.config,
                    ctx.rng(),
                );
                ctx.send_sip(&self.settings.addr, &sub.notify_addr(), &msg);
            }
        }
    }

    fn forward_request(&mut self, ctx: &mut Ctx<'_>, mut req: SipMessage) {
        let Some(target) = req.request_uri().map(SipUri::identity) else { return };
        let method = req.method();
        let binding = self.bindings_for(&target).into_iter().max_by_key(|b| b.expires_at).cloned();
        let Some(binding) = binding else {
            if method != Some(Method::Ack) {
                let resp = make_response(&req, 404, "Not Found");
                self.reply(ctx, &req, &resp);
            }
            return;
        };
        let hops = req.headers.iter().find_map(|h| match h {
            Header::MaxForwards(n) => Some(*n),
            _ => None,
        });
        if hops == Some(0) {
            let resp = make_response(&req, 483, "Too Many Hops");
            self.reply(ctx, &req, &resp);
            return;
        }
        req.set_header(Header::MaxForwards(hops.unwrap_or(70).saturating_sub(1)));
        if let crate::sip::StartLine::Request { uri, .. } = &mut req.start {
            *uri = binding.contact.uri.clone();
        }
        let via = self.config.via(ctx.rng());
        req.headers.insert(0, Header::Via(via));
        ctx.send_sip(&self.settings.addr, &binding.contact.uri.transport_addr(), &req);
    }

    fn is_own_via(&self, via: &Via) -> bool {
        via.sent_by() == self.settings.addr
    }

    fn handle_response(&mut self, ctx: &mut Ctx<'_>, mut resp: SipMessage) {
        let Some(top) = resp.top_via().cloned() else { return };
        if !self.is_own_via(&top) {
            return;
        }
        let branch = top.branch().unwrap_or_default().to_string();
        if let Some(p) = self.pending.remove(&branch) {
            ctx.cancel_timer(p.timer);
            self.pending_by_token.retain(|_, b| *b != branch);
            let code = resp.status().unwrap_or(500);
            if code >= 300 {
                self.third_party_failed(ctx, p.identity, p.handling);
            }
            return;
        }
        // strip our Via and pass the response back toward the requester
        let pos = resp.headers.iter().position(|h| matches!(h, Header::Via(_)));
        if let Some(pos) = pos {
            resp.headers.remove(pos);
        }
        if let Some(next) = resp.top_via() {
            let to = next.sent_by();
            ctx.send_sip(&self.settings.addr, &to, &resp);
        }
    }

    fn third_party_failed(&mut self, ctx: &mut Ctx<'_>, identity: SipUri, handling: DefaultHandling) {
        self.stats.third_party_failed += 1;
        if handling == DefaultHandling::SessionTerminated {
            log::info!("application server unavailable, deregistering {identity}");
            let keys: Vec<_> = self
                .bindings_for(&identity)
                .iter()
                .map(|b| (identity.clone(), b.contact.uri.identity()))
                .collect();
            for k in keys {
                self.remove_binding(ctx, &k);
            }
            self.notify_reg_state(ctx, &identity);
        }
    }

    pub fn handle_message(&mut self, ctx: &mut Ctx<'_>, source: &Addr, msg: SipMessage) {
        match msg.method() {
            Some(Method::Register) => self.handle_register(ctx, &msg),
            Some(Method::Subscribe) if EventPackage::of(&msg) == Some(EventPackage::Reg) => {
                self.handle_subscribe_reg_event(ctx, &msg, source)
            }
            Some(_) => self.forward_request(ctx, msg),
            None => self.handle_response(ctx, msg),
        }
    }
}

impl Node for Scscf {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: &Addr, from: &Addr, payload: &[u8]) {
        match parse_message(payload) {
            Ok(msg) => self.handle_message(ctx, from, msg),
            Err(e) => log::warn!("S-CSCF: unparseable datagram from {from}: {e}"),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if token & TOKEN_THIRD_PARTY != 0 {
            if let Some(branch) = self.pending_by_token.remove(&token) {
                if let Some(p) = self.pending.remove(&branch) {
                    self.third_party_failed(ctx, p.identity, p.handling);
                }
            }
            return;
        }
        let Some((key, _)) = self.expiry_timers.remove(&token) else { return };
        self.binding_timer.remove(&key);
        let expired = self
            .bindings
            .get(&key)
            .is_some_and(|b| b.expires_at <= ctx.now());
        if expired {
            self.bindings.remove(&key);
            self.stats.expirations += 1;
            if !self.is_registered(&key.0) {
                self.notify_reg_state(ctx, &key.0);
            }
        }
    }
}

/// Builds a REGISTER the way a sensor would send it (annotation as Contact
/// parameters). Useful for tests and scripted clients.
pub fn build_register(
    identity: &SipUri,
    contact: &SipUri,
    annotation: Option<&SensorAnnotation>,
    expires: u32,
    call_id: &str,
    cseq: u32,
    rng: &mut impl rand::Rng,
) -> SipMessage {
    let mut c = NameAddr::new(contact.clone());
    if let Some(a) = annotation {
        a.apply_to_contact(&mut c);
    }
    c.set_param("expires", Some(&expires.to_string()));
    let port = contact.port.filter(|p| *p != crate::sip::DEFAULT_SIP_PORT);
    SipMessage::request(Method::Register, identity.domain())
        .with(Header::Via(Via::udp(&contact.host, port, &new_branch(rng))))
        .with(Header::MaxForwards(70))
        .with(Header::From(NameAddr::new(identity.clone()).with_param("tag", Some(&new_tag(rng)))))
        .with(Header::To(NameAddr::new(identity.clone())))
        .with(Header::Contact(Contact::Addr(c)))
        .with(Header::CallId(call_id.to_string()))
        .with(Header::CSeq(CSeq {
            seq: cseq,
            method: Method::Register,
        }))
}
