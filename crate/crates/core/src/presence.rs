//! Presence server: sensors PUBLISH their state, watchers SUBSCRIBE to the
//! `presence` package, and state that is not refreshed lapses to closed.
//!
//! The body format is a reduced presence document:
//! `<presence entity="..."><status>open</status><note>...</note></presence>`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::netsim::{Addr, Ctx, Node, TimerId};
use crate::sip::event::{build_notify, Accepted, EventPackage, Originator, SubState, SubscriptionTable};
use crate::sip::{make_response, parse_message, Header, Method, SipMessage, SipUri};
use crate::xml;

pub const DEFAULT_PUBLISH_EXPIRES: u32 = 600;
pub const DEFAULT_SUBSCRIBE_EXPIRES: u32 = 3600;
pub const PRESENCE_CONTENT_TYPE: &str = "application/pidf+xml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Open,
    Closed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Open => "open",
            Status::Closed => "closed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresentityState {
    pub entity: SipUri,
    pub status: Status,
    pub tuple_payload: Option<String>,
    pub published_at: u64,
    pub expires_at: u64,
    pub etag: String,
}

pub fn presence_document(entity: &SipUri, status: Status, note: Option<&str>) -> String {
    let mut s = format!(
        "<presence entity=\"{}\"><status>{}</status>",
        xml::escape(&entity.to_string()),
        status
    );
    if let Some(n) = note {
        s.push_str(&format!("<note>{}</note>", xml::escape(n)));
    }
    s.push_str("</presence>");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresenceDocument {
    pub entity: Option<String>,
    pub status: Status,
    pub note: Option<String>,
}

pub fn parse_presence_document(body: &str) -> Option<PresenceDocument> {
    let doc = roxmltree::Document::parse(body).ok()?;
    let root = doc.root_element();
    if root.tag_name().name() != "presence" {
        return None;
    }
    let status = match xml::child_text(root, "status")?.trim() {
        "open" => Status::Open,
        "closed" => Status::Closed,
        _ => return None,
    };
    Some(PresenceDocument {
        entity: root.attribute("entity").map(str::to_string),
        status,
        note: xml::child_text(root, "note").map(str::to_string),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PresenceStats {
    pub publishes: u64,
    pub notifies: u64,
    pub expirations: u64,
}

pub struct PresenceServer {
    me: Originator,
    states: BTreeMap<SipUri, PresentityState>,
    timers: HashMap<SipUri, TimerId>,
    timer_tokens: HashMap<u64, SipUri>,
    next_token: u64,
    next_etag: u64,
    watchers: SubscriptionTable,
    stats: PresenceStats,
}

impl PresenceServer {
    pub fn new(uri: SipUri, addr: Addr) -> Self {
        PresenceServer {
            me: Originator::new(uri, addr),
            states: BTreeMap::new(),
            timers: HashMap::new(),
            timer_tokens: HashMap::new(),
            next_token: 1,
            next_etag: 0,
            watchers: SubscriptionTable::new(),
            stats: PresenceStats::default(),
        }
    }

    pub fn stats(&self) -> PresenceStats {
        self.stats
    }

    pub fn state(&self, entity: &SipUri) -> Option<&PresentityState> {
        self.states.get(&entity.identity())
    }

    pub fn open_count(&self) -> usize {
        self.states.values().filter(|s| s.status == Status::Open).count()
    }

    pub fn watchers(&self) -> &SubscriptionTable {
        &self.watchers
    }

    fn reply(&self, ctx: &mut Ctx<'_>, req: &SipMessage, resp: &SipMessage) {
        if let Some(v) = req.top_via() {
            ctx.send_sip(&self.me.addr, &v.sent_by(), resp);
        }
    }

    fn fresh_etag(&mut self) -> String {
        self.next_etag += 1;
        format!("e{:06}", self.next_etag)
    }

    fn current_document(&self, entity: &SipUri) -> String {
        match self.states.get(entity) {
            Some(s) => presence_document(entity, s.status, s.tuple_payload.as_deref()),
            None => presence_document(entity, Status::Closed, None),
        }
    }

    fn notify_watchers(&mut self, ctx: &mut Ctx<'_>, entity: &SipUri) {
        let body = self.current_document(entity);
        let now = ctx.now();
        for id in self.watchers.watchers(&entity.to_string(), EventPackage::Presence, now) {
            if let Some((to, msg)) = self.watchers.notify(
                id,
                SubState::Active,
                PRESENCE_CONTENT_TYPE,
                body.as_bytes(),
                vec![],
                now,
                &self.me,
                ctx.rng(),
            ) {
                self.stats.notifies += 1;
                ctx.send_sip(&self.me.addr, &to, &msg);
            }
        }
    }

    fn arm_expiry(&mut self, ctx: &mut Ctx<'_>, entity: &SipUri, secs: u32) {
        if let Some(t) = self.timers.remove(entity) {
            ctx.cancel_timer(t);
        }
        let token = self.next_token;
        self.next_token += 1;
        let t = ctx.set_timer(u64::from(secs) * 1000, token);
        self.timers.insert(entity.clone(), t);
        self.timer_tokens.insert(token, entity.clone());
    }

    pub fn handle_publish(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let Some(entity) = req.request_uri().map(SipUri::identity) else { return };
        let now = ctx.now();
        let expires = req.expires().unwrap_or(DEFAULT_PUBLISH_EXPIRES);
        let if_match = req.header("SIP-If-Match");
        let body = (!req.body.is_empty()).then(|| req.body_str().to_string());

        let previous = self.states.get(&entity).cloned();
        if let Some(tag) = &if_match {
            let live = previous
                .as_ref()
                .is_some_and(|s| &s.etag == tag && s.status == Status::Open && s.expires_at > now);
            if !live {
                let resp = make_response(req, 412, "Conditional Request Failed");
                self.reply(ctx, req, &resp);
                return;
            }
        } else if body.is_none() {
            let resp = make_response(req, 400, "Missing Presence Document");
            self.reply(ctx, req, &resp);
            return;
        }
        self.stats.publishes += 1;

        if expires == 0 {
            if let Some(t) = self.timers.remove(&entity) {
                ctx.cancel_timer(t);
            }
            if let Some(s) = self.states.get_mut(&entity) {
                s.status = Status::Closed;
                s.expires_at = now;
            }
            let resp = make_response(req, 200, "OK");
            self.reply(ctx, req, &resp);
            self.notify_watchers(ctx, &entity);
            return;
        }

        let (status, payload) = match &body {
            Some(b) => match parse_presence_document(b) {
                Some(doc) => (doc.status, doc.note),
                None => (Status::Open, Some(b.clone())),
            },
            None => {
                let p = previous.as_ref().expect("checked above");
                (p.status, p.tuple_payload.clone())
            }
        };
        let etag = self.fresh_etag();
        let changed = previous
            .as_ref()
            .is_none_or(|p| p.status != status || p.tuple_payload != payload);
        self.states.insert(
            entity.clone(),
            PresentityState {
                entity: entity.clone(),
                status,
                tuple_payload: payload,
                published_at: now,
                expires_at: now + u64::from(expires) * 1000,
                etag: etag.clone(),
            },
        );
        self.arm_expiry(ctx, &entity, expires);

        let mut resp = make_response(req, 200, "OK");
        resp.headers.push(Header::other("SIP-ETag", etag));
        resp.headers.push(Header::Expires(expires));
        self.reply(ctx, req, &resp);
        if changed {
            self.notify_watchers(ctx, &entity);
        }
    }

    pub fn handle_subscribe_presence(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage, source: &Addr) {
        let Some(entity) = req.request_uri().map(SipUri::identity) else { return };
        let now = ctx.now();
        let Some((resp, accepted)) = self.watchers.accept(
            req,
            &entity.to_string(),
            EventPackage::Presence,
            DEFAULT_SUBSCRIBE_EXPIRES,
            now,
            &self.me,
            source,
        ) else {
            return;
        };
        self.reply(ctx, req, &resp);
        let body = self.current_document(&entity);
        match accepted {
            Accepted::Active(id) => {
                if let Some((to, msg)) = self.watchers.notify(
                    id,
                    SubState::Active,
                    PRESENCE_CONTENT_TYPE,
                    body.as_bytes(),
                    vec![],
                    now,
                    &self.me,
                    ctx.rng(),
                ) {
                    self.stats.notifies += 1;
                    ctx.send_sip(&self.me.addr, &to, &msg);
                }
            }
            Accepted::Ended(mut sub) => {
                sub.notify_cseq += 1;
                let msg = build_notify(
                    &sub,
                    &SubState::Terminated("timeout"),
                    PRESENCE_CONTENT_TYPE,
                    body.as_bytes(),
                    vec![],
                    now,
                    &self.me,
                    ctx.rng(),
                );
                ctx.send_sip(&self.me.addr, &sub.notify_addr(), &msg);
            }
        }
    }

    /// Closes every open state whose lifetime has passed and notifies its
    /// watchers. Returns the entities that changed.
    pub fn expire_presence(&mut self, ctx: &mut Ctx<'_>) -> Vec<SipUri> {
        let now = ctx.now();
        let lapsed: Vec<SipUri> = self
            .states
            .values()
            .filter(|s| s.status == Status::Open && s.expires_at <= now)
            .map(|s| s.entity.clone())
            .collect();
        for e in &lapsed {
            if let Some(s) = self.states.get_mut(e) {
                s.status = Status::Closed;
            }
            self.stats.expirations += 1;
            self.notify_watchers(ctx, e);
        }
        lapsed
    }
}

impl Node for PresenceServer {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: &Addr, from: &Addr, payload: &[u8]) {
        let msg = match parse_message(payload) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("presence: unparseable datagram from {from}: {e}");
                return;
            }
        };
        match msg.method() {
            Some(Method::Publish) => self.handle_publish(ctx, &msg),
            Some(Method::Subscribe) if EventPackage::of(&msg) == Some(EventPackage::Presence) => {
                self.handle_subscribe_presence(ctx, &msg, from)
            }
            Some(Method::Ack) | None => {}
            Some(_) => {
                let resp = make_response(&msg, 405, "Method Not Allowed");
                self.reply(ctx, &msg, &resp);
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if let Some(entity) = self.timer_tokens.remove(&token) {
            self.timers.remove(&entity);
            self.expire_presence(ctx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trip() {
        let e: SipUri = "sip:sensorA@hommel.com".parse().unwrap();
        let d = presence_document(&e, Status::Open, Some("temperature <C>"));
        let p = parse_presence_document(&d).unwrap();
        assert_eq!(p.entity.as_deref(), Some("sip:sensorA@hommel.com"));
        assert_eq!(p.status, Status::Open);
        assert_eq!(p.note.as_deref(), Some("temperature <C>"));
        assert_eq!(
            presence_document(&e, Status::Closed, None),
            "<presence entity=\"sip:sensorA@hommel.com\"><status>closed</status></presence>"
        );
    }
}
