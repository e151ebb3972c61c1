//! The sensor search engine, deployed as an application server.
//!
//! On a third-party REGISTER it answers 200, reads the sensor annotation,
//! subscribes to the sensor's registration state at the S-CSCF and to its
//! presence, writes the sensor document, and reclassifies the sensor into
//! group documents. It watches its own `/groups/` subtree in the XDMS and
//! turns every change into a NOTIFY for `sensor-group` subscribers.
//!
//! Registration ending removes the sensor; presence closing only marks it
//! unavailable.

mod index;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use percent_encoding::percent_decode_str;

use crate::feed::{Area, NewsItem};
use crate::geo::{Gazetteer, LatLon, PoiEntry};
use crate::http::{is_http, HttpRequest, HttpResponse};
use crate::netsim::{Addr, Ctx, Node, TimerId};
use crate::presence::{parse_presence_document, Status};
use crate::sip::event::{
    build_notify, subscription_state, Accepted, ClientSubscription, EventPackage, Originator, SubState,
    SubscriptionTable,
};
use crate::sip::{extract_sensor_annotation, make_response, parse_message, Header, Method, SipMessage, SipUri};
use crate::xdms::{ChangeKind, WatchId, Xdms};

pub use index::{
    build_group_document, build_sensor_document, classify, classify_with, empty_group_document, escape_segment,
    parse_group_document, parse_sensor_document, results_document, results_text, sensor_doc_path,
    uri_from_doc_path, BadGroupKey, GroupKey, Index, KeywordOrArea, NewsMatcher, QueryError, QueryFilter,
    SearchHandle, SensorDescriptor,
};

pub const GROUP_CONTENT_TYPE: &str = "application/vnd.issee.group+xml";
pub const DEFAULT_GROUP_SUBSCRIBE_EXPIRES: u32 = 3600;
const DEFAULT_THIRD_PARTY_EXPIRES: u32 = 3600;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub uri: SipUri,
    pub addr: Addr,
    pub scscf_addr: Addr,
    pub presence_addr: Addr,
    pub gazetteer: Arc<Gazetteer>,
    pub pois: Arc<Vec<PoiEntry>>,
    /// Expires requested on reg and presence subscriptions.
    pub subscribe_expires: u32,
    /// Extra time after a registration's expiry before the engine drops the
    /// sensor on its own, in case the reg NOTIFY never arrives.
    pub removal_grace_ms: u64,
}

impl EngineConfig {
    pub fn new(uri: SipUri, addr: Addr, scscf_addr: Addr, presence_addr: Addr) -> Self {
        EngineConfig {
            uri,
            addr,
            scscf_addr,
            presence_addr,
            gazetteer: Arc::new(Gazetteer::default()),
            pois: Arc::new(Vec::new()),
            subscribe_expires: 3600,
            removal_grace_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub third_party_registers: u64,
    pub rejected_registers: u64,
    pub removals: u64,
    pub unknown_sensor_notifies: u64,
    pub group_notifies: u64,
    pub queries: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LivenessSource {
    Reg,
    Presence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no indexed sensor {0}")]
pub struct UnknownSensor(pub String);

pub struct IsseeEngine {
    me: Originator,
    cfg: EngineConfig,
    xdms: Arc<Xdms>,
    index: Arc<RwLock<Index>>,
    memberships: BTreeMap<String, BTreeSet<GroupKey>>,
    news: BTreeMap<String, NewsItem>,
    matcher: Box<dyn NewsMatcher>,
    watch: WatchId,
    group_subs: SubscriptionTable,
    reg_dialogs: HashMap<String, ClientSubscription>,
    presence_dialogs: HashMap<String, ClientSubscription>,
    dialog_owner: HashMap<String, String>,
    removal_timers: HashMap<String, (u64, TimerId)>,
    timer_owner: HashMap<u64, String>,
    next_token: u64,
    stats: EngineStats,
}

impl IsseeEngine {
    pub fn new(cfg: EngineConfig, xdms: Arc<Xdms>) -> Self {
        let watch = xdms.subscribe_changes("/groups/").expect("static prefix is valid");
        IsseeEngine {
            me: Originator::new(cfg.uri.clone(), cfg.addr.clone()),
            index: Arc::new(RwLock::new(Index::new(cfg.pois.clone()))),
            cfg,
            xdms,
            memberships: BTreeMap::new(),
            news: BTreeMap::new(),
            matcher: Box::new(KeywordOrArea),
            watch,
            group_subs: SubscriptionTable::new(),
            reg_dialogs: HashMap::new(),
            presence_dialogs: HashMap::new(),
            dialog_owner: HashMap::new(),
            removal_timers: HashMap::new(),
            timer_owner: HashMap::new(),
            next_token: 1,
            stats: EngineStats::default(),
        }
    }

    pub fn with_matcher(mut self, matcher: Box<dyn NewsMatcher>) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn xdms(&self) -> &Arc<Xdms> {
        &self.xdms
    }

    pub fn search_handle(&self) -> SearchHandle {
        SearchHandle {
            index: self.index.clone(),
        }
    }

    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<SensorDescriptor>, QueryError> {
        self.index.read().expect("index lock").query(filter)
    }

    pub fn descriptor(&self, uri: &SipUri) -> Option<SensorDescriptor> {
        self.index.read().expect("index lock").sensors.get(&uri.to_string()).cloned()
    }

    pub fn sensor_count(&self) -> usize {
        self.index.read().expect("index lock").sensors.len()
    }

    pub fn news(&self) -> impl Iterator<Item = &NewsItem> {
        self.news.values()
    }

    pub fn group_subscriptions(&self) -> &SubscriptionTable {
        &self.group_subs
    }

    fn reply(&self, ctx: &mut Ctx<'_>, req: &SipMessage, resp: &SipMessage) {
        if let Some(v) = req.top_via() {
            ctx.send_sip(&self.me.addr, &v.sent_by(), resp);
        }
    }

    /// Fig. 5 functions 3 to 9 for one third-party REGISTER.
    pub fn on_third_party_register(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let annotation = match extract_sensor_annotation(req) {
            Ok(Some(a)) => a,
            other => {
                self.stats.rejected_registers += 1;
                let reason = match other {
                    Err(e) => format!("Invalid Sensor Annotation ({e})"),
                    _ => "Missing Sensor Annotation".to_string(),
                };
                let resp = make_response(req, 400, &reason);
                self.reply(ctx, req, &resp);
                return;
            }
        };
        let Some(to) = req.to() else { return };
        let uri = to.uri.identity();
        let key = uri.to_string();
        let expires = req
            .contact_addrs()
            .next()
            .and_then(|c| c.expires())
            .or(req.expires())
            .unwrap_or(DEFAULT_THIRD_PARTY_EXPIRES);

        let mut resp = make_response(req, 200, "OK");
        resp.headers.push(Header::Expires(expires));
        self.reply(ctx, req, &resp);
        self.stats.third_party_registers += 1;

        if expires == 0 {
            self.remove_sensor(ctx, &key);
            self.flush_group_changes(ctx);
            return;
        }

        let now = ctx.now();
        let previous = self.descriptor(&uri);
        let address = self
            .cfg
            .gazetteer
            .reverse_geocode(LatLon::new(annotation.latitude, annotation.longitude));
        let descriptor = SensorDescriptor {
            doc_path: sensor_doc_path(&uri),
            uri: uri.clone(),
            sensor_type: annotation.sensor_type.to_ascii_lowercase(),
            latitude: annotation.latitude,
            longitude: annotation.longitude,
            address,
            availability: previous.as_ref().map(|p| p.availability).unwrap_or(Status::Open),
            registered_at: previous.as_ref().map(|p| p.registered_at).unwrap_or(now),
            reg_expires_at: now + u64::from(expires) * 1000,
        };
        self.store_descriptor(ctx, descriptor.clone());
        self.arm_removal(ctx, &key, descriptor.reg_expires_at + self.cfg.removal_grace_ms - now);

        self.subscribe_liveness(ctx, &uri, EventPackage::Reg);
        self.subscribe_liveness(ctx, &uri, EventPackage::Presence);
        self.flush_group_changes(ctx);
    }

    fn subscribe_liveness(&mut self, ctx: &mut Ctx<'_>, uri: &SipUri, event: EventPackage) {
        let key = uri.to_string();
        let (dialogs, to) = match event {
            EventPackage::Reg => (&mut self.reg_dialogs, &self.cfg.scscf_addr),
            _ => (&mut self.presence_dialogs, &self.cfg.presence_addr),
        };
        let dialog = dialogs
            .entry(key.clone())
            .or_insert_with(|| ClientSubscription::new(uri.clone(), event, ctx.rng()));
        self.dialog_owner.insert(dialog.call_id.clone(), key);
        let msg = dialog.subscribe(&self.me, self.cfg.subscribe_expires, None, ctx.rng());
        ctx.send_sip(&self.me.addr, to, &msg);
    }

    fn unsubscribe_presence(&mut self, ctx: &mut Ctx<'_>, key: &str) {
        if let Some(mut d) = self.presence_dialogs.remove(key) {
            let msg = d.subscribe(&self.me, 0, None, ctx.rng());
            ctx.send_sip(&self.me.addr, &self.cfg.presence_addr, &msg);
        }
    }

    fn arm_removal(&mut self, ctx: &mut Ctx<'_>, key: &str, delay_ms: u64) {
        if let Some((token, t)) = self.removal_timers.remove(key) {
            ctx.cancel_timer(t);
            self.timer_owner.remove(&token);
        }
        let token = self.next_token;
        self.next_token += 1;
        let t = ctx.set_timer(delay_ms, token);
        self.removal_timers.insert(key.to_string(), (token, t));
        self.timer_owner.insert(token, key.to_string());
    }

    /// Writes the sensor document and brings group membership in line.
    fn store_descriptor(&mut self, ctx: &mut Ctx<'_>, d: SensorDescriptor) {
        let now = ctx.now();
        let key = d.uri_string();
        if let Err(e) = self.xdms.put_document_at(&d.doc_path, &build_sensor_document(&d), now) {
            log::error!("storing {}: {e}", d.doc_path);
            return;
        }
        let keys = classify_with(&d, &self.cfg.pois, self.news.values(), self.matcher.as_ref());
        self.index.write().expect("index lock").sensors.insert(key.clone(), d);
        self.set_membership(&key, keys, now);
    }

    fn set_membership(&mut self, uri: &str, keys: BTreeSet<GroupKey>, now: u64) {
        let old = if keys.is_empty() {
            self.memberships.remove(uri).unwrap_or_default()
        } else {
            self.memberships.insert(uri.to_string(), keys.clone()).unwrap_or_default()
        };
        if old == keys {
            return;
        }
        let mut idx = self.index.write().expect("index lock");
        for k in old.difference(&keys) {
            let members = idx.groups.entry(k.clone()).or_default();
            members.remove(uri);
            if members.is_empty() {
                idx.groups.remove(k);
                if let Err(e) = self.xdms.delete_document_at(&k.path(), now) {
                    log::error!("deleting group {k}: {e}");
                }
            } else {
                self.write_group(k, members, now);
            }
        }
        for k in keys.difference(&old) {
            let members = idx.groups.entry(k.clone()).or_default();
            members.insert(uri.to_string());
            self.write_group(k, members, now);
        }
    }

    fn write_group(&self, key: &GroupKey, members: &BTreeSet<String>, now: u64) {
        if let Err(e) = self.xdms.put_document_at(&key.path(), &build_group_document(key, members), now) {
            log::error!("writing group {key}: {e}");
        }
    }

    fn remove_sensor(&mut self, ctx: &mut Ctx<'_>, key: &str) -> bool {
        let Some(d) = self.index.write().expect("index lock").sensors.remove(key) else {
            return false;
        };
        self.stats.removals += 1;
        let now = ctx.now();
        if let Err(e) = self.xdms.delete_document_at(&d.doc_path, now) {
            log::error!("deleting {}: {e}", d.doc_path);
        }
        self.set_membership(key, BTreeSet::new(), now);
        if let Some((token, t)) = self.removal_timers.remove(key) {
            ctx.cancel_timer(t);
            self.timer_owner.remove(&token);
        }
        if let Some(d) = self.reg_dialogs.remove(key) {
            self.dialog_owner.remove(&d.call_id);
        }
        self.unsubscribe_presence(ctx, key);
        true
    }

    /// Applies a registration or presence change for an indexed sensor.
    pub fn on_liveness_change(
        &mut self,
        ctx: &mut Ctx<'_>,
        uri: &SipUri,
        source: LivenessSource,
        state: Liveness,
    ) -> Result<(), UnknownSensor> {
        let key = uri.identity().to_string();
        let Some(mut d) = self.descriptor(uri) else {
            self.stats.unknown_sensor_notifies += 1;
            return Err(UnknownSensor(key));
        };
        match (source, state) {
            (LivenessSource::Reg, Liveness::Down) => {
                self.remove_sensor(ctx, &key);
            }
            (LivenessSource::Reg, Liveness::Up) => {}
            (LivenessSource::Presence, s) => {
                let status = if s == Liveness::Up { Status::Open } else { Status::Closed };
                if d.availability != status {
                    d.availability = status;
                    self.store_descriptor(ctx, d);
                }
            }
        }
        self.flush_group_changes(ctx);
        Ok(())
    }

    fn handle_notify(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage) {
        let resp = make_response(req, 200, "OK");
        self.reply(ctx, req, &resp);
        let terminated = matches!(subscription_state(req), Some(SubState::Terminated(_)));
        let owner = req.call_id().and_then(|c| self.dialog_owner.get(c)).cloned();
        let Some(owner) = owner else {
            if !terminated {
                self.stats.unknown_sensor_notifies += 1;
            }
            return;
        };
        let Ok(uri) = owner.parse::<SipUri>() else { return };
        match EventPackage::of(req) {
            Some(EventPackage::Reg) => {
                let body_down = req.body_str().contains("state=\"terminated\"");
                if terminated {
                    if let Some(cid) = req.call_id() {
                        self.dialog_owner.remove(cid);
                    }
                    self.reg_dialogs.remove(&owner);
                }
                let state = if terminated || body_down { Liveness::Down } else { Liveness::Up };
                let _ = self.on_liveness_change(ctx, &uri, LivenessSource::Reg, state);
            }
            Some(EventPackage::Presence) => {
                if terminated {
                    if let Some(cid) = req.call_id() {
                        self.dialog_owner.remove(cid);
                    }
                    self.presence_dialogs.remove(&owner);
                    return;
                }
                let Some(doc) = parse_presence_document(req.body_str()) else { return };
                let state = if doc.status == Status::Open { Liveness::Up } else { Liveness::Down };
                let _ = self.on_liveness_change(ctx, &uri, LivenessSource::Presence, state);
            }
            _ => {}
        }
    }

    /// Current document for `key`, or an empty one, with its version.
    fn group_snapshot(&self, key: &GroupKey) -> (String, u64) {
        match self.xdms.document(&key.path()) {
            Some(d) => (d.content.to_string(), d.version),
            None => (empty_group_document(key), self.xdms.version_of(&key.path())),
        }
    }

    pub fn handle_subscribe_group(&mut self, ctx: &mut Ctx<'_>, req: &SipMessage, source: &Addr) {
        let raw_key = if req.body.is_empty() {
            req.request_uri()
                .and_then(|u| u.param("group").flatten())
                .map(|v| percent_decode_str(v).decode_utf8_lossy().into_owned())
        } else {
            Some(req.body_str().trim().to_string())
        };
        let Some(key) = raw_key.and_then(|k| k.parse::<GroupKey>().ok()) else {
            let resp = make_response(req, 400, "Missing Or Invalid Group Key");
            self.reply(ctx, req, &resp);
            return;
        };
        let now = ctx.now();
        let Some((resp, accepted)) = self.group_subs.accept(
            req,
            &key.to_string(),
            EventPackage::SensorGroup,
            DEFAULT_GROUP_SUBSCRIBE_EXPIRES,
            now,
            &self.me,
            source,
        ) else {
            return;
        };
        self.reply(ctx, req, &resp);
        let (body, version) = self.group_snapshot(&key);
        let extra = vec![Header::other("Document-Version", version.to_string())];
        match accepted {
            Accepted::Active(id) => {
                if let Some((to, msg)) = self.group_subs.notify(
                    id,
                    SubState::Active,
                    GROUP_CONTENT_TYPE,
                    body.as_bytes(),
                    extra,
                    now,
                    &self.me,
                    ctx.rng(),
                ) {
                    self.stats.group_notifies += 1;
                    ctx.send_sip(&self.me.addr, &to, &msg);
                }
            }
            Accepted::Ended(mut sub) => {
                sub.notify_cseq += 1;
                let msg = build_notify(
                    &sub,
                    &SubState::Terminated("timeout"),
                    GROUP_CONTENT_TYPE,
                    body.as_bytes(),
                    extra,
                    now,
                    &self.me,
                    ctx.rng(),
                );
                ctx.send_sip(&self.me.addr, &sub.notify_addr(), &msg);
            }
        }
    }

    /// One NOTIFY per group document version, in commit order.
    fn flush_group_changes(&mut self, ctx: &mut Ctx<'_>) {
        let now = ctx.now();
        for ev in self.xdms.drain_events(self.watch) {
            let Some(key) = GroupKey::from_path(&ev.path) else { continue };
            let subs = self.group_subs.watchers(&key.to_string(), EventPackage::SensorGroup, now);
            if subs.is_empty() {
                continue;
            }
            let body = match (&ev.kind, &ev.content) {
                (ChangeKind::Put, Some(c)) => c.to_string(),
                _ => empty_group_document(&key),
            };
            for id in subs {
                let extra = vec![Header::other("Document-Version", ev.version.to_string())];
                if let Some((to, msg)) = self.group_subs.notify(
                    id,
                    SubState::Active,
                    GROUP_CONTENT_TYPE,
                    body.as_bytes(),
                    extra,
                    now,
                    &self.me,
                    ctx.rng(),
                ) {
                    self.stats.group_notifies += 1;
                    ctx.send_sip(&self.me.addr, &to, &msg);
                }
            }
        }
    }

    fn reclassify_all(&mut self, ctx: &mut Ctx<'_>) {
        let now = ctx.now();
        let all: Vec<SensorDescriptor> = self.index.read().expect("index lock").sensors.values().cloned().collect();
        for d in all {
            let keys = classify_with(&d, &self.cfg.pois, self.news.values(), self.matcher.as_ref());
            self.set_membership(&d.uri_string(), keys, now);
        }
        self.flush_group_changes(ctx);
    }

    /// Makes a news item active and regroups every sensor it concerns.
    pub fn add_news(&mut self, ctx: &mut Ctx<'_>, mut item: NewsItem) {
        item.received_at = ctx.now();
        self.news.insert(item.slug.clone(), item);
        self.reclassify_all(ctx);
    }

    pub fn remove_news(&mut self, ctx: &mut Ctx<'_>, slug: &str) -> bool {
        let removed = self.news.remove(slug).is_some();
        if removed {
            self.reclassify_all(ctx);
        }
        removed
    }

    /// Checks that stored documents match the index and that every group
    /// equals a from-scratch reclassification. Returns the first mismatch.
    pub fn audit(&self) -> Result<(), String> {
        let idx = self.index.read().expect("index lock");
        let docs = self.xdms.list_collection("/sensors/");
        if docs.len() != idx.sensors.len() {
            return Err(format!("{} sensor documents but {} descriptors", docs.len(), idx.sensors.len()));
        }
        for d in idx.sensors.values() {
            let stored = self
                .xdms
                .get_document(&d.doc_path)
                .map_err(|e| format!("descriptor {} without document: {e}", d.uri))?;
            if *stored.0 != *build_sensor_document(d) {
                return Err(format!("document {} differs from descriptor", d.doc_path));
            }
        }
        let expected = expected_groups(idx.sensors.values(), &self.cfg.pois, self.news.values(), self.matcher.as_ref());
        if expected != idx.groups {
            return Err("in-memory groups differ from reclassification".into());
        }
        let stored = self.xdms.list_collection("/groups/");
        if stored.len() != expected.len() {
            return Err(format!("{} group documents, expected {}", stored.len(), expected.len()));
        }
        for (key, members) in &expected {
            let doc = self
                .xdms
                .get_document(&key.path())
                .map_err(|_| format!("group {key} missing"))?;
            if *doc.0 != *build_group_document(key, members) {
                return Err(format!("group {key} differs"));
            }
        }
        Ok(())
    }

    /// Serves `GET /query?type=..&country=..&town=..&near=lat,lon,r&poi=..&available=1&format=xml`.
    pub fn handle_http(&mut self, req: &HttpRequest) -> HttpResponse {
        let (path, qs) = req.path.split_once('?').unwrap_or((&req.path, ""));
        if req.method != "GET" || path != "/query" {
            return HttpResponse::new(404, "Not Found");
        }
        self.stats.queries += 1;
        let (filter, xml) = match parse_query_string(qs) {
            Ok(f) => f,
            Err(e) => return HttpResponse::new(400, "Bad Request").with_body("text/plain", e.to_string()),
        };
        match self.query(&filter) {
            Ok(r) if xml => HttpResponse::new(200, "OK").with_body("application/xml", results_document("query", &r)),
            Ok(r) => HttpResponse::new(200, "OK").with_body("text/plain", results_text(&r)),
            Err(e) => HttpResponse::new(400, "Bad Request").with_body("text/plain", e.to_string()),
        }
    }

    pub fn handle_message(&mut self, ctx: &mut Ctx<'_>, source: &Addr, msg: SipMessage) {
        match msg.method() {
            Some(Method::Register) => self.on_third_party_register(ctx, &msg),
            Some(Method::Notify) => self.handle_notify(ctx, &msg),
            Some(Method::Subscribe) if EventPackage::of(&msg) == Some(EventPackage::SensorGroup) => {
                self.handle_subscribe_group(ctx, &msg, source)
            }
            Some(Method::Ack) | None => {}
            Some(_) => {
                let resp = make_response(&msg, 405, "Method Not Allowed");
                self.reply(ctx, &msg, &resp);
            }
        }
    }
}

/// Groups implied by classifying `sensors` from scratch.
pub fn expected_groups<'a>(
    sensors: impl IntoIterator<Item = &'a SensorDescriptor>,
    pois: &[PoiEntry],
    news: impl IntoIterator<Item = &'a NewsItem> + Clone,
    matcher: &dyn NewsMatcher,
) -> BTreeMap<GroupKey, BTreeSet<String>> {
    let mut groups: BTreeMap<GroupKey, BTreeSet<String>> = BTreeMap::new();
    for d in sensors {
        for k in classify_with(d, pois, news.clone(), matcher) {
            groups.entry(k).or_default().insert(d.uri_string());
        }
    }
    groups
}

/// Parses query-string filter fields; the flag is true for `format=xml`.
pub fn parse_query_string(qs: &str) -> Result<(QueryFilter, bool), QueryError> {
    let mut f = QueryFilter::default();
    let mut xml = false;
    for pair in qs.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        let v = percent_decode_str(&v.replace('+', " ")).decode_utf8_lossy().into_owned();
        match k {
            "type" => f.sensor_type = Some(v),
            "country" => f.country = Some(v),
            "town" => f.town = Some(v),
            "poi" => f.poi = Some(v),
            "near" => f.near = Some(parse_near(&v)?),
            "available" | "available_only" => f.available_only = v == "1" || v == "true",
            "format" => xml = v == "xml",
            other => return Err(QueryError::BadFilter(format!("unknown parameter {other:?}"))),
        }
    }
    Ok((f, xml))
}

/// `lat,lon,radius_m`
pub fn parse_near(s: &str) -> Result<Area, QueryError> {
    let nums: Vec<f64> = s
        .split(',')
        .map(|n| n.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| QueryError::BadFilter(format!("near must be lat,lon,radius_m, got {s:?}")))?;
    match nums[..] {
        [lat, lon, radius_m] => Ok(Area {
            center: LatLon::new(lat, lon),
            radius_m,
        }),
        _ => Err(QueryError::BadFilter(format!("near must be lat,lon,radius_m, got {s:?}"))),
    }
}

impl Node for IsseeEngine {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
        if is_http(payload) {
            if let Some(req) = HttpRequest::parse(payload) {
                let resp = self.handle_http(&req);
                ctx.send(local, from, resp.to_bytes());
            }
            return;
        }
        match parse_message(payload) {
            Ok(msg) => self.handle_message(ctx, from, msg),
            Err(e) => log::warn!("engine: unparseable datagram from {from}: {e}"),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        let Some(key) = self.timer_owner.remove(&token) else { return };
        self.removal_timers.remove(&key);
        let lapsed = self
            .index
            .read()
            .expect("index lock")
            .sensors
            .get(&key)
            .is_some_and(|d| d.reg_expires_at <= ctx.now());
        if lapsed {
            log::info!("registration of {key} lapsed without notification; removing");
            self.remove_sensor(ctx, &key);
            self.flush_group_changes(ctx);
        }
    }
}
