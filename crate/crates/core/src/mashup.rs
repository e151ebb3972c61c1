//! The mash-up convergent application: polls a web feed over HTTP, finds
//! sensors matching each news item through the search engine, opens SIP
//! data sessions to them, stores the collected frames, and composes an
//! enriched document per item.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io;
use std::path::PathBuf;

use crate::call::{CallState, OutgoingCall};
use crate::engine::{escape_segment, QueryFilter, SearchHandle, SensorDescriptor};
use crate::feed::{parse_feed, Backoff, NewsItem, FEED_PATH};
use crate::http::{is_http, HttpRequest, HttpResponse};
use crate::netsim::{Addr, Ctx, Node, TimerId};
use crate::sensor::DataFrame;
use crate::sip::event::Originator;
use crate::sip::{parse_message, SipUri};
use crate::xml;

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user: String,
    /// Sensor types, lowercased.
    pub interests: Vec<String>,
    pub locale: Option<String>,
    pub max_sensors_per_item: usize,
}

impl UserProfile {
    pub fn new(user: &str, interests: &[&str]) -> Self {
        UserProfile {
            user: user.to_string(),
            interests: interests.iter().map(|i| i.to_lowercase()).collect(),
            locale: None,
            max_sensors_per_item: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoreKey {
    pub slug: String,
    pub sensor: String,
}

impl std::fmt::Display for StoreKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.slug, escape_segment(&self.sensor))
    }
}

/// Frame logs keyed by (news slug, sensor URI), optionally mirrored to disk
/// as `<dir>/<slug>/<escaped uri>.frames`.
#[derive(Debug, Default)]
pub struct MediaStore {
    entries: BTreeMap<StoreKey, Vec<u8>>,
    dir: Option<PathBuf>,
}

impl MediaStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        MediaStore {
            entries: BTreeMap::new(),
            dir: Some(dir.into()),
        }
    }

    fn file_for(&self, key: &StoreKey) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(escape_segment(&key.slug)).join(format!("{}.frames", escape_segment(&key.sensor))))
    }

    /// Appends frames, one text line each, under `(slug, sensor)`.
    pub fn store_frames(&mut self, slug: &str, sensor: &SipUri, frames: &[DataFrame]) -> io::Result<StoreKey> {
        let key = StoreKey {
            slug: slug.to_string(),
            sensor: sensor.to_string(),
        };
        let mut bytes = Vec::new();
        for f in frames {
            bytes.extend_from_slice(f.to_string().as_bytes());
            bytes.push(b'\n');
        }
        if let Some(path) = self.file_for(&key) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            use std::io::Write;
            fs::OpenOptions::new().create(true).append(true).open(path)?.write_all(&bytes)?;
        }
        self.entries.entry(key.clone()).or_default().extend_from_slice(&bytes);
        Ok(key)
    }

    pub fn get(&self, key: &StoreKey) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn frames(&self, key: &StoreKey) -> Vec<DataFrame> {
        self.get(key)
            .map(|b| String::from_utf8_lossy(b).lines().filter_map(DataFrame::parse).collect())
            .unwrap_or_default()
    }

    pub fn keys(&self) -> impl Iterator<Item = &StoreKey> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaRef {
    pub sensor: SipUri,
    pub frame_count: usize,
    pub store_key: StoreKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedDocument {
    pub news_slug: String,
    pub headline: String,
    pub user: String,
    pub media_refs: Vec<MediaRef>,
    pub composed_at: u64,
}

impl EnrichedDocument {
    pub fn to_xml(&self) -> String {
        let mut s = format!(
            "<enriched news=\"{}\" user=\"{}\" composed=\"{}\"><headline>{}</headline>",
            xml::escape(&self.news_slug),
            xml::escape(&self.user),
            self.composed_at,
            xml::escape(&self.headline)
        );
        for m in &self.media_refs {
            s.push_str(&format!(
                "<media sensor=\"{}\" frames=\"{}\" key=\"{}\"/>",
                xml::escape(&m.sensor.to_string()),
                m.frame_count,
                xml::escape(&m.store_key.to_string())
            ));
        }
        s.push_str("</enriched>");
        s
    }
}

/// Sensors for `item` under `profile`: types are the item keywords the user
/// is interested in; the area is the item's location hint, else the user's
/// country. Lowest URIs first, capped at `max_sensors_per_item`.
pub fn select_sensors(search: &SearchHandle, item: &NewsItem, profile: &UserProfile) -> Vec<SensorDescriptor> {
    let types: BTreeSet<&String> = item
        .keywords
        .iter()
        .filter(|k| profile.interests.contains(k))
        .collect();
    let mut found: BTreeMap<String, SensorDescriptor> = BTreeMap::new();
    for t in types {
        let mut f = QueryFilter::by_type(t);
        match (&item.location_hint, &profile.locale) {
            (Some(area), _) => f.near = Some(*area),
            (None, Some(country)) => f.country = Some(country.clone()),
            (None, None) => {}
        }
        if let Ok(list) = search.query(&f) {
            for d in list {
                found.insert(d.uri_string(), d);
            }
        }
    }
    found.into_values().take(profile.max_sensors_per_item).collect()
}

#[derive(Debug, Clone)]
pub struct MashupConfig {
    pub uri: SipUri,
    pub addr: Addr,
    pub scscf_addr: Addr,
    pub feed_addr: Addr,
    pub profile: UserProfile,
    pub collect_frames: usize,
    pub poll_interval_ms: u64,
    pub fetch_timeout_ms: u64,
    pub session_timeout_ms: u64,
    pub backoff: Backoff,
    pub output_dir: Option<PathBuf>,
}

impl MashupConfig {
    pub fn new(uri: SipUri, addr: Addr, scscf_addr: Addr, feed_addr: Addr, profile: UserProfile) -> Self {
        MashupConfig {
            uri,
            addr,
            scscf_addr,
            feed_addr,
            profile,
            collect_frames: 5,
            poll_interval_ms: 60_000,
            fetch_timeout_ms: 2_000,
            session_timeout_ms: 30_000,
            backoff: Backoff::new(1_000, 60_000),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MashupStats {
    pub feed_fetches: u64,
    pub feed_failures: u64,
    pub items_processed: u64,
    pub sessions_opened: u64,
    pub sessions_failed: u64,
}

struct ActiveItem {
    item: NewsItem,
    calls: BTreeMap<String, OutgoingCall>,
    order: Vec<String>,
    timer: TimerId,
}

const TOKEN_POLL: u64 = 1;
const TOKEN_FETCH_TIMEOUT: u64 = 2;
const TOKEN_SESSION_TIMEOUT: u64 = 3;

pub struct MashupApp {
    me: Originator,
    cfg: MashupConfig,
    search: SearchHandle,
    pub store: MediaStore,
    seen: BTreeSet<String>,
    queue: VecDeque<NewsItem>,
    current: Option<ActiveItem>,
    fetch_pending: Option<TimerId>,
    poll_timer: Option<TimerId>,
    backoff: Backoff,
    documents: Vec<EnrichedDocument>,
    stats: MashupStats,
}

impl MashupApp {
    pub fn new(cfg: MashupConfig, search: SearchHandle, store: MediaStore) -> Self {
        MashupApp {
            me: Originator::new(cfg.uri.clone(), cfg.addr.clone()),
            backoff: cfg.backoff,
            cfg,
            search,
            store,
            seen: BTreeSet::new(),
            queue: VecDeque::new(),
            current: None,
            fetch_pending: None,
            poll_timer: None,
            documents: Vec::new(),
            stats: MashupStats::default(),
        }
    }

    pub fn documents(&self) -> &[EnrichedDocument] {
        &self.documents
    }

    pub fn stats(&self) -> MashupStats {
        self.stats
    }

    pub fn is_busy(&self) -> bool {
        self.current.is_some() || !self.queue.is_empty()
    }

    /// Subscribes to the web feed: fetches now and then every poll interval.
    pub fn start(&mut self, ctx: &mut Ctx<'_>) {
        self.fetch(ctx);
    }

    pub fn fetch(&mut self, ctx: &mut Ctx<'_>) {
        if self.fetch_pending.is_some() {
            return;
        }
        if let Some(t) = self.poll_timer.take() {
            ctx.cancel_timer(t);
        }
        self.stats.feed_fetches += 1;
        let req = HttpRequest::new("GET", FEED_PATH);
        ctx.send(&self.cfg.addr, &self.cfg.feed_addr, req.to_bytes());
        self.fetch_pending = Some(ctx.set_timer(self.cfg.fetch_timeout_ms, TOKEN_FETCH_TIMEOUT));
    }

    fn schedule_poll(&mut self, ctx: &mut Ctx<'_>, delay: u64) {
        if let Some(t) = self.poll_timer.take() {
            ctx.cancel_timer(t);
        }
        self.poll_timer = Some(ctx.set_timer(delay, TOKEN_POLL));
    }

    fn feed_failed(&mut self, ctx: &mut Ctx<'_>, why: &str) {
        self.stats.feed_failures += 1;
        let delay = self.backoff.next_delay();
        log::warn!("feed unavailable ({why}); retrying in {delay} ms");
        self.schedule_poll(ctx, delay);
    }

    fn on_http(&mut self, ctx: &mut Ctx<'_>, resp: HttpResponse) {
        let Some(t) = self.fetch_pending.take() else { return };
        ctx.cancel_timer(t);
        if resp.status != 200 {
            self.feed_failed(ctx, &format!("status {}", resp.status));
            return;
        }
        self.backoff.reset();
        let (items, _warnings) = parse_feed(&String::from_utf8_lossy(&resp.body));
        for mut item in items {
            if self.seen.insert(item.slug.clone()) {
                item.received_at = ctx.now();
                self.queue.push_back(item);
            }
        }
        self.schedule_poll(ctx, self.cfg.poll_interval_ms);
        self.next_item(ctx);
    }

    fn next_item(&mut self, ctx: &mut Ctx<'_>) {
        while self.current.is_none() {
            let Some(item) = self.queue.pop_front() else { return };
            self.on_news(ctx, item);
        }
    }

    /// Starts processing one item; completes immediately when no sensor matches.
    pub fn on_news(&mut self, ctx: &mut Ctx<'_>, item: NewsItem) {
        let targets = select_sensors(&self.search, &item, &self.cfg.profile);
        if targets.is_empty() {
            self.compose(ctx, item, Vec::new());
            return;
        }
        let mut calls = BTreeMap::new();
        let mut order = Vec::new();
        for d in targets {
            let mut call = OutgoingCall::new(d.uri.clone(), ctx.rng());
            let invite = call.invite(&self.me, ctx.rng());
            ctx.send_sip(&self.cfg.addr, &self.cfg.scscf_addr, &invite);
            self.stats.sessions_opened += 1;
            order.push(call.call_id.clone());
            calls.insert(call.call_id.clone(), call);
        }
        let timer = ctx.set_timer(self.cfg.session_timeout_ms, TOKEN_SESSION_TIMEOUT);
        self.current = Some(ActiveItem {
            item,
            calls,
            order,
            timer,
        });
    }

    fn compose(&mut self, ctx: &mut Ctx<'_>, item: NewsItem, media_refs: Vec<MediaRef>) {
        let doc = EnrichedDocument {
            news_slug: item.slug.clone(),
            headline: item.headline.clone(),
            user: self.cfg.profile.user.clone(),
            media_refs,
            composed_at: ctx.now(),
        };
        if let Some(dir) = &self.cfg.output_dir {
            let path = dir.join(format!("{}.xml", escape_segment(&item.slug)));
            if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(&path, doc.to_xml())) {
                log::error!("writing {}: {e}", path.display());
            }
        }
        self.stats.items_processed += 1;
        self.documents.push(doc);
    }

    /// Finishes the current item once every call has ended or failed.
    fn maybe_finish(&mut self, ctx: &mut Ctx<'_>, force: bool) {
        let done = self.current.as_ref().is_some_and(|a| {
            force
                || a.calls
                    .values()
                    .all(|c| matches!(c.state, CallState::Ended | CallState::Failed(_)))
        });
        if !done {
            return;
        }
        let active = self.current.take().expect("checked");
        ctx.cancel_timer(active.timer);
        let mut refs = Vec::new();
        for id in &active.order {
            let call = &active.calls[id];
            let complete = call.frames.len() >= self.cfg.collect_frames;
            if !complete {
                self.stats.sessions_failed += 1;
                continue;
            }
            let frames = &call.frames[..self.cfg.collect_frames];
            match self.store.store_frames(&active.item.slug, &call.target, frames) {
                Ok(key) => refs.push(MediaRef {
                    sensor: call.target.clone(),
                    frame_count: frames.len(),
                    store_key: key,
                }),
                Err(e) => log::error!("storing frames from {}: {e}", call.target),
            }
        }
        self.compose(ctx, active.item, refs);
        self.next_item(ctx);
    }

    fn on_sip(&mut self, ctx: &mut Ctx<'_>, payload: &[u8]) {
        let Ok(msg) = parse_message(payload) else { return };
        if msg.is_request() {
            return;
        }
        let Some(active) = self.current.as_mut() else { return };
        let Some(call) = msg.call_id().and_then(|c| active.calls.get_mut(c)) else { return };
        if let Some(ack) = call.on_response(&msg, &self.me, ctx.rng()) {
            ctx.send_sip(&self.cfg.addr, &self.cfg.scscf_addr, &ack);
        }
        self.maybe_finish(ctx, false);
    }

    fn on_frame(&mut self, ctx: &mut Ctx<'_>, from: &Addr, payload: &[u8]) {
        let want = self.cfg.collect_frames;
        let Some(active) = self.current.as_mut() else { return };
        let Some(frame) = std::str::from_utf8(payload).ok().and_then(DataFrame::parse) else { return };
        let Some(call) = active
            .calls
            .values_mut()
            .find(|c| c.state == CallState::Established && c.is_stream_source(from))
        else {
            return;
        };
        call.frames.push(frame);
        if call.frames.len() >= want {
            let bye = call.bye(&self.me, ctx.rng());
            ctx.send_sip(&self.cfg.addr, &self.cfg.scscf_addr, &bye);
        }
    }
}

impl Node for MashupApp {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: &Addr, from: &Addr, payload: &[u8]) {
        if is_http(payload) {
            if let Some(resp) = HttpResponse::parse(payload) {
                self.on_http(ctx, resp);
            }
        } else if payload.starts_with(b"SIP/2.0") || parse_message(payload).is_ok() {
            self.on_sip(ctx, payload);
        } else {
            self.on_frame(ctx, from, payload);
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        match token {
            TOKEN_POLL => {
                self.poll_timer = None;
                self.fetch(ctx);
            }
            TOKEN_FETCH_TIMEOUT => {
                if self.fetch_pending.take().is_some() {
                    self.feed_failed(ctx, "no response");
                }
            }
            TOKEN_SESSION_TIMEOUT => self.maybe_finish(ctx, true),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: u64) -> Vec<DataFrame> {
        (1..=n)
            .map(|seq| DataFrame {
                timestamp: seq * 1000,
                value: 20.0,
                unit: "C".into(),
                seq,
            })
            .collect()
    }

    #[test]
    fn media_store_keys_and_contents() {
        let mut s = MediaStore::in_memory();
        let a: SipUri = "sip:a@h".parse().unwrap();
        let b: SipUri = "sip:b@h".parse().unwrap();
        let ka = s.store_frames("heat", &a, &frames(5)).unwrap();
        let kb = s.store_frames("heat", &b, &frames(2)).unwrap();
        assert_ne!(ka, kb);
        assert_eq!(s.frames(&ka).len(), 5);
        let expected: String = frames(5).iter().map(|f| format!("{f}\n")).collect();
        assert_eq!(s.get(&ka).unwrap(), expected.as_bytes());
        assert_eq!(ka.to_string(), "heat/sip%3Aa%40h");
    }

    #[test]
    fn disk_store_mirrors_memory() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MediaStore::on_disk(dir.path());
        let a: SipUri = "sip:a@h".parse().unwrap();
        let k = s.store_frames("heat", &a, &frames(3)).unwrap();
        let on_disk = fs::read(dir.path().join("heat").join("sip%3Aa%40h.frames")).unwrap();
        assert_eq!(on_disk, s.get(&k).unwrap());
    }

    #[test]
    fn enriched_document_is_well_formed() {
        let d = EnrichedDocument {
            news_slug: "heat".into(),
            headline: "Heat & dust".into(),
            user: "alice".into(),
            media_refs: vec![],
            composed_at: 7,
        };
        assert!(xml::check_well_formed(&d.to_xml()).is_ok());
    }
}
