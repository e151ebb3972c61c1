//! SUBSCRIBE/NOTIFY dialogs for the `presence`, `reg` and `sensor-group`
//! event packages.
//!
//! [`SubscriptionTable`] is the notifier side; [`ClientSubscription`] is the
//! subscriber side. Both keep the dialog identifiers needed to build
//! in-dialog requests.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{make_response, new_branch, new_call_id, new_tag, CSeq, Contact, Header, Method, NameAddr, SipMessage, SipUri, Via};
use crate::netsim::Addr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventPackage {
    Presence,
    Reg,
    SensorGroup,
}

impl EventPackage {
    pub fn as_str(self) -> &'static str {
        match self {
            EventPackage::Presence => "presence",
            EventPackage::Reg => "reg",
            EventPackage::SensorGroup => "sensor-group",
        }
    }

    pub fn of(msg: &SipMessage) -> Option<EventPackage> {
        msg.header("Event")?
            .split(';')
            .next()?
            .trim()
            .parse()
            .ok()
    }
}

impl FromStr for EventPackage {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "presence" => Ok(EventPackage::Presence),
            "reg" => Ok(EventPackage::Reg),
            "sensor-group" => Ok(EventPackage::SensorGroup),
            _ => Err(()),
        }
    }
}

impl fmt::Display for EventPackage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a server identifies itself in the requests it originates.
#[derive(Debug, Clone)]
pub struct Originator {
    pub uri: SipUri,
    pub addr: Addr,
}

impl Originator {
    pub fn new(uri: SipUri, addr: Addr) -> Self {
        Originator { uri, addr }
    }

    pub fn via(&self, rng: &mut impl Rng) -> Via {
        let port = (self.addr.port != super::DEFAULT_SIP_PORT).then_some(self.addr.port);
        Via::udp(&self.addr.host, port, &new_branch(rng))
    }

    /// The originator's URI pointing at its transport address.
    pub fn contact_uri(&self) -> SipUri {
        let mut uri = self.uri.clone();
        uri.host = self.addr.host.clone();
        uri.port = (self.addr.port != super::DEFAULT_SIP_PORT).then_some(self.addr.port);
        uri
    }

    pub fn contact(&self) -> Header {
        Header::Contact(Contact::Addr(NameAddr::new(self.contact_uri())))
    }
}

pub type SubscriptionId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Subscription {
    pub id: SubscriptionId,
    pub watcher: SipUri,
    pub watcher_tag: String,
    /// Request URI for NOTIFY (the watcher's Contact).
    pub remote_target: SipUri,
    pub target: String,
    pub event: EventPackage,
    pub call_id: String,
    pub local_uri: SipUri,
    pub local_tag: String,
    pub expires_at: u64,
    pub notify_cseq: u32,
}

impl Subscription {
    pub fn notify_addr(&self) -> Addr {
        self.remote_target.transport_addr()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubState {
    Active,
    Terminated(&'static str),
}

#[derive(Debug)]
pub enum Accepted {
    /// New or refreshed subscription; an immediate NOTIFY is due.
    Active(SubscriptionId),
    /// `Expires: 0`: the subscription is gone after the final NOTIFY.
    Ended(Subscription),
}

#[derive(Debug, Default)]
pub struct SubscriptionTable {
    subs: BTreeMap<SubscriptionId, Subscription>,
    next_id: SubscriptionId,
}

impl SubscriptionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn get(&self, id: SubscriptionId) -> Option<&Subscription> {
        self.subs.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Subscription> {
        self.subs.values()
    }

    /// Stores or refreshes the subscription carried by `req` and builds the
    /// 200 response. `source` is used as the NOTIFY target when the request
    /// carries no Contact.
    pub fn accept(
        &mut self,
        req: &SipMessage,
        target: &str,
        event: EventPackage,
        default_expires: u32,
        now: u64,
        me: &Originator,
        source: &Addr,
    ) -> Option<(SipMessage, Accepted)> {
        let from = req.from()?;
        let call_id = req.call_id()?.to_string();
        let watcher_tag = from.tag().unwrap_or_default().to_string();
        let expires = req.expires().unwrap_or(default_expires);

        let mut resp = make_response(req, 200, "OK");
        resp.headers.push(Header::Expires(expires));
        resp.headers.push(me.contact());
        let local_tag = resp.to().and_then(|t| t.tag()).unwrap_or_default().to_string();

        let existing = self
            .subs
            .values()
            .find(|s| s.call_id == call_id && s.watcher_tag == watcher_tag && s.event == event)
            .map(|s| s.id);

        if expires == 0 {
            let sub = match existing {
                Some(id) => self.subs.remove(&id)?,
                None => self.build(req, target, event, local_tag, now, source, 0)?,
            };
            return Some((resp, Accepted::Ended(sub)));
        }
        let expires_at = now + u64::from(expires) * 1000;
        let id = match existing {
            Some(id) => {
                let s = self.subs.get_mut(&id)?;
                s.expires_at = expires_at;
                id
            }
            None => {
                let mut sub = self.build(req, target, event, local_tag, now, source, expires_at)?;
                self.next_id += 1;
                sub.id = self.next_id;
                let id = sub.id;
                self.subs.insert(id, sub);
                id
            }
        };
        Some((resp, Accepted::Active(id)))
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        &self,
        req: &SipMessage,
        target: &str,
        event: EventPackage,
        local_tag: String,
        _now: u64,
        source: &Addr,
        expires_at: u64,
    ) -> Option<Subscription> {
        let from = req.from()?;
        let remote_target = req
            .contact_addrs()
            .next()
            .map(|c| c.uri.clone())
            .unwrap_or_else(|| {
                let mut u = from.uri.clone();
                u.host = source.host.clone();
                u.port = Some(source.port);
                u
            });
        Some(Subscription {
            id: 0,
            watcher: from.uri.clone(),
            watcher_tag: from.tag().unwrap_or_default().to_string(),
            remote_target,
            target: target.to_string(),
            event,
            call_id: req.call_id()?.to_string(),
            local_uri: req.to()?.uri.clone(),
            local_tag,
            expires_at,
            notify_cseq: 0,
        })
    }

    /// Active subscriptions to `target` for `event`, dropping any that have
    /// expired by `now`.
    pub fn watchers(&mut self, target: &str, event: EventPackage, now: u64) -> Vec<SubscriptionId> {
        self.purge_expired(now);
        self.subs
            .values()
            .filter(|s| s.event == event && s.target == target)
            .map(|s| s.id)
            .collect()
    }

    pub fn purge_expired(&mut self, now: u64) -> usize {
        let before = self.subs.len();
        self.subs.retain(|_, s| s.expires_at > now);
        before - self.subs.len()
    }

    pub fn remove(&mut self, id: SubscriptionId) -> Option<Subscription> {
        self.subs.remove(&id)
    }

    /// Builds the next NOTIFY on subscription `id`. Returns `None` when the
    /// subscription is unknown or already expired at `now`.
    pub fn notify(
        &mut self,
        id: SubscriptionId,
        state: SubState,
        content_type: &str,
        body: &[u8],
        extra: Vec<Header>,
        now: u64,
        me: &Originator,
        rng: &mut impl Rng,
    ) -> Option<(Addr, SipMessage)> {
        let sub = self.subs.get_mut(&id)?;
        if sub.expires_at <= now {
            return None;
        }
        sub.notify_cseq += 1;
        let msg = build_notify(sub, &state, content_type, body, extra, now, me, rng);
        let to = sub.notify_addr();
        if let SubState::Terminated(_) = state {
            self.subs.remove(&id);
        }
        Some((to, msg))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_notify(
    sub: &Subscription,
    state: &SubState,
    content_type: &str,
    body: &[u8],
    extra: Vec<Header>,
    now: u64,
    me: &Originator,
    rng: &mut impl Rng,
) -> SipMessage {
    let sub_state = match state {
        SubState::Active => format!(
            "active;expires={}",
            sub.expires_at.saturating_sub(now).div_ceil(1000)
        ),
        SubState::Terminated(reason) => format!("terminated;reason={reason}"),
    };
    let mut msg = SipMessage::request(Method::Notify, sub.remote_target.clone())
        .with(Header::Via(me.via(rng)))
        .with(Header::MaxForwards(70))
        .with(Header::From(
            NameAddr::new(sub.local_uri.clone()).with_param("tag", Some(&sub.local_tag)),
        ))
        .with(Header::To(
            NameAddr::new(sub.watcher.clone()).with_param("tag", Some(&sub.watcher_tag)),
        ))
        .with(Header::CallId(sub.call_id.clone()))
        .with(Header::CSeq(CSeq {
            seq: sub.notify_cseq,
            method: Method::Notify,
        }))
        .with(me.contact())
        .with(Header::other("Event", sub.event.as_str()))
        .with(Header::other("Subscription-State", sub_state));
    msg.headers.extend(extra);
    if !body.is_empty() {
        msg = msg.with_body(content_type, body.to_vec());
    }
    msg
}

/// Parsed `Subscription-State` of an incoming NOTIFY.
pub fn subscription_state(msg: &SipMessage) -> Option<SubState> {
    let v = msg.header("Subscription-State")?;
    let state = v.split(';').next()?.trim().to_ascii_lowercase();
    match state.as_str() {
        "active" | "pending" => Some(SubState::Active),
        "terminated" => Some(SubState::Terminated("terminated")),
        _ => None,
    }
}

/// Subscriber-side dialog state.
#[derive(Debug, Clone)]
pub struct ClientSubscription {
    pub target: SipUri,
    pub event: EventPackage,
    pub call_id: String,
    pub local_tag: String,
    pub cseq: u32,
    /// Highest NOTIFY CSeq seen on this dialog.
    pub last_notify_cseq: u32,
}

impl ClientSubscription {
    pub fn new(target: SipUri, event: EventPackage, rng: &mut impl Rng) -> Self {
        ClientSubscription {
            target,
            event,
            call_id: new_call_id(rng),
            local_tag: new_tag(rng),
            cseq: 0,
            last_notify_cseq: 0,
        }
    }

    /// Next SUBSCRIBE (initial or refresh) on this dialog.
    pub fn subscribe(
        &mut self,
        me: &Originator,
        expires: u32,
        body: Option<(&str, &[u8])>,
        rng: &mut impl Rng,
    ) -> SipMessage {
        self.cseq += 1;
        let mut msg = SipMessage::request(Method::Subscribe, self.target.clone())
            .with(Header::Via(me.via(rng)))
            .with(Header::MaxForwards(70))
            .with(Header::From(
                NameAddr::new(me.uri.clone()).with_param("tag", Some(&self.local_tag)),
            ))
            .with(Header::To(NameAddr::new(self.target.clone())))
            .with(Header::CallId(self.call_id.clone()))
            .with(Header::CSeq(CSeq {
                seq: self.cseq,
                method: Method::Subscribe,
            }))
            .with(me.contact())
            .with(Header::other("Event", self.event.as_str()))
            .with(Header::Expires(expires));
        if let Some((ct, b)) = body {
            msg = msg.with_body(ct, b.to_vec());
        }
        msg
    }
}
