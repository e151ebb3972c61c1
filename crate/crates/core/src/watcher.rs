//! An application that subscribes to `sensor-group` documents and records
//! every NOTIFY it receives.

use crate::engine::{parse_group_document, GroupKey, GROUP_CONTENT_TYPE};
use crate::netsim::{Addr, Ctx, Node};
use crate::sip::event::{ClientSubscription, EventPackage, Originator};
use crate::sip::{make_response, parse_message, Method, SipUri};

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNotification {
    pub at: u64,
    pub cseq: u32,
    pub version: u64,
    pub members: Vec<String>,
}

pub struct GroupWatcher {
    me: Originator,
    engine_uri: SipUri,
    engine_addr: Addr,
    pub key: Option<GroupKey>,
    dialog: Option<ClientSubscription>,
    pub notifications: Vec<GroupNotification>,
    pub rejected: Option<u16>,
}

impl GroupWatcher {
    pub fn new(me: Originator, engine_uri: SipUri, engine_addr: Addr) -> Self {
        GroupWatcher {
            me,
            engine_uri,
            engine_addr,
            key: None,
            dialog: None,
            notifications: Vec::new(),
            rejected: None,
        }
    }

    pub fn subscribe(&mut self, ctx: &mut Ctx<'_>, key: GroupKey, expires: u32) {
        let mut d = ClientSubscription::new(self.engine_uri.clone(), EventPackage::SensorGroup, ctx.rng());
        let body = key.to_string();
        let msg = d.subscribe(&self.me, expires, Some(("text/plain", body.as_bytes())), ctx.rng());
        ctx.send_sip(&self.me.addr, &self.engine_addr, &msg);
        self.key = Some(key);
        self.dialog = Some(d);
    }

    pub fn latest(&self) -> Option<&GroupNotification> {
        self.notifications.last()
    }

    /// True when NOTIFY CSeqs run 1, 2, 3... and versions never go back.
    pub fn gap_free(&self) -> bool {
        self.notifications
            .iter()
            .enumerate()
            .all(|(i, n)| n.cseq as usize == i + 1)
            && self.notifications.windows(2).all(|w| w[0].version <= w[1].version)
    }
}

impl Node for GroupWatcher {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
        let Ok(msg) = parse_message(payload) else { return };
        match msg.method() {
            Some(Method::Notify) => {
                let resp = make_response(&msg, 200, "OK");
                ctx.send_sip(local, from, &resp);
                let ours = self.dialog.as_ref().is_some_and(|d| msg.call_id() == Some(d.call_id.as_str()));
                if !ours {
                    return;
                }
                let is_group = msg.header("Content-Type").is_none_or(|c| c == GROUP_CONTENT_TYPE);
                let members = if is_group {
                    parse_group_document(msg.body_str()).map(|(_, m)| m).unwrap_or_default()
                } else {
                    Vec::new()
                };
                let cseq = msg.cseq().map(|c| c.seq).unwrap_or(0);
                if let Some(d) = self.dialog.as_mut() {
                    d.last_notify_cseq = d.last_notify_cseq.max(cseq);
                }
                self.notifications.push(GroupNotification {
                    at: ctx.now(),
                    cseq,
                    version: msg.header("Document-Version").and_then(|v| v.parse().ok()).unwrap_or(0),
                    members,
                });
            }
            None => {
                if msg.status().is_some_and(|s| s >= 300) {
                    self.rejected = msg.status();
                }
            }
            Some(_) => {}
        }
    }
}
