//! Caller side of a sensor data session: INVITE through the S-CSCF, ACK,
//! frame collection, in-dialog INFO and BYE.

use crate::netsim::{Addr, Ctx, Node};
use crate::sensor::{parse_session_descriptor, session_descriptor, DataFrame, SESSION_CONTENT_TYPE};
use crate::sip::event::Originator;
use crate::sip::{new_call_id, new_tag, parse_message, CSeq, Header, Method, NameAddr, SipMessage, SipUri};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallState {
    Inviting,
    Established,
    Ending,
    Ended,
    Failed(u16),
}

#[derive(Debug, Clone)]
pub struct OutgoingCall {
    pub target: SipUri,
    pub call_id: String,
    pub local_tag: String,
    pub remote_tag: Option<String>,
    pub cseq: u32,
    pub state: CallState,
    /// Where the sensor streams from, as announced in its 200 body.
    pub sensor_data: Option<Addr>,
    pub frames: Vec<DataFrame>,
    /// Bodies of final responses to INFO, in arrival order.
    pub info_replies: Vec<(u16, String)>,
    invite_cseq: u32,
}

impl OutgoingCall {
    pub fn new(target: SipUri, rng: &mut impl rand::Rng) -> Self {
        OutgoingCall {
            target,
            call_id: new_call_id(rng),
            local_tag: new_tag(rng),
            remote_tag: None,
            cseq: 0,
            state: CallState::Inviting,
            sensor_data: None,
            frames: Vec::new(),
            info_replies: Vec::new(),
            invite_cseq: 0,
        }
    }

    fn request(&self, method: Method, seq: u32, me: &Originator, rng: &mut impl rand::Rng) -> SipMessage {
        let mut to = NameAddr::new(self.target.clone());
        if let Some(t) = &self.remote_tag {
            to.set_param("tag", Some(t));
        }
        SipMessage::request(method, self.target.clone())
            .with(Header::Via(me.via(rng)))
            .with(Header::MaxForwards(70))
            .with(Header::From(NameAddr::new(me.uri.clone()).with_param("tag", Some(&self.local_tag))))
            .with(Header::To(to))
            .with(Header::CallId(self.call_id.clone()))
            .with(Header::CSeq(CSeq { seq, method }))
            .with(me.contact())
    }

    /// INVITE naming `me.addr` as the frame sink.
    pub fn invite(&mut self, me: &Originator, rng: &mut impl rand::Rng) -> SipMessage {
        self.cseq += 1;
        self.invite_cseq = self.cseq;
        self.state = CallState::Inviting;
        self.request(Method::Invite, self.cseq, me, rng)
            .with_body(SESSION_CONTENT_TYPE, session_descriptor(&me.addr))
    }

    /// Handles a response on this dialog; returns the ACK to send after a
    /// 2xx to INVITE.
    pub fn on_response(&mut self, resp: &SipMessage, me: &Originator, rng: &mut impl rand::Rng) -> Option<SipMessage> {
        let code = resp.status()?;
        let cseq = resp.cseq()?;
        match cseq.method {
            Method::Invite if cseq.seq == self.invite_cseq && code >= 200 => {
                if code >= 300 {
                    self.state = CallState::Failed(code);
                    return None;
                }
                self.remote_tag = resp.to().and_then(|t| t.tag()).map(str::to_string);
                self.sensor_data = parse_session_descriptor(resp.body_str());
                if self.state == CallState::Inviting {
                    self.state = CallState::Established;
                }
                Some(self.request(Method::Ack, cseq.seq, me, rng))
            }
            Method::Bye if code >= 200 => {
                self.state = CallState::Ended;
                None
            }
            Method::Info if code >= 200 => {
                self.info_replies.push((code, resp.body_str().to_string()));
                None
            }
            _ => None,
        }
    }

    pub fn bye(&mut self, me: &Originator, rng: &mut impl rand::Rng) -> SipMessage {
        self.cseq += 1;
        self.state = CallState::Ending;
        self.request(Method::Bye, self.cseq, me, rng)
    }

    pub fn info(&mut self, me: &Originator, command: &str, rng: &mut impl rand::Rng) -> SipMessage {
        self.cseq += 1;
        self.request(Method::Info, self.cseq, me, rng)
            .with_body("text/plain", command.to_string())
    }

    /// Whether a datagram from `from` belongs to this session's stream.
    pub fn is_stream_source(&self, from: &Addr) -> bool {
        self.sensor_data.as_ref() == Some(from)
    }
}

/// A scripted caller: INVITEs one sensor via the S-CSCF, sends INFO
/// commands once established, collects `want_frames` frames, then hangs up.
pub struct Caller {
    me: Originator,
    proxy: Addr,
    want_frames: usize,
    commands: Vec<String>,
    pub call: Option<OutgoingCall>,
}

impl Caller {
    pub fn new(me: Originator, proxy: Addr, want_frames: usize) -> Self {
        Caller {
            me,
            proxy,
            want_frames,
            commands: Vec::new(),
            call: None,
        }
    }

    pub fn with_commands(mut self, commands: Vec<String>) -> Self {
        self.commands = commands;
        self
    }

    pub fn dial(&mut self, ctx: &mut Ctx<'_>, target: SipUri) {
        let mut call = OutgoingCall::new(target, ctx.rng());
        let invite = call.invite(&self.me, ctx.rng());
        ctx.send_sip(&self.me.addr, &self.proxy, &invite);
        self.call = Some(call);
    }

    pub fn frames(&self) -> &[DataFrame] {
        self.call.as_ref().map(|c| c.frames.as_slice()).unwrap_or(&[])
    }

    pub fn state(&self) -> Option<&CallState> {
        self.call.as_ref().map(|c| &c.state)
    }
}

impl Node for Caller {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, _local: &Addr, from: &Addr, payload: &[u8]) {
        let Some(call) = self.call.as_mut() else { return };
        if let Ok(msg) = parse_message(payload) {
            if msg.call_id() != Some(call.call_id.as_str()) || msg.is_request() {
                return;
            }
            let was_inviting = call.state == CallState::Inviting;
            if let Some(ack) = call.on_response(&msg, &self.me, ctx.rng()) {
                ctx.send_sip(&self.me.addr, &self.proxy, &ack);
                if was_inviting {
                    for c in std::mem::take(&mut self.commands) {
                        let info = call.info(&self.me, &c, ctx.rng());
                        ctx.send_sip(&self.me.addr, &self.proxy, &info);
                    }
                }
            }
            return;
        }
        if call.state != CallState::Established || !call.is_stream_source(from) {
            return;
        }
        let Some(frame) = std::str::from_utf8(payload).ok().and_then(DataFrame::parse) else {
            return;
        };
        call.frames.push(frame);
        if call.frames.len() >= self.want_frames {
            let bye = call.bye(&self.me, ctx.rng());
            ctx.send_sip(&self.me.addr, &self.proxy, &bye);
        }
    }
}
