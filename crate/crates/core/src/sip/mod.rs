//! SIP message subset: URIs, messages, the text wire format, and the sensor
//! annotation extension.

mod annotation;
pub mod event;
mod message;
mod parse;
mod uri;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

pub use annotation::{extract_sensor_annotation, AnnotationError, SensorAnnotation};
pub use message::{canonical_name, CSeq, Contact, Header, Method, NameAddr, SipMessage, StartLine, Via};
pub use parse::{parse_message, ParseError};
pub use uri::{SipUri, UriError, DEFAULT_SIP_PORT};



/// Builds a response to `req`, copying Via, From, To, Call-ID and CSeq.
/// A To tag is added for final responses when the request had none; it is
/// derived from the dialog identifiers so retransmissions get the same tag.
pub fn make_response(req: &SipMessage, status: u16, reason: &str) -> SipMessage {
    let mut resp = SipMessage::response(status, reason);
    for h in &req.headers {
        match h {
            Header::Via(_) | Header::From(_) | Header::CallId(_) | Header::CSeq(_) => {
                resp.headers.push(h.clone())
            }
            Header::To(to) => {
                let mut to = to.clone();
                if status >= 200 && to.tag().is_none() {
                    to.set_param("tag", Some(&stable_tag(req)));
                }
                resp.headers.push(Header::To(to));
            }
            _ => {}
        }
    }
    resp
}

fn stable_tag(req: &SipMessage) -> String {
    let mut h = DefaultHasher::new();
    req.call_id().hash(&mut h);
    req.from().and_then(|f| f.tag()).hash(&mut h);
    req.cseq().map(|c| c.seq).hash(&mut h);
    format!("{:08x}", h.finish() as u32)
}

pub fn new_branch(rng: &mut impl Rng) -> String {
    format!("z9hG4bK-{:016}", rng.gen_range(0..10_000_000_000_000_000u64))
}

pub fn new_tag(rng: &mut impl Rng) -> String {
    format!("{:x}", rng.gen::<u32>())
}

pub fn new_call_id(rng: &mut impl Rng) -> String {
    format!("{:08}", rng.gen_range(0..100_000_000u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invite() -> SipMessage {
        SipMessage::request(Method::Invite, "sip:b@h".parse().unwrap())
            .with(Header::Via(Via::udp("a.h", None, "z9hG4bK1")))
            .with(Header::From(NameAddr::new("sip:a@h".parse().unwrap()).with_param("tag", Some("t1"))))
            .with(Header::To(NameAddr::new("sip:b@h".parse().unwrap())))
            .with(Header::CallId("c1".into()))
            .with(Header::CSeq(CSeq { seq: 4, method: Method::Invite }))
            .with(Header::MaxForwards(70))
    }

    #[test]
    fn response_copies_dialog_identifiers() {
        let req = invite();
        let r = make_response(&req, 400, "Bad Request");
        assert_eq!(r.status(), Some(400));
        assert_eq!(r.call_id(), Some("c1"));
        assert_eq!(r.cseq(), req.cseq());
        assert_eq!(r.from(), req.from());
        assert!(r.to().unwrap().tag().is_some());
        assert!(!r.has_header("Max-Forwards"));
        // stable across calls
        assert_eq!(make_response(&req, 200, "OK").to(), make_response(&req, 200, "OK").to());
    }

    #[test]
    fn provisional_response_gets_no_tag() {
        let r = make_response(&invite(), 180, "Ringing");
        assert!(r.to().unwrap().tag().is_none());
    }

    #[test]
    fn existing_to_tag_kept() {
        let mut req = invite();
        req.to_mut().unwrap().set_param("tag", Some("mine"));
        assert_eq!(make_response(&req, 200, "OK").to().unwrap().tag(), Some("mine"));
    }
}
