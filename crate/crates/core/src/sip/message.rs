use std::fmt;
use std::str::FromStr;

use super::uri::{write_params, SipUri};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Register,
    Publish,
    Subscribe,
    Notify,
    Invite,
    Ack,
    Bye,
    Info,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Register,
        Method::Publish,
        Method::Subscribe,
        Method::Notify,
        Method::Invite,
        Method::Ack,
        Method::Bye,
        Method::Info,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "REGISTER",
            Method::Publish => "PUBLISH",
            Method::Subscribe => "SUBSCRIBE",
            Method::Notify => "NOTIFY",
            Method::Invite => "INVITE",
            Method::Ack => "ACK",
            Method::Bye => "BYE",
            Method::Info => "INFO",
        }
    }
}

impl FromStr for Method {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: Method, uri: SipUri },
    Response { code: u16, reason: String },
}

/// `From`, `To` and `Contact` values: an address plus header parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameAddr {
    pub display: Option<String>,
    pub uri: SipUri,
    pub params: Vec<(String, Option<String>)>,
}

impl NameAddr {
    pub fn new(uri: SipUri) -> Self {
        NameAddr {
            display: None,
            uri,
            params: Vec::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: Option<&str>) -> Self {
        self.set_param(name, value);
        self
    }

    pub fn param(&self, name: &str) -> Option<Option<&str>> {
        self.params
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_deref())
    }

    pub fn set_param(&mut self, name: &str, value: Option<&str>) {
        let value = value.map(str::to_string);
        match self
            .params
            .iter_mut()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
        {
            Some(slot) => slot.1 = value,
            None => self.params.push((name.to_string(), value)),
        }
    }

    pub fn tag(&self) -> Option<&str> {
        self.param("tag").flatten()
    }

    pub fn expires(&self) -> Option<u32> {
        self.param("expires").flatten().and_then(|v| v.parse().ok())
    }
}

impl fmt::Display for NameAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = &self.display {
            write!(f, "\"{d}\" ")?;
        }
        write!(f, "<{}>", self.uri)?;
        write_params(f, &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contact {
    /// `Contact: *`, only meaningful with `Expires: 0`.
    Wildcard,
    Addr(NameAddr),
}

impl fmt::Display for Contact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contact::Wildcard => f.write_str("*"),
            Contact::Addr(a) => a.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Via {
    pub transport: String,
    pub host: String,
    pub port: Option<u16>,
    pub params: Vec<(String, Option<String>)>,
}

impl Via {
    pub fn udp(host: &str, port: Option<u16>, branch: &str) -> Self {
        Via {
            transport: "UDP".to_string(),
            host: host.to_string(),
            port,
            params: vec![("branch".to_string(), Some(branch.to_string()))],
        }
    }

    pub fn branch(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("branch"))
            .and_then(|(_, v)| v.as_deref())
    }

    pub fn sent_by(&self) -> crate::netsim::Addr {
        crate::netsim::Addr::new(&self.host, self.port.unwrap_or(super::DEFAULT_SIP_PORT))
    }
}

impl fmt::Display for Via {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SIP/2.0/{} {}", self.transport, self.host)?;
        if let Some(p) = self.port {
            write!(f, ":{p}")?;
        }
        write_params(f, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CSeq {
    pub seq: u32,
    pub method: Method,
}

impl fmt::Display for CSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.seq, self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Header {
    Via(Via),
    From(NameAddr),
    To(NameAddr),
    Contact(Contact),
    CallId(String),
    CSeq(CSeq),
    MaxForwards(u32),
    Expires(u32),
    /// Any other header, kept verbatim under its canonical name.
    Other(String, String),
}

const CANONICAL_NAMES: &[&str] = &[
    "Via",
    "From",
    "To",
    "Contact",
    "Call-ID",
    "CSeq",
    "Max-Forwards",
    "Expires",
    "Content-Length",
    "Content-Type",
    "Event",
    "Subscription-State",
    "SIP-ETag",
    "SIP-If-Match",
    "Allow",
    "Accept",
    "Supported",
    "User-Agent",
    "Route",
    "Record-Route",
    "Sensor-type",
    "Latitude",
    "Longitude",
    "Document-Version",
];

/// Canonical capitalization for a known header name, or the name as given.
pub fn canonical_name(name: &str) -> String {
    CANONICAL_NAMES
        .iter()
        .find(|c| c.eq_ignore_ascii_case(name))
        .map(|c| c.to_string())
        .unwrap_or_else(|| name.to_string())
}

impl Header {
    pub fn name(&self) -> &str {
        match self {
            Header::Via(_) => "Via",
            Header::From(_) => "From",
            Header::To(_) => "To",
            Header::Contact(_) => "Contact",
            Header::CallId(_) => "Call-ID",
            Header::CSeq(_) => "CSeq",
            Header::MaxForwards(_) => "Max-Forwards",
            Header::Expires(_) => "Expires",
            Header::Other(n, _) => n,
        }
    }

    pub fn value(&self) -> String {
        match self {
            Header::Via(v) => v.to_string(),
            Header::From(a) | Header::To(a) => a.to_string(),
            Header::Contact(c) => c.to_string(),
            Header::CallId(c) => c.clone(),
            Header::CSeq(c) => c.to_string(),
            Header::MaxForwards(n) | Header::Expires(n) => n.to_string(),
            Header::Other(_, v) => v.clone(),
        }
    }

    pub fn other(name: &str, value: impl Into<String>) -> Header {
        Header::Other(canonical_name(name), value.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    pub headers: Vec<Header>,
    pub body: Vec<u8>,
}

impl SipMessage {
    pub fn request(method: Method, uri: SipUri) -> Self {
        SipMessage {
            start: StartLine::Request { method, uri },
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn response(code: u16, reason: &str) -> Self {
        SipMessage {
            start: StartLine::Response {
                code,
                reason: reason.to_string(),
            },
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn with(mut self, header: Header) -> Self {
        self.headers.push(header);
        self
    }

    pub fn with_body(mut self, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        self.set_header(Header::other("Content-Type", content_type));
        self.body = body.into();
        self
    }

    pub fn is_request(&self) -> bool {
        matches!(self.start, StartLine::Request { .. })
    }

    pub fn method(&self) -> Option<Method> {
        match &self.start {
            StartLine::Request { method, .. } => Some(*method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn request_uri(&self) -> Option<&SipUri> {
        match &self.start {
            StartLine::Request { uri, .. } => Some(uri),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match &self.start {
            StartLine::Response { code, .. } => Some(*code),
            StartLine::Request { .. } => None,
        }
    }

    pub fn vias(&self) -> impl Iterator<Item = &Via> {
        self.headers.iter().filter_map(|h| match h {
            Header::Via(v) => Some(v),
            _ => None,
        })
    }

    pub fn top_via(&self) -> Option<&Via> {
        self.vias().next()
    }

    pub fn from(&self) -> Option<&NameAddr> {
        self.headers.iter().find_map(|h| match h {
            Header::From(a) => Some(a),
            _ => None,
        })
    }

    pub fn to(&self) -> Option<&NameAddr> {
        self.headers.iter().find_map(|h| match h {
            Header::To(a) => Some(a),
            _ => None,
        })
    }

    pub fn to_mut(&mut self) -> Option<&mut NameAddr> {
        self.headers.iter_mut().find_map(|h| match h {
            Header::To(a) => Some(a),
            _ => None,
        })
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.headers.iter().filter_map(|h| match h {
            Header::Contact(c) => Some(c),
            _ => None,
        })
    }

    pub fn contact_addrs(&self) -> impl Iterator<Item = &NameAddr> {
        self.contacts().filter_map(|c| match c {
            Contact::Addr(a) => Some(a),
            Contact::Wildcard => None,
        })
    }

    pub fn call_id(&self) -> Option<&str> {
        self.headers.iter().find_map(|h| match h {
            Header::CallId(c) => Some(c.as_str()),
            _ => None,
        })
    }

    pub fn cseq(&self) -> Option<CSeq> {
        self.headers.iter().find_map(|h| match h {
            Header::CSeq(c) => Some(*c),
            _ => None,
        })
    }

    pub fn expires(&self) -> Option<u32> {
        self.headers.iter().find_map(|h| match h {
            Header::Expires(e) => Some(*e),
            _ => None,
        })
    }

    pub fn content_length(&self) -> usize {
        self.body.len()
    }

    /// First value of a header by case-insensitive name (typed headers rendered).
    pub fn header(&self, name: &str) -> Option<String> {
        self.headers
            .iter()
            .find(|h| h.name().eq_ignore_ascii_case(name))
            .map(Header::value)
    }

    pub fn has_header(&self, name: &str) -> bool {
        name.eq_ignore_ascii_case("Content-Length")
            || self.headers.iter().any(|h| h.name().eq_ignore_ascii_case(name))
    }

    /// Replaces every header of the same name with `header`, keeping the
    /// position of the first one.
    pub fn set_header(&mut self, header: Header) {
        let name = header.name().to_string();
        match self
            .headers
            .iter()
            .position(|h| h.name().eq_ignore_ascii_case(&name))
        {
            Some(pos) => {
                self.headers[pos] = header;
                let mut i = 0;
                self.headers.retain(|h| {
                    i += 1;
                    i - 1 == pos || !h.name().eq_ignore_ascii_case(&name)
                });
            }
            None => self.headers.push(header),
        }
    }

    pub fn remove_header(&mut self, name: &str) {
        self.headers.retain(|h| !h.name().eq_ignore_ascii_case(name));
    }

    pub fn body_str(&self) -> &str {
        std::str::from_utf8(&self.body).unwrap_or("")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256 + self.body.len());
        match &self.start {
            StartLine::Request { method, uri } => {
                out.extend_from_slice(format!("{method} {uri} SIP/2.0\r\n").as_bytes())
            }
            StartLine::Response { code, reason } => {
                out.extend_from_slice(format!("SIP/2.0 {code} {reason}\r\n").as_bytes())
            }
        }
        for h in &self.headers {
            out.extend_from_slice(format!("{}: {}\r\n", h.name(), h.value()).as_bytes());
        }
        out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", self.body.len()).as_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// One-line description for trace logs.
    pub fn summary(&self) -> String {
        let call_id = self.call_id().unwrap_or("-");
        match &self.start {
            StartLine::Request { method, uri } => format!("{method} {uri} call-id={call_id}"),
            StartLine::Response { code, reason } => {
                let m = self.cseq().map(|c| c.method.as_str()).unwrap_or("-");
                format!("{code} {reason} ({m}) call-id={call_id}")
            }
        }
    }
}

impl fmt::Display for SipMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.to_bytes()))
    }
}
