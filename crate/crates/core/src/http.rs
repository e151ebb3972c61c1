//! Minimal HTTP/1.1 framing for single-datagram requests and responses.
//! Used by the XDMS access interface and the web feed.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn split(raw: &[u8]) -> Option<(Vec<String>, Vec<u8>)> {
    let pos = raw.windows(4).position(|w| w == b"\r\n\r\n");
    let (head, body) = match pos {
        Some(p) => (&raw[..p], raw[p + 4..].to_vec()),
        None => (raw, Vec::new()),
    };
    let head = std::str::from_utf8(head).ok()?;
    Some((head.split("\r\n").map(str::to_string).collect(), body))
}

fn parse_headers(lines: &[String]) -> Option<Vec<(String, String)>> {
    lines
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (k, v) = l.split_once(':')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn bounded_body(headers: &[(String, String)], mut body: Vec<u8>) -> Option<Vec<u8>> {
    if let Some(n) = header(headers, "Content-Length") {
        let n: usize = n.parse().ok()?;
        if n > body.len() {
            return None;
        }
        body.truncate(n);
    }
    Some(body)
}

impl HttpRequest {
    pub fn new(method: &str, path: &str) -> Self {
        HttpRequest {
            method: method.to_string(),
            path: path.to_string(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn with_body(mut self, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        self.headers.push(("Content-Type".into(), content_type.into()));
        self.body = body.into();
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }

    pub fn parse(raw: &[u8]) -> Option<Self> {
        let (lines, body) = split(raw)?;
        let mut parts = lines.first()?.split(' ');
        let method = parts.next()?.to_string();
        let path = parts.next()?.to_string();
        if !parts.next()?.starts_with("HTTP/1.") {
            return None;
        }
        let headers = parse_headers(&lines[1..])?;
        let body = bounded_body(&headers, body)?;
        Some(HttpRequest {
            method,
            path,
            headers,
            body,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = format!("{} {} HTTP/1.1\r\n", self.method, self.path);
        for (k, v) in &self.headers {
            let _ = write!(s, "{k}: {v}\r\n");
        }
        let _ = write!(s, "Content-Length: {}\r\n\r\n", self.body.len());
        let mut out = s.into_bytes();
        out.extend_from_slice(&self.body);
        out
    }
}

impl HttpResponse {
    pub fn new(status: u16, reason: &str) -> Self {
        HttpResponse {
            status,
            reason: reason.to_string(),
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }

    pub fn with_body(self, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        let mut r = self.with_header("Content-Type", content_type);
        r.body = body.into();
        r
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }

    pub fn parse(raw: &[u8]) -> Option<Self> {
        let (lines, body) = split(raw)?;
        let rest = lines.first()?.strip_prefix("HTTP/1.1 ")?;
        let (code, reason) = rest.split_once(' ').unwrap_or((rest, ""));
        let headers = parse_headers(&lines[1..])?;
        let body = bounded_body(&headers, body)?;
        Some(HttpResponse {
            status: code.parse().ok()?,
            reason: reason.to_string(),
            headers,
            body,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason);
        for (k, v) in &self.headers {
            let _ = write!(s, "{k}: {v}\r\n");
        }
        let _ = write!(s, "Content-Length: {}\r\n\r\n", self.body.len());
        let mut out = s.into_bytes();
        out.extend_from_slice(&self.body);
        out
    }
}

pub fn is_http(payload: &[u8]) -> bool {
    payload.starts_with(b"HTTP/1.") || {
        let line_end = payload.iter().position(|&b| b == b'\r').unwrap_or(payload.len());
        payload[..line_end].ends_with(b" HTTP/1.1")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_and_response_framing() {
        let req = HttpRequest::new("PUT", "/a/b.xml").with_body("application/xml", "<a/>");
        let back = HttpRequest::parse(&req.to_bytes()).unwrap();
        assert_eq!(back.method, "PUT");
        assert_eq!(back.body, b"<a/>");
        assert!(is_http(&req.to_bytes()));

        let resp = HttpResponse::new(404, "Not Found");
        let back = HttpResponse::parse(&resp.to_bytes()).unwrap();
        assert_eq!(back.status, 404);
        assert!(back.body.is_empty());
        assert!(!is_http(b"REGISTER sip:x SIP/2.0\r\n"));
    }
}
