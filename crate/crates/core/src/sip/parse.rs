use thiserror::Error;

use super::message::{canonical_name, CSeq, Contact, Header, Method, NameAddr, SipMessage, StartLine, Via};
use super::uri::SipUri;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: malformed start line {text:?}")]
    MalformedStartLine { line: usize, text: String },
    #[error("missing mandatory header {0}")]
    MissingMandatoryHeader(&'static str),
    #[error("line {line}: bad Content-Length {text:?}")]
    BadContentLength { line: usize, text: String },
    #[error("line {line}: bad URI in {text:?}")]
    BadUri { line: usize, text: String },
    #[error("line {line}: malformed header {text:?}")]
    BadHeader { line: usize, text: String },
}

const MANDATORY: [&str; 5] = ["Via", "From", "To", "Call-ID", "CSeq"];

/// Parses one complete datagram. Accepts CRLF or bare LF line endings and
/// folded (whitespace-continued) header lines.
pub fn parse_message(raw: &[u8]) -> Result<SipMessage, ParseError> {
    let (head, body) = split_head(raw);
    let head = std::str::from_utf8(head).map_err(|_| ParseError::BadHeader {
        line: 1,
        text: "non UTF-8 header section".into(),
    })?;

    // (line number, text) with folded continuations merged
    let mut lines: Vec<(usize, String)> = Vec::new();
    for (i, l) in head.split('\n').enumerate() {
        let l = l.strip_suffix('\r').unwrap_or(l);
        if (l.starts_with(' ') || l.starts_with('\t')) && lines.len() > 1 {
            let last = lines.last_mut().expect("non-empty");
            last.1.push(' ');
            last.1.push_str(l.trim());
        } else {
            lines.push((i + 1, l.to_string()));
        }
    }
    while lines.last().is_some_and(|(_, l)| l.is_empty()) {
        lines.pop();
    }
    let mut iter = lines.into_iter();
    let (first_no, first) = iter.next().ok_or(ParseError::MalformedStartLine {
        line: 1,
        text: String::new(),
    })?;
    let start = parse_start_line(first_no, &first)?;

    let mut headers = Vec::new();
    let mut content_length: Option<(usize, usize)> = None;
    for (no, line) in iter {
        let (name, value) = line
            .split_once(':')
            .filter(|(n, _)| !n.trim().is_empty() && !n.contains(char::is_whitespace))
            .ok_or_else(|| ParseError::BadHeader {
                line: no,
                text: line.clone(),
            })?;
        let value = value.trim();
        if name.eq_ignore_ascii_case("Content-Length") {
            let n = value.parse().map_err(|_| ParseError::BadContentLength {
                line: no,
                text: line.clone(),
            })?;
            content_length = Some((n, no));
            continue;
        }
        parse_header(no, &line, name, value, &mut headers)?;
    }

    for m in MANDATORY {
        if !headers.iter().any(|h: &Header| h.name() == m) {
            return Err(ParseError::MissingMandatoryHeader(m));
        }
    }

    let body = match content_length {
        // trailing bytes beyond Content-Length are discarded, as for UDP
        Some((n, _)) if n <= body.len() => body[..n].to_vec(),
        Some((n, no)) => {
            return Err(ParseError::BadContentLength {
                line: no,
                text: format!("Content-Length: {n} but {} body bytes", body.len()),
            })
        }
        None => body.to_vec(),
    };

    Ok(SipMessage {
        start,
        headers,
        body,
    })
}

fn split_head(raw: &[u8]) -> (&[u8], &[u8]) {
    let mut i = 0;
    while i < raw.len() {
        if raw[i] == b'\n' {
            if raw.get(i + 1) == Some(&b'\n') {
                return (&raw[..i], &raw[i + 2..]);
            }
            if raw.get(i + 1) == Some(&b'\r') && raw.get(i + 2) == Some(&b'\n') {
                return (&raw[..i], &raw[i + 3..]);
            }
        }
        i += 1;
    }
    (raw, &[])
}

fn parse_start_line(no: usize, line: &str) -> Result<StartLine, ParseError> {
    let bad = || ParseError::MalformedStartLine {
        line: no,
        text: line.to_string(),
    };
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let (code, reason) = rest.split_once(' ').unwrap_or((rest, ""));
        let code: u16 = code.parse().map_err(|_| bad())?;
        if !(100..=699).contains(&code) {
            return Err(bad());
        }
        return Ok(StartLine::Response {
            code,
            reason: reason.trim().to_string(),
        });
    }
    let mut parts = line.split(' ');
    let (Some(method), Some(uri), Some("SIP/2.0"), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    let method: Method = method.parse().map_err(|_| bad())?;
    let uri = uri.parse().map_err(|_| ParseError::BadUri {
        line: no,
        text: line.to_string(),
    })?;
    Ok(StartLine::Request { method, uri })
}

fn parse_header(
    no: usize,
    line: &str,
    name: &str,
    value: &str,
    out: &mut Vec<Header>,
) -> Result<(), ParseError> {
    let bad = || ParseError::BadHeader {
        line: no,
        text: line.to_string(),
    };
    let bad_uri = |_| ParseError::BadUri {
        line: no,
        text: line.to_string(),
    };
    let name = canonical_name(name.trim());
    match name.as_str() {
        "Via" => {
            for v in split_list(value) {
                out.push(Header::Via(parse_via(v).ok_or_else(bad)?));
            }
        }
        "From" => out.push(Header::From(parse_name_addr(value).map_err(bad_uri)?)),
        "To" => out.push(Header::To(parse_name_addr(value).map_err(bad_uri)?)),
        "Contact" => {
            for c in split_list(value) {
                if c == "*" {
                    out.push(Header::Contact(Contact::Wildcard));
                } else {
                    out.push(Header::Contact(Contact::Addr(
                        parse_name_addr(c).map_err(bad_uri)?,
                    )));
                }
            }
        }
        "Call-ID" => {
            if value.is_empty() || value.contains(char::is_whitespace) {
                return Err(bad());
            }
            out.push(Header::CallId(value.to_string()))
        }
        "CSeq" => {
            let (n, m) = value.split_once(char::is_whitespace).ok_or_else(bad)?;
            let seq = n.parse().map_err(|_| bad())?;
            let method = m.trim().parse().map_err(|_| bad())?;
            out.push(Header::CSeq(CSeq { seq, method }));
        }
        "Max-Forwards" => out.push(Header::MaxForwards(value.parse().map_err(|_| bad())?)),
        "Expires" => out.push(Header::Expires(value.parse().map_err(|_| bad())?)),
        _ => out.push(Header::Other(name, value.to_string())),
    }
    Ok(())
}

/// Splits a comma-separated header list, ignoring commas inside `<>` or quotes.
fn split_list(value: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    for (i, c) in value.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '<' if !quoted => depth += 1,
            '>' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                out.push(value[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(value[start..].trim());
    out
}

fn parse_params(s: &str) -> Option<Vec<(String, Option<String>)>> {
    let mut out = Vec::new();
    for p in s.split(';') {
        let p = p.trim();
        if p.is_empty() {
            continue;
        }
        match p.split_once('=') {
            Some((k, v)) => {
                let (k, v) = (k.trim(), v.trim());
                if k.is_empty() {
                    return None;
                }
                out.push((k.to_string(), Some(v.to_string())));
            }
            None => out.push((p.to_string(), None)),
        }
    }
    Some(out)
}

#[derive(Debug)]
pub(crate) struct AddrSyntax;

pub(crate) fn parse_name_addr(value: &str) -> Result<NameAddr, AddrSyntax> {
    let value = value.trim();
    if let Some(lt) = value.find('<') {
        let gt = value[lt..].find('>').ok_or(AddrSyntax)? + lt;
        let display = value[..lt].trim().trim_matches('"').trim();
        let uri: SipUri = value[lt + 1..gt].trim().parse().map_err(|_| AddrSyntax)?;
        let params = parse_params(&value[gt + 1..]).ok_or(AddrSyntax)?;
        Ok(NameAddr {
            display: (!display.is_empty()).then(|| display.to_string()),
            uri,
            params,
        })
    } else {
        let (uri, params) = value.split_once(';').unwrap_or((value, ""));
        Ok(NameAddr {
            display: None,
            uri: uri.parse().map_err(|_| AddrSyntax)?,
            params: parse_params(params).ok_or(AddrSyntax)?,
        })
    }
}

fn parse_via(value: &str) -> Option<Via> {
    let (proto, rest) = value.split_once(char::is_whitespace)?;
    let transport = proto.strip_prefix("SIP/2.0/")?;
    if transport.is_empty() {
        return None;
    }
    let rest = rest.trim();
    let (sent_by, params) = rest.split_once(';').unwrap_or((rest, ""));
    let sent_by = sent_by.trim();
    let (host, port) = match sent_by.rsplit_once(':') {
        Some((h, p)) => (h, Some(p.parse().ok()?)),
        None => (sent_by, None),
    };
    if host.is_empty() {
        return None;
    }
    Some(Via {
        transport: transport.to_string(),
        host: host.to_string(),
        port,
        params: parse_params(params)?,
    })
}
