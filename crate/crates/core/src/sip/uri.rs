use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::netsim::Addr;

pub const DEFAULT_SIP_PORT: u16 = 5060;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UriError {
    #[error("missing or unsupported scheme in {0:?}")]
    Scheme(String),
    #[error("empty host in {0:?}")]
    EmptyHost(String),
    #[error("bad port in {0:?}")]
    Port(String),
    #[error("bad character in {0:?}")]
    Character(String),
}

/// A `sip:` URI. Only the plain `sip` scheme is supported.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SipUri {
    pub user: Option<String>,
    pub host: String,
    pub port: Option<u16>,
    pub params: Vec<(String, Option<String>)>,
}

impl SipUri {
    pub fn new(user: Option<&str>, host: &str) -> Self {
        SipUri {
            user: user.map(str::to_string),
            host: host.to_string(),
            port: None,
            params: Vec::new(),
        }
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = Some(port);
        self
    }

    pub fn param(&self, name: &str) -> Option<Option<&str>> {
        self.params
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_deref())
    }

    /// The URI stripped of parameters; used as the key for identities.
    pub fn identity(&self) -> SipUri {
        SipUri {
            user: self.user.clone(),
            host: self.host.to_ascii_lowercase(),
            port: self.port,
            params: Vec::new(),
        }
    }

    /// Host-only form (`sip:host[:port]`), used as a request URI toward a server.
    pub fn domain(&self) -> SipUri {
        SipUri {
            user: None,
            host: self.host.clone(),
            port: self.port,
            params: Vec::new(),
        }
    }

    pub fn transport_addr(&self) -> Addr {
        Addr::new(&self.host, self.port.unwrap_or(DEFAULT_SIP_PORT))
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| {
            !c.is_whitespace() && !matches!(c, '<' | '>' | ';' | '@' | ',' | '"' | '?' | ':')
        })
}

fn valid_value(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| !c.is_whitespace() && !matches!(c, '<' | '>' | ';' | ',' | '"' | '?'))
}

impl FromStr for SipUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let rest = match s.split_once(':') {
            Some((scheme, rest)) if scheme.eq_ignore_ascii_case("sip") => rest,
            _ => return Err(UriError::Scheme(s.to_string())),
        };
        // URI headers (`?`) are not supported
        if rest.contains('?') || rest.contains(char::is_whitespace) {
            return Err(UriError::Character(s.to_string()));
        }
        let mut parts = rest.split(';');
        let hostpart = parts.next().unwrap_or_default();
        let (user, hostport) = match hostpart.rsplit_once('@') {
            Some((u, h)) => {
                if u.is_empty() || u.contains(['<', '>', '"', ',']) {
                    return Err(UriError::Character(s.to_string()));
                }
                (Some(u.to_string()), h)
            }
            None => (None, hostpart),
        };
        let (host, port) = match hostport.rsplit_once(':') {
            Some((h, p)) => {
                let port = p
                    .parse::<u16>()
                    .map_err(|_| UriError::Port(s.to_string()))?;
                (h, Some(port))
            }
            None => (hostport, None),
        };
        if host.is_empty() {
            return Err(UriError::EmptyHost(s.to_string()));
        }
        if !valid_token(host) {
            return Err(UriError::Character(s.to_string()));
        }
        let mut params = Vec::new();
        for p in parts {
            if p.is_empty() {
                continue;
            }
            match p.split_once('=') {
                Some((k, v)) if valid_token(k) && valid_value(v) => {
                    params.push((k.to_string(), Some(v.to_string())))
                }
                None if valid_token(p) => params.push((p.to_string(), None)),
                _ => return Err(UriError::Character(s.to_string())),
            }
        }
        Ok(SipUri {
            user,
            host: host.to_string(),
            port,
            params,
        })
    }
}

impl fmt::Display for SipUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sip:")?;
        if let Some(user) = &self.user {
            write!(f, "{user}@")?;
        }
        f.write_str(&self.host)?;
        if let Some(port) = self.port {
            write!(f, ":{port}")?;
        }
        write_params(f, &self.params)
    }
}

pub(crate) fn write_params(
    f: &mut fmt::Formatter<'_>,
    params: &[(String, Option<String>)],
) -> fmt::Result {
    for (k, v) in params {
        match v {
            Some(v) => write!(f, ";{k}={v}")?,
            None => write!(f, ";{k}")?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_uris() {
        let u: SipUri = "sip:sensorA@hommel.com".parse().unwrap();
        assert_eq!(u.user.as_deref(), Some("sensorA"));
        assert_eq!(u.host, "hommel.com");
        assert_eq!(u.port, None);

        let u: SipUri = "sip:issee@192.168.130.76:5050".parse().unwrap();
        assert_eq!(u.port, Some(5050));
        assert_eq!(u.transport_addr(), Addr::new("192.168.130.76", 5050));
        assert_eq!(u.domain().to_string(), "sip:192.168.130.76:5050");
    }

    #[test]
    fn params_round_trip() {
        let s = "sip:a@h:5070;transport=udp;lr";
        let u: SipUri = s.parse().unwrap();
        assert_eq!(u.param("transport"), Some(Some("udp")));
        assert_eq!(u.param("lr"), Some(None));
        assert_eq!(u.to_string(), s);
    }

    #[test]
    fn rejects_bad_uris() {
        assert!(matches!("tel:+331".parse::<SipUri>(), Err(UriError::Scheme(_))));
        assert!(matches!("sip:a@".parse::<SipUri>(), Err(UriError::EmptyHost(_))));
        assert!(matches!("sip:h:99999".parse::<SipUri>(), Err(UriError::Port(_))));
        assert!(matches!("sip:a b@h".parse::<SipUri>(), Err(UriError::Character(_))));
    }
}
