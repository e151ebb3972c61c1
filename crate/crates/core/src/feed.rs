//! News items and the line-oriented web feed that carries them.
//!
//! Feed format, one item per line (`#` comments and blank lines ignored):
//!
//! ```text
//! slug | keyword,keyword | [lat,lon,radius_m] | headline
//! ```
//!
//! The location column may be empty. The feed is served over HTTP as
//! `GET /feed` by [`FeedServer`].

use std::collections::BTreeSet;

use crate::geo::{haversine_m, LatLon};
use crate::http::{HttpRequest, HttpResponse};
use crate::netsim::{Addr, Ctx, Node};

pub const FEED_PATH: &str = "/feed";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub center: LatLon,
    pub radius_m: f64,
}

impl Area {
    pub fn contains(&self, p: LatLon) -> bool {
        haversine_m(self.center, p) <= self.radius_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsItem {
    pub slug: String,
    /// Lowercased.
    pub keywords: Vec<String>,
    pub location_hint: Option<Area>,
    pub headline: String,
    pub received_at: u64,
}

impl NewsItem {
    pub fn new(slug: &str, keywords: &[&str], location_hint: Option<Area>, headline: &str) -> Self {
        NewsItem {
            slug: slug.to_string(),
            keywords: keywords.iter().map(|k| k.to_lowercase()).collect(),
            location_hint,
            headline: headline.to_string(),
            received_at: 0,
        }
    }

    pub fn to_line(&self) -> String {
        let area = self
            .location_hint
            .map(|a| format!("[{},{},{}]", a.center.lat, a.center.lon, a.radius_m))
            .unwrap_or_default();
        format!("{} | {} | {} | {}", self.slug, self.keywords.join(","), area, self.headline)
    }
}

fn is_slug(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub fn parse_item(line: &str) -> Result<NewsItem, String> {
    let cols: Vec<&str> = line.splitn(4, '|').map(str::trim).collect();
    if cols.len() != 4 {
        return Err("expected slug | keywords | location | headline".into());
    }
    if !is_slug(cols[0]) {
        return Err(format!("bad slug {:?}", cols[0]));
    }
    let keywords: Vec<String> = cols[1]
        .split(',')
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    let location_hint = if cols[2].is_empty() {
        None
    } else {
        let inner = cols[2]
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| format!("location must be [lat,lon,radius_m], got {:?}", cols[2]))?;
        let nums: Vec<f64> = inner
            .split(',')
            .map(|n| n.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("bad location number: {e}"))?;
        let [lat, lon, radius_m] = nums[..] else {
            return Err("location needs three numbers".into());
        };
        let center = LatLon::new(lat, lon);
        if !center.in_range() || !(radius_m > 0.0) {
            return Err("location out of range".into());
        }
        Some(Area { center, radius_m })
    };
    Ok(NewsItem {
        slug: cols[0].to_string(),
        keywords,
        location_hint,
        headline: cols[3].to_string(),
        received_at: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedWarning {
    pub line: usize,
    pub reason: String,
}

/// Parses a feed, skipping malformed lines and repeated slugs.
pub fn parse_feed(text: &str) -> (Vec<NewsItem>, Vec<FeedWarning>) {
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_item(line) {
            Ok(item) if !seen.insert(item.slug.clone()) => warnings.push(FeedWarning {
                line: i + 1,
                reason: format!("duplicate slug {}", item.slug),
            }),
            Ok(item) => items.push(item),
            Err(reason) => {
                log::warn!("feed line {}: {reason}", i + 1);
                warnings.push(FeedWarning { line: i + 1, reason });
            }
        }
    }
    (items, warnings)
}

/// Serves feed text over HTTP. Can be told to fail a number of requests to
/// exercise client retry.
#[derive(Debug, Default)]
pub struct FeedServer {
    text: String,
    fail_next: u32,
    pub served: u64,
}

impl FeedServer {
    pub fn new(text: impl Into<String>) -> Self {
        FeedServer {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn push_line(&mut self, line: &str) {
        if !self.text.is_empty() && !self.text.ends_with('\n') {
            self.text.push('\n');
        }
        self.text.push_str(line);
        self.text.push('\n');
    }

    pub fn fail_next(&mut self, n: u32) {
        self.fail_next = n;
    }

    pub fn respond(&mut self, req: &HttpRequest) -> HttpResponse {
        if req.method != "GET" || req.path != FEED_PATH {
            return HttpResponse::new(404, "Not Found");
        }
        if self.fail_next > 0 {
            self.fail_next -= 1;
            return HttpResponse::new(503, "Service Unavailable");
        }
        self.served += 1;
        HttpResponse::new(200, "OK").with_body("text/plain", self.text.as_bytes())
    }
}

impl Node for FeedServer {
    fn on_datagram(&mut self, ctx: &mut Ctx<'_>, local: &Addr, from: &Addr, payload: &[u8]) {
        let resp = match HttpRequest::parse(payload) {
            Some(req) => self.respond(&req),
            None => HttpResponse::new(400, "Bad Request"),
        };
        ctx.send(local, from, resp.to_bytes());
    }
}

/// Retry schedule for feed fetches: doubling from `base_ms` up to `max_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base_ms: u64,
    pub max_ms: u64,
    pub attempt: u32,
}

impl Backoff {
    pub fn new(base_ms: u64, max_ms: u64) -> Self {
        Backoff {
            base_ms,
            max_ms,
            attempt: 0,
        }
    }

    pub fn next_delay(&mut self) -> u64 {
        let d = self.base_ms.saturating_mul(1 << self.attempt.min(20)).min(self.max_ms);
        self.attempt += 1;
        d
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_items_and_skips_bad_lines() {
        let text = "\
# fixture
heatwave | Temperature,weather | [48,2,50000] | Heat wave over the region
storm | humidity | | Storm warning
broken | a | [1,2] | missing radius
heatwave | x | | duplicate
";
        let (items, warnings) = parse_feed(text);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].keywords, vec!["temperature", "weather"]);
        assert!(items[0].location_hint.unwrap().contains(LatLon::new(48.1, 2.1)));
        assert_eq!(items[1].location_hint, None);
        assert_eq!(warnings.iter().map(|w| w.line).collect::<Vec<_>>(), vec![4, 5]);
        assert_eq!(parse_item(&items[0].to_line()).unwrap(), items[0]);
        assert!(parse_feed("").0.is_empty());
    }

    #[test]
    fn server_and_backoff() {
        let mut s = FeedServer::new("a | b | | c\n");
        s.fail_next(1);
        let req = HttpRequest::new("GET", FEED_PATH);
        assert_eq!(s.respond(&req).status, 503);
        assert_eq!(s.respond(&req).status, 200);
        assert_eq!(s.respond(&HttpRequest::new("GET", "/other")).status, 404);

        let mut b = Backoff::new(100, 1000);
        let delays: Vec<u64> = (0..6).map(|_| b.next_delay()).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1000, 1000]);
    }
}
