//! Reference implementations shared by the integration tests and the
//! acceptance harness. They deliberately avoid the crate's own evaluation
//! code paths: rules are evaluated against serialized wire text, geometry
//! is recomputed from scratch, and group documents are re-rendered by hand.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use issee::geo::{GazetteerEntry, PoiEntry};
use issee::sip::{CSeq, Header, Method, NameAddr, SipMessage, SipUri, Via};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

// ---------------------------------------------------------------- iFC

pub const HEADER_POOL: [&str; 4] = ["Sensor-type", "Event", "Subject", "Priority"];
pub const VALUE_POOL: [&str; 5] = ["temperature", "Temperature; Latitude: 48", "presence", "reg", "urgent"];

#[derive(Debug, Clone)]
pub enum SptSpec {
    Header { name: &'static str, literal: Option<&'static str> },
    Case(u8),
}

#[derive(Debug, Clone)]
pub struct SptCase {
    pub group: u32,
    pub negated: bool,
    pub spec: SptSpec,
}

#[derive(Debug, Clone)]
pub struct RuleCase {
    pub priority: i32,
    pub spts: Vec<SptCase>,
    pub server: String,
}

pub fn random_rules(rng: &mut impl Rng) -> Vec<RuleCase> {
    let n = rng.gen_range(1..=3);
    let mut prios: Vec<i32> = (0..10).collect();
    prios.shuffle(rng);
    (0..n)
        .map(|i| {
            let spts = (0..rng.gen_range(1..=4))
                .map(|_| SptCase {
                    group: rng.gen_range(0..3),
                    negated: rng.gen_bool(0.25),
                    spec: if rng.gen_bool(0.8) {
                        SptSpec::Header {
                            name: HEADER_POOL[rng.gen_range(0..HEADER_POOL.len())],
                            literal: if rng.gen_bool(0.4) {
                                None
                            } else {
                                Some(["temperature", "presence", "reg", "URGENT"][rng.gen_range(0..4)])
                            },
                        }
                    } else {
                        SptSpec::Case(rng.gen_range(0..3))
                    },
                })
                .collect();
            RuleCase {
                priority: prios[i],
                spts,
                server: format!("sip:as{i}@10.0.0.{}:5050", i + 1),
            }
        })
        .collect()
}

pub fn rules_xml(rules: &[RuleCase]) -> String {
    let mut out = String::new();
    let wrap = rules.len() > 1;
    if wrap {
        out.push_str("<ServiceProfile>\n");
    }
    for r in rules {
        out.push_str(&format!("<InitialFilterCriteria>\n<Priority>{}</Priority>\n<TriggerPoint>\n", r.priority));
        for s in &r.spts {
            out.push_str(&format!(
                "<SPT>\n<ConditionNegated>{}</ConditionNegated>\n<Group>{}</Group>\n",
                s.negated as u8, s.group
            ));
            match &s.spec {
                SptSpec::Header { name, literal } => out.push_str(&format!(
                    "<SIPHeader>\n<Header>{name}</Header>\n<Content>{}</Content>\n</SIPHeader>\n",
                    literal.unwrap_or("*")
                )),
                SptSpec::Case(c) => out.push_str(&format!("<SessionCase>{c}</SessionCase>\n")),
            }
            out.push_str("</SPT>\n");
        }
        out.push_str(&format!(
            "</TriggerPoint>\n<ApplicationServer>\n<ServerName>{}</ServerName>\n<DefaultHandling>0</DefaultHandling>\n</ApplicationServer>\n</InitialFilterCriteria>\n",
            r.server
        ));
    }
    if wrap {
        out.push_str("</ServiceProfile>\n");
    }
    out
}

pub fn random_register(rng: &mut impl Rng) -> SipMessage {
    let me: SipUri = "sip:sensor@hommel.com".parse().unwrap();
    let mut m = SipMessage::request(Method::Register, "sip:hommel.com".parse().unwrap())
        .with(Header::Via(Via::udp("10.1.0.1", Some(5060), "z9hG4bKx")))
        .with(Header::From(NameAddr::new(me.clone()).with_param("tag", Some("1"))))
        .with(Header::To(NameAddr::new(me)))
        .with(Header::CallId("c1".into()))
        .with(Header::CSeq(CSeq {
            seq: 1,
            method: Method::Register,
        }));
    for _ in 0..rng.gen_range(0..4) {
        let name = HEADER_POOL[rng.gen_range(0..HEADER_POOL.len())];
        let value = VALUE_POOL[rng.gen_range(0..VALUE_POOL.len())];
        m = m.with(Header::other(name, value));
    }
    m
}

/// `Name: value` pairs read back from the serialized message.
fn wire_headers(m: &SipMessage) -> Vec<(String, String)> {
    let text = String::from_utf8(m.to_bytes()).unwrap();
    let head = text.split("\r\n\r\n").next().unwrap();
    head.split("\r\n")
        .skip(1)
        .filter_map(|l| l.split_once(':'))
        .map(|(n, v)| (n.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn spt_truth(s: &SptCase, headers: &[(String, String)], case: u8) -> bool {
    let raw = match &s.spec {
        SptSpec::Case(c) => *c == case,
        SptSpec::Header { name, literal } => headers.iter().any(|(n, v)| {
            n.eq_ignore_ascii_case(name)
                && match literal {
                    None => true,
                    Some(lit) => {
                        let lit = lit.to_ascii_lowercase();
                        let first = v.split(';').next().unwrap().trim().to_ascii_lowercase();
                        v.to_ascii_lowercase() == lit || first == lit
                    }
                }
        }),
    };
    raw ^ s.negated
}

/// Servers whose rules fire, in ascending priority: some group has every
/// one of its SPTs true.
pub fn brute_force_ifc(rules: &[RuleCase], m: &SipMessage, case: u8) -> Vec<String> {
    let headers = wire_headers(m);
    let mut sorted: Vec<&RuleCase> = rules.iter().collect();
    sorted.sort_by_key(|r| r.priority);
    sorted
        .into_iter()
        .filter(|r| {
            let groups: BTreeSet<u32> = r.spts.iter().map(|s| s.group).collect();
            groups.into_iter().any(|g| {
                r.spts
                    .iter()
                    .filter(|s| s.group == g)
                    .all(|s| spt_truth(s, &headers, case))
            })
        })
        .map(|r| r.server.clone())
        .collect()
}

// ---------------------------------------------------------------- geo

/// Great-circle distance via the atan2 form of the haversine formula.
pub fn distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const R: f64 = 6_371_000.0;
    let (f1, f2) = (lat1.to_radians(), lat2.to_radians());
    let a = ((f2 - f1) / 2.0).sin().powi(2) + f1.cos() * f2.cos() * ((lon2 - lon1).to_radians() / 2.0).sin().powi(2);
    2.0 * R * a.sqrt().atan2((1.0 - a).sqrt())
}

pub fn locate(gaz: &[GazetteerEntry], lat: f64, lon: f64) -> (String, Option<String>) {
    let mut hits: Vec<(usize, &GazetteerEntry)> = gaz
        .iter()
        .enumerate()
        .filter(|(_, e)| e.lat_min <= lat && lat <= e.lat_max && e.lon_min <= lon && lon <= e.lon_max)
        .collect();
    hits.sort_by_key(|(i, e)| (e.priority, *i));
    match hits.first() {
        Some((_, e)) => (e.labels.country.clone(), e.labels.town.clone()),
        None => ("unknown".into(), None),
    }
}

// ---------------------------------------------------------------- groups

#[derive(Debug, Clone)]
pub struct Placed {
    pub uri: String,
    pub sensor_type: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone)]
pub struct NewsCase {
    pub slug: String,
    pub keywords: Vec<String>,
    pub hint: Option<(f64, f64, f64)>,
}

pub fn group_keys(s: &Placed, gaz: &[GazetteerEntry], pois: &[PoiEntry], news: &[NewsCase]) -> Vec<String> {
    let t = s.sensor_type.to_ascii_lowercase();
    let mut keys = vec![format!("by-type/{t}")];
    let (country, town) = locate(gaz, s.lat, s.lon);
    keys.push(format!("by-location/{country}"));
    if let Some(town) = town {
        keys.push(format!("by-location/{country}/{town}"));
    }
    for p in pois {
        if distance_m(s.lat, s.lon, p.location.lat, p.location.lon) <= p.radius_m {
            keys.push(format!("pertinence/{}", p.name));
        }
    }
    for n in news {
        let by_word = n.keywords.iter().any(|k| k.to_ascii_lowercase() == t);
        let by_area = n
            .hint
            .is_some_and(|(lat, lon, r)| distance_m(lat, lon, s.lat, s.lon) <= r);
        if by_word || by_area {
            keys.push(format!("news/{}", n.slug));
        }
    }
    keys
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

/// Group key → canonical group document, for non-empty groups only.
pub fn expected_group_documents(
    sensors: &[Placed],
    gaz: &[GazetteerEntry],
    pois: &[PoiEntry],
    news: &[NewsCase],
) -> BTreeMap<String, String> {
    let mut members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for s in sensors {
        for k in group_keys(s, gaz, pois, news) {
            members.entry(k).or_default().insert(s.uri.clone());
        }
    }
    members
        .into_iter()
        .map(|(k, ms)| {
            let mut doc = format!("<group key=\"{}\">", esc(&k));
            for m in ms {
                doc.push_str(&format!("<member uri=\"{}\"/>", esc(&m)));
            }
            doc.push_str("</group>");
            (k, doc)
        })
        .collect()
}
