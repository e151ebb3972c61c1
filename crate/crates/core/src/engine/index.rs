//! Sensor descriptors, group keys, document serialization, classification
//! and queries. Everything here is pure data; the node in the parent module
//! drives it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::{Arc, RwLock};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

use crate::feed::{Area, NewsItem};
use crate::geo::{pois_within, AddressLabels, LatLon, PoiEntry};
use crate::presence::Status;
use crate::sip::SipUri;
use crate::xml;

/// Characters kept verbatim in path segments.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

pub fn escape_segment(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

pub fn unescape_segment(s: &str) -> String {
    percent_decode_str(s).decode_utf8_lossy().into_owned()
}

/// `/sensors/<uri without scheme, percent-encoded>.xml`
pub fn sensor_doc_path(uri: &SipUri) -> String {
    let s = uri.to_string();
    let bare = s.strip_prefix("sip:").unwrap_or(&s);
    format!("/sensors/{}.xml", escape_segment(bare))
}

pub fn uri_from_doc_path(path: &str) -> Option<SipUri> {
    let name = path.strip_prefix("/sensors/")?.strip_suffix(".xml")?;
    format!("sip:{}", unescape_segment(name)).parse().ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorDescriptor {
    pub uri: SipUri,
    pub sensor_type: String,
    pub latitude: f64,
    pub longitude: f64,
    pub address: AddressLabels,
    pub availability: Status,
    pub registered_at: u64,
    pub reg_expires_at: u64,
    pub doc_path: String,
}

impl SensorDescriptor {
    pub fn location(&self) -> LatLon {
        LatLon::new(self.latitude, self.longitude)
    }

    pub fn uri_string(&self) -> String {
        self.uri.to_string()
    }
}

fn push_elem(out: &mut String, name: &str, text: &str) {
    out.push_str(&format!("<{name}>{}</{name}>", xml::escape(text)));
}

/// Fixed element order, no whitespace between elements.
pub fn build_sensor_document(d: &SensorDescriptor) -> String {
    let mut s = String::from("<sensor>");
    push_elem(&mut s, "uri", &d.uri.to_string());
    push_elem(&mut s, "type", &d.sensor_type);
    push_elem(&mut s, "latitude", &d.latitude.to_string());
    push_elem(&mut s, "longitude", &d.longitude.to_string());
    s.push_str("<address>");
    push_elem(&mut s, "country", &d.address.country);
    if let Some(t) = &d.address.town {
        push_elem(&mut s, "town", t);
    }
    if let Some(st) = &d.address.street {
        push_elem(&mut s, "street", st);
    }
    s.push_str("</address>");
    push_elem(&mut s, "availability", d.availability.as_str());
    push_elem(&mut s, "registered", &d.registered_at.to_string());
    push_elem(&mut s, "expires", &d.reg_expires_at.to_string());
    s.push_str("</sensor>");
    s
}

pub fn parse_sensor_document(text: &str) -> Option<SensorDescriptor> {
    let doc = roxmltree::Document::parse(text).ok()?;
    let root = doc.root_element();
    if root.tag_name().name() != "sensor" {
        return None;
    }
    let field = |n: &str| xml::child_text(root, n);
    let addr = root.children().find(|c| c.has_tag_name("address"))?;
    let uri: SipUri = field("uri")?.parse().ok()?;
    Some(SensorDescriptor {
        doc_path: sensor_doc_path(&uri),
        uri,
        sensor_type: field("type")?.to_string(),
        latitude: field("latitude")?.parse().ok()?,
        longitude: field("longitude")?.parse().ok()?,
        address: AddressLabels {
            country: xml::child_text(addr, "country")?.to_string(),
            town: xml::child_text(addr, "town").map(str::to_string),
            street: xml::child_text(addr, "street").map(str::to_string),
        },
        availability: match field("availability")? {
            "open" => Status::Open,
            "closed" => Status::Closed,
            _ => return None,
        },
        registered_at: field("registered")?.parse().ok()?,
        reg_expires_at: field("expires")?.parse().ok()?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKey {
    ByType(String),
    ByLocation { country: String, town: Option<String> },
    Pertinence(String),
    News(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized group key {0:?}")]
pub struct BadGroupKey(pub String);

impl GroupKey {
    pub fn by_type(t: &str) -> Self {
        GroupKey::ByType(t.to_ascii_lowercase())
    }

    fn segments(&self) -> (&'static str, Vec<&str>) {
        match self {
            GroupKey::ByType(t) => ("by-type", vec![t]),
            GroupKey::ByLocation { country, town } => {
                let mut v = vec![country.as_str()];
                v.extend(town.as_deref());
                ("by-location", v)
            }
            GroupKey::Pertinence(p) => ("pertinence", vec![p]),
            GroupKey::News(n) => ("news", vec![n]),
        }
    }

    /// XDMS path, e.g. `/groups/by-location/France/Paris.xml`.
    pub fn path(&self) -> String {
        let (kind, segs) = self.segments();
        let segs: Vec<String> = segs.iter().map(|s| escape_segment(s)).collect();
        format!("/groups/{kind}/{}.xml", segs.join("/"))
    }

    pub fn from_path(path: &str) -> Option<Self> {
        let rest = path.strip_prefix("/groups/")?.strip_suffix(".xml")?;
        let parts: Vec<String> = rest.split('/').map(unescape_segment).collect();
        Self::from_parts(&parts)
    }

    fn from_parts(parts: &[String]) -> Option<Self> {
        match parts {
            [k, t] if k == "by-type" && !t.is_empty() => Some(GroupKey::ByType(t.clone())),
            [k, c] if k == "by-location" && !c.is_empty() => Some(GroupKey::ByLocation {
                country: c.clone(),
                town: None,
            }),
            [k, c, t] if k == "by-location" && !c.is_empty() && !t.is_empty() => Some(GroupKey::ByLocation {
                country: c.clone(),
                town: Some(t.clone()),
            }),
            [k, p] if k == "pertinence" && !p.is_empty() => Some(GroupKey::Pertinence(p.clone())),
            [k, n] if k == "news" && !n.is_empty() => Some(GroupKey::News(n.clone())),
            _ => None,
        }
    }
}

/// Human form used in documents and subscriptions: `by-type/temperature`,
/// `by-location/France/Paris`. Labels containing `/` only round-trip
/// through [`GroupKey::path`].
impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, segs) = self.segments();
        write!(f, "{kind}/{}", segs.join("/"))
    }
}

impl std::str::FromStr for GroupKey {
    type Err = BadGroupKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<String> = s.trim().split('/').map(str::to_string).collect();
        let mut key = Self::from_parts(&parts).ok_or_else(|| BadGroupKey(s.to_string()))?;
        if let GroupKey::ByType(t) = &mut key {
            t.make_ascii_lowercase();
        }
        Ok(key)
    }
}

pub fn build_group_document<'a>(key: &GroupKey, members: impl IntoIterator<Item = &'a String>) -> String {
    let mut s = format!("<group key=\"{}\">", xml::escape(&key.to_string()));
    for m in members {
        s.push_str(&format!("<member uri=\"{}\"/>", xml::escape(m)));
    }
    s.push_str("</group>");
    s
}

/// Group document for a key that currently has no members.
pub fn empty_group_document(key: &GroupKey) -> String {
    format!("<group key=\"{}\"/>", xml::escape(&key.to_string()))
}

/// `(key, members)` of a group document, members in document order.
pub fn parse_group_document(text: &str) -> Option<(String, Vec<String>)> {
    let doc = roxmltree::Document::parse(text).ok()?;
    let root = doc.root_element();
    if root.tag_name().name() != "group" {
        return None;
    }
    let members = root
        .children()
        .filter(|c| c.has_tag_name("member"))
        .map(|c| c.attribute("uri").map(str::to_string))
        .collect::<Option<Vec<_>>>()?;
    Some((root.attribute("key")?.to_string(), members))
}

/// Decides whether a news item concerns a sensor.
pub trait NewsMatcher: Send + Sync {
    fn matches(&self, item: &NewsItem, d: &SensorDescriptor) -> bool;
}

/// A keyword equal to the sensor type, or a location hint covering the sensor.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordOrArea;

impl NewsMatcher for KeywordOrArea {
    fn matches(&self, item: &NewsItem, d: &SensorDescriptor) -> bool {
        let t = d.sensor_type.to_ascii_lowercase();
        item.keywords.contains(&t) || item.location_hint.is_some_and(|a| a.contains(d.location()))
    }
}

pub fn classify<'a>(
    d: &SensorDescriptor,
    pois: &[PoiEntry],
    news: impl IntoIterator<Item = &'a NewsItem>,
) -> BTreeSet<GroupKey> {
    classify_with(d, pois, news, &KeywordOrArea)
}

pub fn classify_with<'a>(
    d: &SensorDescriptor,
    pois: &[PoiEntry],
    news: impl IntoIterator<Item = &'a NewsItem>,
    matcher: &dyn NewsMatcher,
) -> BTreeSet<GroupKey> {
    let mut keys = BTreeSet::new();
    keys.insert(GroupKey::by_type(&d.sensor_type));
    keys.insert(GroupKey::ByLocation {
        country: d.address.country.clone(),
        town: None,
    });
    if let Some(town) = &d.address.town {
        keys.insert(GroupKey::ByLocation {
            country: d.address.country.clone(),
            town: Some(town.clone()),
        });
    }
    for (poi, _) in pois_within(d.location(), pois) {
        keys.insert(GroupKey::Pertinence(poi.name.clone()));
    }
    for item in news {
        if matcher.matches(item, d) {
            keys.insert(GroupKey::News(item.slug.clone()));
        }
    }
    keys
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    pub sensor_type: Option<String>,
    pub country: Option<String>,
    pub town: Option<String>,
    pub near: Option<Area>,
    pub poi: Option<String>,
    pub available_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("bad filter: {0}")]
    BadFilter(String),
}

impl QueryFilter {
    pub fn by_type(t: &str) -> Self {
        QueryFilter {
            sensor_type: Some(t.to_string()),
            ..Default::default()
        }
    }

    pub fn validate(&self, pois: &[PoiEntry]) -> Result<(), QueryError> {
        if self.near.is_some() && self.poi.is_some() {
            return Err(QueryError::BadFilter("near and poi are mutually exclusive".into()));
        }
        if let Some(a) = self.near {
            if !a.center.in_range() || !(a.radius_m >= 0.0) || !a.radius_m.is_finite() {
                return Err(QueryError::BadFilter("near needs an in-range point and radius >= 0".into()));
            }
        }
        if let Some(p) = &self.poi {
            if !pois.iter().any(|x| &x.name == p) {
                return Err(QueryError::BadFilter(format!("unknown point of interest {p:?}")));
            }
        }
        Ok(())
    }

    /// Single-descriptor predicate; the query result is every descriptor
    /// for which this holds, sorted by URI.
    pub fn accepts(&self, d: &SensorDescriptor, pois: &[PoiEntry]) -> bool {
        self.sensor_type
            .as_ref()
            .is_none_or(|t| t.eq_ignore_ascii_case(&d.sensor_type))
            && self.country.as_ref().is_none_or(|c| *c == d.address.country)
            && self.town.as_ref().is_none_or(|t| d.address.town.as_ref() == Some(t))
            && self.near.is_none_or(|a| a.contains(d.location()))
            && self.poi.as_ref().is_none_or(|name| {
                pois.iter()
                    .filter(|p| &p.name == name)
                    .any(|p| crate::geo::haversine_m(p.location, d.location()) <= p.radius_m)
            })
            && (!self.available_only || d.availability == Status::Open)
    }
}

/// In-memory index: descriptors keyed by URI text, and group membership.
#[derive(Debug, Clone, Default)]
pub struct Index {
    pub sensors: BTreeMap<String, SensorDescriptor>,
    pub groups: BTreeMap<GroupKey, BTreeSet<String>>,
    pub pois: Arc<Vec<PoiEntry>>,
}

impl Index {
    pub fn new(pois: Arc<Vec<PoiEntry>>) -> Self {
        Index {
            pois,
            ..Default::default()
        }
    }

    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<SensorDescriptor>, QueryError> {
        filter.validate(&self.pois)?;
        if let Some(t) = &filter.sensor_type {
            let key = GroupKey::by_type(t);
            let Some(members) = self.groups.get(&key) else {
                return Ok(Vec::new());
            };
            return Ok(members
                .iter()
                .filter_map(|u| self.sensors.get(u))
                .filter(|d| filter.accepts(d, &self.pois))
                .cloned()
                .collect());
        }
        Ok(self
            .sensors
            .values()
            .filter(|d| filter.accepts(d, &self.pois))
            .cloned()
            .collect())
    }

    pub fn members(&self, key: &GroupKey) -> Option<&BTreeSet<String>> {
        self.groups.get(key)
    }
}

/// Shared read access to the engine's index, usable from other threads.
#[derive(Debug, Clone)]
pub struct SearchHandle {
    pub(crate) index: Arc<RwLock<Index>>,
}

impl SearchHandle {
    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<SensorDescriptor>, QueryError> {
        self.index.read().expect("index lock").query(filter)
    }

    pub fn get(&self, uri: &SipUri) -> Option<SensorDescriptor> {
        self.index.read().expect("index lock").sensors.get(&uri.to_string()).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self, key: &GroupKey) -> Vec<String> {
        let idx = self.index.read().expect("index lock");
        idx.members(key).map(|m| m.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn snapshot(&self) -> Index {
        self.index.read().expect("index lock").clone()
    }
}

/// Renders query results as a group-style document.
pub fn results_document(filter_label: &str, results: &[SensorDescriptor]) -> String {
    let mut s = format!("<group key=\"{}\">", xml::escape(filter_label));
    for d in results {
        s.push_str(&format!(
            "<member uri=\"{}\" type=\"{}\" country=\"{}\" availability=\"{}\"/>",
            xml::escape(&d.uri.to_string()),
            xml::escape(&d.sensor_type),
            xml::escape(&d.address.country),
            d.availability
        ));
    }
    s.push_str("</group>");
    s
}

/// One line per descriptor: `uri type lat,lon country[/town] availability`.
pub fn results_text(results: &[SensorDescriptor]) -> String {
    results
        .iter()
        .map(|d| {
            let place = match &d.address.town {
                Some(t) => format!("{}/{}", d.address.country, t),
                None => d.address.country.clone(),
            };
            format!(
                "{} {} {},{} {} {}\n",
                d.uri, d.sensor_type, d.latitude, d.longitude, place, d.availability
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sensor_a() -> SensorDescriptor {
        let uri: SipUri = "sip:sensorA@hommel.com".parse().unwrap();
        SensorDescriptor {
            doc_path: sensor_doc_path(&uri),
            uri,
            sensor_type: "temperature".into(),
            latitude: 48.0,
            longitude: 2.0,
            address: AddressLabels {
                country: "France".into(),
                town: None,
                street: None,
            },
            availability: Status::Open,
            registered_at: 12,
            reg_expires_at: 3_600_012,
        }
    }

    #[test]
    fn doc_path_escaping() {
        let d = sensor_a();
        assert_eq!(d.doc_path, "/sensors/sensorA%40hommel.com.xml");
        assert_eq!(uri_from_doc_path(&d.doc_path).unwrap(), d.uri);
        let odd: SipUri = "sip:a%20b@h.com:5070".parse().unwrap();
        assert_eq!(uri_from_doc_path(&sensor_doc_path(&odd)).unwrap(), odd);
    }

    #[test]
    fn sensor_document_round_trip() {
        let mut d = sensor_a();
        d.address.town = Some("Saint-Ouen & co".into());
        d.availability = Status::Closed;
        let text = build_sensor_document(&d);
        assert!(text.contains("<availability>closed</availability>"));
        assert_eq!(parse_sensor_document(&text).unwrap(), d);
        assert_eq!(text, build_sensor_document(&d.clone()));
    }

    #[test]
    fn group_keys() {
        let k = GroupKey::ByLocation {
            country: "France".into(),
            town: Some("Le Mans".into()),
        };
        assert_eq!(k.path(), "/groups/by-location/France/Le%20Mans.xml");
        assert_eq!(GroupKey::from_path(&k.path()), Some(k.clone()));
        assert_eq!(k.to_string(), "by-location/France/Le Mans");
        assert_eq!(k.to_string().parse::<GroupKey>().unwrap(), k);
        assert_eq!("by-type/Temperature".parse::<GroupKey>().unwrap(), GroupKey::by_type("temperature"));
        assert!("by-colour/red".parse::<GroupKey>().is_err());
        assert!("by-type/".parse::<GroupKey>().is_err());
    }

    #[test]
    fn group_document_members_sorted() {
        let members: BTreeSet<String> = ["sip:b@x", "sip:a@x"].iter().map(|s| s.to_string()).collect();
        let key = GroupKey::by_type("camera");
        let doc = build_group_document(&key, &members);
        assert_eq!(
            doc,
            "<group key=\"by-type/camera\"><member uri=\"sip:a@x\"/><member uri=\"sip:b@x\"/></group>"
        );
        let (k, m) = parse_group_document(&doc).unwrap();
        assert_eq!((k.as_str(), m.len()), ("by-type/camera", 2));
        assert_eq!(parse_group_document(&empty_group_document(&key)).unwrap().1.len(), 0);
    }

    #[test]
    fn classify_sensor_a() {
        let pois = crate::geo::parse_pois("Monument-X | 48.001,2.001 | 2000 | monument\n").unwrap();
        let keys = classify(&sensor_a(), &pois, &[]);
        let expected: BTreeSet<GroupKey> = [
            GroupKey::by_type("temperature"),
            GroupKey::ByLocation {
                country: "France".into(),
                town: None,
            },
            GroupKey::Pertinence("Monument-X".into()),
        ]
        .into_iter()
        .collect();
        assert_eq!(keys, expected);
        let news = [NewsItem::new("heat", &["temperature"], None, "Heat")];
        assert!(classify(&sensor_a(), &pois, &news).contains(&GroupKey::News("heat".into())));
    }

    #[test]
    fn filter_validation() {
        let f = QueryFilter {
            near: Some(Area {
                center: LatLon::new(0.0, 0.0),
                radius_m: 1.0,
            }),
            poi: Some("x".into()),
            ..Default::default()
        };
        assert!(matches!(f.validate(&[]), Err(QueryError::BadFilter(_))));
        let mut idx = Index::default();
        let d = sensor_a();
        idx.groups.entry(GroupKey::by_type("temperature")).or_default().insert(d.uri_string());
        idx.sensors.insert(d.uri_string(), d);
        assert_eq!(idx.query(&QueryFilter::by_type("temperature")).unwrap().len(), 1);
        let atlantis = QueryFilter {
            country: Some("Atlantis".into()),
            ..QueryFilter::by_type("temperature")
        };
        assert!(idx.query(&atlantis).unwrap().is_empty());
    }
}
