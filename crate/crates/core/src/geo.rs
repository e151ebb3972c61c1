//! Offline reverse geocoding over a bounding-box gazetteer, great-circle
//! distance, and point-of-interest proximity.
//!
//! Gazetteer file, one entry per line (`#` starts a comment):
//!
//! ```text
//! lat_min,lat_max,lon_min,lon_max | priority | country | town | street
//! ```
//!
//! `town` and `street` may be empty or omitted. Smaller priority means more
//! specific. POI file:
//!
//! ```text
//! name | lat,lon | radius_m | tag,tag
//! ```

use std::fmt;
use std::path::Path;

use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const UNKNOWN_COUNTRY: &str = "unknown";

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn in_range(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

impl fmt::Display for LatLon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddressLabels {
    pub country: String,
    pub town: Option<String>,
    pub street: Option<String>,
}

impl AddressLabels {
    pub fn unknown() -> Self {
        AddressLabels {
            country: UNKNOWN_COUNTRY.to_string(),
            town: None,
            street: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GazetteerEntry {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub priority: i64,
    pub labels: AddressLabels,
}

impl GazetteerEntry {
    pub fn contains(&self, p: LatLon) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiEntry {
    pub name: String,
    pub location: LatLon,
    pub radius_m: f64,
    pub tags: Vec<String>,
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64, GeoError> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| GeoError::Parse {
        line,
        reason: format!("bad {what} {:?}", s.trim()),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

fn read(path: &Path) -> Result<String, GeoError> {
    std::fs::read_to_string(path).map_err(|e| GeoError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    pub entries: Vec<GazetteerEntry>,
}

impl Gazetteer {
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let mut entries = Vec::new();
        for (line, l) in data_lines(text) {
            let cols: Vec<&str> = l.split('|').collect();
            if cols.len() < 3 {
                return Err(GeoError::Parse {
                    line,
                    reason: "expected bbox | priority | country".into(),
                });
            }
            let bbox: Vec<&str> = cols[0].split(',').collect();
            if bbox.len() != 4 {
                return Err(GeoError::Parse {
                    line,
                    reason: "bbox needs four numbers".into(),
                });
            }
            let lat_min = parse_f64(bbox[0], line, "lat_min")?;
            let lat_max = parse_f64(bbox[1], line, "lat_max")?;
            let lon_min = parse_f64(bbox[2], line, "lon_min")?;
            let lon_max = parse_f64(bbox[3], line, "lon_max")?;
            if lat_min >= lat_max || lon_min >= lon_max {
                return Err(GeoError::Parse {
                    line,
                    reason: "empty bbox".into(),
                });
            }
            let priority = cols[1].trim().parse().map_err(|_| GeoError::Parse {
                line,
                reason: format!("bad priority {:?}", cols[1].trim()),
            })?;
            let country = non_empty(Some(cols[2])).ok_or_else(|| GeoError::Parse {
                line,
                reason: "missing country".into(),
            })?;
            entries.push(GazetteerEntry {
                lat_min,
                lat_max,
                lon_min,
                lon_max,
                priority,
                labels: AddressLabels {
                    country,
                    town: non_empty(cols.get(3).copied()),
                    street: non_empty(cols.get(4).copied()),
                },
            });
        }
        Ok(Gazetteer { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        Self::parse(&read(path.as_ref())?)
    }

    /// Labels of the most specific entry containing `p`; the earliest entry
    /// wins among equal priorities.
    pub fn reverse_geocode(&self, p: LatLon) -> AddressLabels {
        let mut best: Option<&GazetteerEntry> = None;
        for e in self.entries.iter().filter(|e| e.contains(p)) {
            if best.is_none_or(|b| e.priority < b.priority) {
                best = Some(e);
            }
        }
        best.map(|e| e.labels.clone()).unwrap_or_else(AddressLabels::unknown)
    }
}

pub fn parse_pois(text: &str) -> Result<Vec<PoiEntry>, GeoError> {
    let mut out = Vec::new();
    for (line, l) in data_lines(text) {
        let cols: Vec<&str> = l.split('|').map(str::trim).collect();
        if cols.len() < 3 {
            return Err(GeoError::Parse {
                line,
                reason: "expected name | lat,lon | radius_m".into(),
            });
        }
        let (lat, lon) = cols[1].split_once(',').ok_or_else(|| GeoError::Parse {
            line,
            reason: "location must be lat,lon".into(),
        })?;
        let location = LatLon::new(parse_f64(lat, line, "latitude")?, parse_f64(lon, line, "longitude")?);
        let radius_m = parse_f64(cols[2], line, "radius")?;
        if radius_m <= 0.0 || cols[0].is_empty() || !location.in_range() {
            return Err(GeoError::Parse {
                line,
                reason: "POI needs a name, in-range location and positive radius".into(),
            });
        }
        let tags = cols
            .get(3)
            .map(|t| t.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect())
            .unwrap_or_default();
        out.push(PoiEntry {
            name: cols[0].to_string(),
            location,
            radius_m,
            tags,
        });
    }
    Ok(out)
}

pub fn load_pois(path: impl AsRef<Path>) -> Result<Vec<PoiEntry>, GeoError> {
    parse_pois(&read(path.as_ref())?)
}

pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// POIs whose radius covers `p`, nearest first (file order among ties).
pub fn pois_within(p: LatLon, pois: &[PoiEntry]) -> Vec<(&PoiEntry, f64)> {
    let mut hits: Vec<(&PoiEntry, f64)> = pois
        .iter()
        .map(|poi| (poi, haversine_m(p, poi.location)))
        .filter(|(poi, d)| *d <= poi.radius_m)
        .collect();
    hits.sort_by(|a, b| a.1.total_cmp(&b.1));
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAZ: &str = "\
# bbox | priority | country | town | street
47,49,1,3 | 10 | France
48.8,48.9,2.2,2.4 | 5 | France | Paris |
48.85,48.86,2.29,2.30 | 1 | France | Paris | Champ de Mars
";

    #[test]
    fn most_specific_entry_wins() {
        let g = Gazetteer::parse(GAZ).unwrap();
        assert_eq!(g.reverse_geocode(LatLon::new(48.0, 2.0)).country, "France");
        let paris = g.reverse_geocode(LatLon::new(48.85, 2.35));
        assert_eq!(paris.town.as_deref(), Some("Paris"));
        assert_eq!(paris.street, None);
        let street = g.reverse_geocode(LatLon::new(48.855, 2.295));
        assert_eq!(street.street.as_deref(), Some("Champ de Mars"));
        assert_eq!(g.reverse_geocode(LatLon::new(-30.0, 2.0)), AddressLabels::unknown());
    }

    #[test]
    fn ties_go_to_file_order() {
        let g = Gazetteer::parse("0,10,0,10 | 1 | A\n0,10,0,10 | 1 | B\n").unwrap();
        assert_eq!(g.reverse_geocode(LatLon::new(5.0, 5.0)).country, "A");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = Gazetteer::parse("# c\n\n3,1,0,1 | 1 | X\n").unwrap_err();
        assert!(matches!(e, GeoError::Parse { line: 3, .. }));
        assert!(parse_pois("a | 1,2 | 0\n").is_err());
        assert!(parse_pois("a | 1;2 | 10\n").is_err());
    }

    #[test]
    fn distance_basics() {
        let a = LatLon::new(48.0, 2.0);
        assert_eq!(haversine_m(a, a), 0.0);
        let eq = haversine_m(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
        assert!((eq - 111_195.0).abs() < 111_195.0 * 0.005, "{eq}");
    }

    #[test]
    fn poi_radius_boundary() {
        let pois = parse_pois("Monument-X | 48.001,2.001 | 2000 | monument\nZoo | 48.5,2.5 | 100 |\n").unwrap();
        assert_eq!(pois[0].tags, vec!["monument"]);
        assert!(pois[1].tags.is_empty());
        let hits = pois_within(LatLon::new(48.0, 2.0), &pois);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.name, "Monument-X");
        let at = pois_within(pois[1].location, &pois);
        assert_eq!(at[0].1, 0.0);
    }
}
