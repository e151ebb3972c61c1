mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{NewsCase, Placed};
use issee::engine::{classify, parse_near, sensor_doc_path, QueryError, QueryFilter, SensorDescriptor};
use issee::feed::{Area, NewsItem};
use issee::geo::{Gazetteer, LatLon};
use issee::presence::Status;
use issee::world::{World, WorldConfig};

const TYPES: [&str; 5] = ["temperature", "humidity", "camera", "pressure", "Noise"];
const REGIONS: [(f64, f64); 3] = [(48.86, 2.30), (43.09, -79.08), (35.68, 139.75)];

fn random_placed(rng: &mut impl Rng, i: usize) -> Placed {
    let (lat, lon) = REGIONS[rng.gen_range(0..REGIONS.len())];
    Placed {
        uri: format!("sip:s{i:04}@hommel.com"),
        sensor_type: TYPES[rng.gen_range(0..TYPES.len())].to_string(),
        lat: lat + rng.gen_range(-0.08..0.08),
        lon: lon + rng.gen_range(-0.08..0.08),
    }
}

fn news_cases() -> Vec<NewsCase> {
    vec![
        NewsCase {
            slug: "heat".into(),
            keywords: vec!["temperature".into(), "weather".into()],
            hint: None,
        },
        NewsCase {
            slug: "falls".into(),
            keywords: vec!["noise".into()],
            hint: Some((43.0896, -79.0849, 4000.0)),
        },
    ]
}

fn news_items(cases: &[NewsCase]) -> Vec<NewsItem> {
    cases
        .iter()
        .map(|c| {
            let kw: Vec<&str> = c.keywords.iter().map(String::as_str).collect();
            let hint = c.hint.map(|(lat, lon, r)| Area {
                center: LatLon::new(lat, lon),
                radius_m: r,
            });
            NewsItem::new(&c.slug, &kw, hint, "headline")
        })
        .collect()
}

#[test]
fn classify_matches_reference_rules() {
    let cfg = WorldConfig::standard(0).unwrap();
    let gaz = cfg.gazetteer.clone();
    let news = news_cases();
    let items = news_items(&news);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut pertinent = 0;
    for i in 0..1000 {
        let p = random_placed(&mut rng, i);
        let uri = p.uri.parse().unwrap();
        let d = SensorDescriptor {
            doc_path: sensor_doc_path(&uri),
            uri,
            sensor_type: p.sensor_type.clone(),
            latitude: p.lat,
            longitude: p.lon,
            address: gaz.reverse_geocode(LatLon::new(p.lat, p.lon)),
            availability: Status::Open,
            registered_at: 0,
            reg_expires_at: 1,
        };
        let mut got: Vec<String> = classify(&d, &cfg.pois, &items).iter().map(|k| k.to_string()).collect();
        let mut want = common::group_keys(&p, &gaz.entries, &cfg.pois, &news);
        got.sort();
        want.sort();
        assert_eq!(got, want, "{p:?}");
        pertinent += usize::from(want.iter().any(|k| k.starts_with("pertinence/")));
    }
    assert!(pertinent > 20, "sample rarely reaches a POI: {pertinent}");
}

fn random_filter(rng: &mut impl Rng, pois: &[String]) -> (String, QueryFilter) {
    let mut parts = Vec::new();
    if rng.gen_bool(0.5) {
        parts.push(format!("type={}", TYPES[rng.gen_range(0..TYPES.len())].to_ascii_lowercase()));
    }
    match rng.gen_range(0..4) {
        0 => parts.push(format!("country={}", ["France", "Canada", "Japan"][rng.gen_range(0..3)])),
        1 => parts.push(format!("town={}", ["Paris", "Niagara+Falls", "Tokyo"][rng.gen_range(0..3)])),
        _ => {}
    }
    match rng.gen_range(0..4) {
        0 => {
            let (lat, lon) = REGIONS[rng.gen_range(0..3)];
            parts.push(format!("near={lat},{lon},{}", rng.gen_range(500..8000)));
        }
        1 => parts.push(format!("poi={}", pois.choose(rng).unwrap().replace(' ', "+"))),
        _ => {}
    }
    if rng.gen_bool(0.3) {
        parts.push("available=1".into());
    }
    let qs = parts.join("&");
    let (f, _) = issee::engine::parse_query_string(&qs).unwrap();
    (qs, f)
}

fn brute_force(
    all: &[(Placed, bool)],
    f: &QueryFilter,
    gaz: &Gazetteer,
    pois: &[issee::geo::PoiEntry],
) -> Vec<String> {
    let mut out: Vec<String> = all
        .iter()
        .filter(|(p, open)| {
            let (country, town) = common::locate(&gaz.entries, p.lat, p.lon);
            f.sensor_type.as_ref().is_none_or(|t| t.eq_ignore_ascii_case(&p.sensor_type))
                && f.country.as_ref().is_none_or(|c| *c == country)
                && f.town.as_ref().is_none_or(|t| Some(t) == town.as_ref())
                && f.near.is_none_or(|a| common::distance_m(a.center.lat, a.center.lon, p.lat, p.lon) <= a.radius_m)
                && f.poi.as_ref().is_none_or(|name| {
                    pois.iter().any(|x| {
                        &x.name == name && common::distance_m(x.location.lat, x.location.lon, p.lat, p.lon) <= x.radius_m
                    })
                })
                && (!f.available_only || *open)
        })
        .map(|(p, _)| p.uri.clone())
        .collect();
    out.sort();
    out
}

#[test]
fn queries_match_linear_scan_over_a_live_population() {
    let cfg = WorldConfig::standard(31).unwrap();
    let gaz = cfg.gazetteer.clone();
    let pois = cfg.pois.clone();
    let mut w = World::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut all = Vec::new();
    for i in 0..500 {
        let p = random_placed(&mut rng, i);
        let name = format!("s{i:04}");
        let prof = w.sensor_profile(&name, &p.sensor_type, p.lat, p.lon).unwrap();
        w.spawn_sensor(prof).unwrap();
        let open = i % 10 != 0;
        all.push((p, open));
    }
    w.idle().unwrap();
    for i in (0..500).step_by(10) {
        w.stop_publishing(&format!("s{i:04}")).unwrap();
    }
    w.advance(11 * 60 * 1000).unwrap();
    assert_eq!(w.engine().sensor_count(), 500);

    let poi_names: Vec<String> = pois.iter().map(|p| p.name.clone()).collect();
    let mut nonempty = 0;
    for _ in 0..100 {
        let (qs, f) = random_filter(&mut rng, &poi_names);
        let got: Vec<String> = w.search.query(&f).unwrap().iter().map(|d| d.uri_string()).collect();
        let want = brute_force(&all, &f, &gaz, &pois);
        assert_eq!(got, want, "query {qs}");
        nonempty += usize::from(!got.is_empty());
    }
    assert!(nonempty > 30, "too few non-empty results: {nonempty}");
}

#[test]
fn contradictory_or_unknown_filters_are_rejected() {
    let w = World::standard(1).unwrap();
    let f = QueryFilter {
        near: Some(parse_near("48,2,100").unwrap()),
        poi: Some("Eiffel Tower".into()),
        ..QueryFilter::default()
    };
    assert!(matches!(w.search.query(&f), Err(QueryError::BadFilter(_))));
    let f = QueryFilter {
        poi: Some("Atlantis".into()),
        ..QueryFilter::default()
    };
    assert!(matches!(w.search.query(&f), Err(QueryError::BadFilter(_))));
    assert!(parse_near("48,2").is_err());
}
