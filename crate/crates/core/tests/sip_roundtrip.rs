use std::path::Path;

use proptest::prelude::*;

use issee::sip::{extract_sensor_annotation, parse_message, CSeq, Contact, Header, Method, NameAddr, SipMessage, SipUri, StartLine, Via};

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9-]{0,7}"
}

fn host() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z][a-z0-9]{0,7}(\\.[a-z]{2,5}){0,2}",
        (1u8..=254, 0u8..=255, 0u8..=255, 1u8..=254).prop_map(|(a, b, c, d)| format!("{a}.{b}.{c}.{d}")),
    ]
}

fn params() -> impl Strategy<Value = Vec<(String, Option<String>)>> {
    prop::collection::vec((token(), prop::option::of("[A-Za-z0-9.!~*_-]{1,10}")), 0..3).prop_map(|mut v| {
        // duplicate names would collapse on lookup but not on round trip; keep first
        let mut seen = std::collections::HashSet::new();
        v.retain(|(k, _)| seen.insert(k.clone()));
        v
    })
}

fn uri() -> impl Strategy<Value = SipUri> {
    (prop::option::of("[a-zA-Z][a-zA-Z0-9._-]{0,9}"), host(), prop::option::of(1u16..), params()).prop_map(
        |(user, host, port, params)| SipUri {
            user,
            host,
            port,
            params,
        },
    )
}

fn name_addr() -> impl Strategy<Value = NameAddr> {
    (prop::option::of("[A-Za-z]{1,8}( [A-Za-z]{1,8})?"), uri(), params()).prop_map(|(display, uri, params)| {
        NameAddr { display, uri, params }
    })
}

fn method() -> impl Strategy<Value = Method> {
    prop::sample::select(Method::ALL.to_vec())
}

fn via() -> impl Strategy<Value = Via> {
    (host(), prop::option::of(1u16..), "[a-zA-Z0-9]{1,16}", params()).prop_map(|(h, port, b, extra)| {
        let mut v = Via::udp(&h, port, &format!("z9hG4bK{b}"));
        v.params.extend(extra.into_iter().filter(|(k, _)| k != "branch"));
        v
    })
}

fn other_header() -> impl Strategy<Value = Header> {
    let name = prop_oneof![
        Just("Event".to_string()),
        Just("Subscription-State".to_string()),
        Just("Content-Type".to_string()),
        Just("User-Agent".to_string()),
        Just("Document-Version".to_string()),
        "X-[A-Z][a-z]{2,6}",
    ];
    let value = "[A-Za-z0-9;=:./+-]([A-Za-z0-9;=:./+ -]{0,20}[A-Za-z0-9;=:./+-])?";
    (name, value).prop_map(|(n, v)| Header::other(&n, v))
}

fn header() -> impl Strategy<Value = Header> {
    prop_oneof![
        via().prop_map(Header::Via),
        name_addr().prop_map(Header::From),
        name_addr().prop_map(Header::To),
        prop_oneof![Just(Contact::Wildcard), name_addr().prop_map(Contact::Addr)].prop_map(Header::Contact),
        "[a-zA-Z0-9]{4,16}(@[a-z]{1,8})?".prop_map(Header::CallId),
        (1u32..1_000_000, method()).prop_map(|(seq, method)| Header::CSeq(CSeq { seq, method })),
        (0u32..100).prop_map(Header::MaxForwards),
        (0u32..100_000).prop_map(Header::Expires),
        other_header(),
    ]
}

fn message() -> impl Strategy<Value = SipMessage> {
    let start = prop_oneof![
        (method(), uri()).prop_map(|(method, uri)| StartLine::Request { method, uri }),
        (100u16..700, "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,2}").prop_map(|(code, reason)| StartLine::Response { code, reason }),
    ];
    let mandatory = (
        via(),
        name_addr(),
        name_addr(),
        "[a-zA-Z0-9]{4,16}(@[a-z]{1,8})?",
        (1u32..1_000_000, method()),
    )
        .prop_map(|(v, f, t, c, (seq, method))| {
            vec![
                Header::Via(v),
                Header::From(f),
                Header::To(t),
                Header::CallId(c),
                Header::CSeq(CSeq { seq, method }),
            ]
        });
    (
        start,
        mandatory,
        prop::collection::vec(header(), 0..8),
        any::<prop::sample::Index>(),
        prop::collection::vec(any::<u8>(), 0..64),
    )
        .prop_map(|(start, mut headers, extra, at, body)| {
            let i = at.index(extra.len() + 1);
            let mut all = extra;
            let tail = all.split_off(i);
            all.append(&mut headers);
            all.extend(tail);
            SipMessage { start, headers: all, body }
        })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 600,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn parse_inverts_serialize(m in message()) {
        let wire = m.to_bytes();
        let back = parse_message(&wire).map_err(|e| TestCaseError::fail(format!("{e}\n{}", String::from_utf8_lossy(&wire))))?;
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_bytes(), wire);
    }

    #[test]
    fn bare_lf_parses_like_crlf(m in message()) {
        let body = m.body.clone();
        let wire = m.to_bytes();
        let head = &wire[..wire.len() - body.len()];
        let mut lf = String::from_utf8(head.to_vec()).unwrap().replace("\r\n", "\n").into_bytes();
        lf.extend_from_slice(&body);
        prop_assert_eq!(parse_message(&lf).unwrap(), m);
    }

    #[test]
    fn annotation_ignores_unrelated_header_order(m in message(), lat in -90i32..=90, lon in -180i32..=180, rot in 0usize..10) {
        let mut m = m;
        m.headers.retain(|h| !matches!(h.name(), "Sensor-type" | "Latitude" | "Longitude" | "Contact"));
        m.headers.push(Header::other("Sensor-type", format!("temperature; Latitude: {lat}; Longitude: {lon}")));
        let a = extract_sensor_annotation(&m).unwrap().unwrap();
        let n = m.headers.len();
        m.headers.rotate_left(rot % n);
        let b = extract_sensor_annotation(&m).unwrap().unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.latitude, lat as f64);
        prop_assert_eq!(a.longitude, lon as f64);
    }
}

fn corpus() -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/sip");
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "sip"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn every_corpus_file_parses_and_round_trips() {
    let files = corpus();
    assert!(files.len() >= 7);
    for (name, raw) in files {
        let m = parse_message(&raw).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = parse_message(&m.to_bytes()).unwrap();
        assert_eq!(again, m, "{name}");
    }
}

#[test]
fn third_party_register_corpus_carries_annotations() {
    let cases = [
        ("third_party_register.sip", "temperature", 48.0, 2.0),
        ("third_party_register_split_headers_lf.sip", "humidity", 43.0896, -79.0849),
        ("sensor_register_contact_params.sip", "temperature", 48.0, 2.0),
    ];
    let files = corpus();
    for (file, ty, lat, lon) in cases {
        let raw = &files.iter().find(|(n, _)| n == file).unwrap().1;
        let a = extract_sensor_annotation(&parse_message(raw).unwrap()).unwrap().unwrap();
        assert_eq!((a.sensor_type.as_str(), a.latitude, a.longitude), (ty, lat, lon), "{file}");
    }
}

#[test]
fn folded_header_is_joined() {
    let files = corpus();
    let raw = &files.iter().find(|(n, _)| n == "notify_group_folded.sip").unwrap().1;
    let m = parse_message(raw).unwrap();
    assert_eq!(m.header("Subscription-State").as_deref(), Some("active; expires=3599"));
}
