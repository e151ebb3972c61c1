use std::path::Path;

use issee::scenario::{RunError, Scenario};

fn run_fixture(name: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios").join(name);
    let sc = Scenario::load(&path).unwrap();
    if let Err((e, run)) = sc.run() {
        panic!("{name}: {e}\n{}", run.trace_text());
    }
}

#[test]
fn registration_flow() {
    run_fixture("registration.scn");
}

#[test]
fn expiry() {
    run_fixture("expiry.scn");
}

#[test]
fn group_watch() {
    run_fixture("group-watch.scn");
}

#[test]
fn mashup() {
    run_fixture("mashup.scn");
}

#[test]
fn default_handling() {
    run_fixture("default-handling.scn");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let e = Scenario::parse("seed 1\n\nfrobnicate x\n").unwrap_err();
    assert_eq!(e.line, 3);
    let e = Scenario::parse("spawn a temperature 1 2\nseed 4\n").unwrap_err();
    assert_eq!(e.line, 2);
    let e = Scenario::parse("spawn a temperature x 2\n").unwrap_err();
    assert_eq!(e.line, 1);
    let e = Scenario::parse("expect group nonsense a\n").unwrap_err();
    assert_eq!(e.line, 1);
}

#[test]
fn failed_expectation_reports_both_sides() {
    let sc = Scenario::parse("seed 2\nspawn a temperature 48 2\nexpect group by-type/temperature a b\n").unwrap();
    let Err((RunError::ExpectFailed { line, expected, actual, .. }, _)) = sc.run() else {
        panic!("expected a failure");
    };
    assert_eq!(line, 3);
    assert_eq!(expected, "sip:a@hommel.com sip:b@hommel.com");
    assert_eq!(actual, "sip:a@hommel.com");
}

#[test]
fn same_seed_same_trace() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let sc = Scenario::load(&path).unwrap();
        let a = sc.run().ok().unwrap().trace_text();
        let b = sc.run().ok().unwrap().trace_text();
        assert_eq!(a, b, "{}", path.display());
        assert!(!a.is_empty());
        seen += 1;
    }
    assert!(seen >= 5);
}

