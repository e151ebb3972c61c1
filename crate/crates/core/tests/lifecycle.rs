use issee::engine::GroupKey;
use issee::presence::Status;
use issee::sensor::RegState;
use issee::sip::SipUri;
use issee::world::{World, WorldConfig};

fn uri(name: &str) -> SipUri {
    World::sensor_uri(name).unwrap()
}

#[test]
fn registration_survives_when_the_engine_is_down() {
    let mut cfg = WorldConfig::standard(9).unwrap();
    cfg.engine_bound = false;
    let mut w = World::new(cfg).unwrap();
    let p = w.sensor_profile("a", "temperature", 48.0, 2.0).unwrap();
    w.spawn_sensor(p).unwrap();
    w.advance(40_000).unwrap();
    assert!(w.scscf().is_registered(&uri("a")));
    assert_eq!(*w.sensor("a").unwrap().reg_state(), RegState::Registered);
    assert_eq!(w.sim.drops(), 1, "{}", w.sim.trace_text());
    assert_eq!(w.sim.trace().iter().filter(|l| l.split(' ').nth(1) == Some("drop")).count(), 1);
    assert_eq!(w.scscf().stats().third_party_failed, 1);
}

#[test]
fn one_handshake_needs_few_steps() {
    let mut w = World::standard(1).unwrap();
    assert_eq!(w.idle().unwrap(), 0);
    let p = w.sensor_profile("a", "temperature", 48.0, 2.0).unwrap();
    w.spawn_sensor(p).unwrap();
    let steps = w.idle().unwrap();
    assert!(steps > 4 && steps < 100, "{steps}");
}

#[test]
fn binding_expires_exactly_at_its_lifetime() {
    let mut w = World::standard(2).unwrap();
    let p = w.sensor_profile("a", "temperature", 48.0, 2.0).unwrap();
    w.spawn_sensor(p).unwrap();
    w.idle().unwrap();
    w.stop_refresh("a").unwrap();
    let b = w.scscf().bindings_for(&uri("a"))[0].clone();
    assert_eq!(b.expires_at - b.registered_at, 3_600_000);
    let now = w.sim.now();
    w.advance(b.expires_at - now - 1).unwrap();
    assert!(w.scscf().is_registered(&uri("a")));
    assert_eq!(w.scscf().stats().expirations, 0);
    w.advance(2).unwrap();
    assert!(!w.scscf().is_registered(&uri("a")));
    assert_eq!(w.scscf().stats().expirations, 1);
    w.advance(7_200_000).unwrap();
    assert_eq!(w.scscf().stats().expirations, 1);
    assert!(w.engine().descriptor(&uri("a")).is_none());
    w.engine().audit().unwrap();
}

#[test]
fn refreshing_sensor_stays_indexed_for_a_day() {
    let mut w = World::standard(3).unwrap();
    let p = w.sensor_profile("steady", "humidity", 43.09, -79.08).unwrap();
    w.spawn_sensor(p).unwrap();
    w.idle().unwrap();
    for _ in 0..24 {
        w.advance(3_600_000).unwrap();
        let d = w.engine().descriptor(&uri("steady")).expect("still indexed");
        assert_eq!(d.availability, Status::Open);
    }
    assert_eq!(w.search.members(&GroupKey::by_type("humidity")).len(), 1);
    assert!(w.sensor("steady").unwrap().stats().registers_sent >= 48);
    w.engine().audit().unwrap();
}

#[test]
fn binding_count_tracks_registered_minus_expired() {
    let mut w = World::standard(4).unwrap();
    for i in 0..20 {
        let mut p = w.sensor_profile(&format!("s{i}"), "temperature", 48.0, 2.0).unwrap();
        p.reg_expires_s = 600;
        p.reg_interval_s = 300;
        w.spawn_sensor(p).unwrap();
    }
    w.idle().unwrap();
    assert_eq!(w.scscf().binding_count(), 20);
    for i in 0..5 {
        w.kill_sensor(&format!("s{i}")).unwrap();
    }
    w.idle().unwrap();
    assert_eq!(w.scscf().binding_count(), 15);
    for i in 5..10 {
        w.stop_refresh(&format!("s{i}")).unwrap();
    }
    for minute in 1..=15 {
        w.advance(60_000).unwrap();
        let expected = if minute >= 10 { 10 } else { 15 };
        assert_eq!(w.scscf().binding_count(), expected, "minute {minute}");
        assert_eq!(w.engine().sensor_count(), expected, "minute {minute}");
    }
    let st = w.scscf().stats();
    assert_eq!((st.deregistrations, st.expirations), (5, 5));
    w.engine().audit().unwrap();
}

#[test]
fn deregistered_sensor_leaves_every_group() {
    let mut w = World::standard(5).unwrap();
    let p = w.sensor_profile("cam", "camera", 48.8584, 2.2945).unwrap();
    w.spawn_sensor(p).unwrap();
    w.idle().unwrap();
    assert!(w.xdms.list_collection("/groups/").len() >= 4);
    w.kill_sensor("cam").unwrap();
    w.idle().unwrap();
    assert!(w.xdms.list_collection("/groups/").is_empty(), "{:?}", w.xdms.list_collection("/groups/"));
    assert!(w.xdms.list_collection("/sensors/").is_empty());
}
