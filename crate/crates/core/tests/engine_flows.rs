use issee::engine::{GroupKey, QueryFilter};
use issee::presence::Status;
use issee::world::World;

fn registered_world() -> World {
    let mut w = World::standard(7).unwrap();
    let mut p = w.sensor_profile("sensorA", "temperature", 48.0, 2.0).unwrap();
    p.initial_cseq = 70;
    w.spawn_sensor(p).unwrap();
    w.idle().unwrap();
    w
}

#[test]
fn registration_is_indexed() {
    let w = registered_world();
    let doc = w.xdms.get_document("/sensors/sensorA%40hommel.com.xml").unwrap();
    assert!(doc.0.contains("<type>temperature</type>"), "{}", doc.0);
    assert!(doc.0.contains("<country>France</country>"));
    let members = w.search.members(&GroupKey::by_type("temperature"));
    assert_eq!(members, vec!["sip:sensorA@hommel.com".to_string()]);
    let france = GroupKey::ByLocation {
        country: "France".into(),
        town: None,
    };
    assert_eq!(w.search.members(&france).len(), 1);
    assert_eq!(w.search.query(&QueryFilter::by_type("temperature")).unwrap().len(), 1);
    w.engine().audit().unwrap();
    assert!(w.scscf().is_registered(&"sip:sensorA@hommel.com".parse().unwrap()));
    assert_eq!(w.sim.drops(), 0, "{}", w.sim.trace_text());
}

#[test]
fn expiry_removes_sensor_and_presence_lapse_closes_it() {
    let mut w = World::standard(3).unwrap();
    let a = w.sensor_profile("gone", "temperature", 48.0, 2.0).unwrap();
    let b = w.sensor_profile("quiet", "temperature", 48.1, 2.1).unwrap();
    w.spawn_sensor(a).unwrap();
    w.spawn_sensor(b).unwrap();
    w.idle().unwrap();
    w.stop_refresh("gone").unwrap();
    w.stop_publishing("quiet").unwrap();
    w.advance(3_700_000).unwrap();
    assert!(w.engine().descriptor(&World::sensor_uri("gone").unwrap()).is_none());
    let quiet = w.engine().descriptor(&World::sensor_uri("quiet").unwrap()).unwrap();
    assert_eq!(quiet.availability, Status::Closed);
    assert_eq!(
        w.search.members(&GroupKey::by_type("temperature")),
        vec!["sip:quiet@hommel.com".to_string()]
    );
    w.engine().audit().unwrap();
}

#[test]
fn group_subscriber_sees_every_version() {
    let mut w = World::standard(5).unwrap();
    w.subscribe_app("app1", GroupKey::by_type("temperature")).unwrap();
    w.idle().unwrap();
    for i in 0..5 {
        let p = w.sensor_profile(&format!("s{i}"), "temperature", 48.0, 2.0).unwrap();
        w.spawn_sensor(p).unwrap();
        w.idle().unwrap();
    }
    w.kill_sensor("s2").unwrap();
    w.idle().unwrap();
    let app = w.app("app1").unwrap();
    assert!(app.gap_free());
    let versions: Vec<u64> = app.notifications.iter().map(|n| n.version).collect();
    assert_eq!(versions, vec![0, 1, 2, 3, 4, 5, 6]);
    assert_eq!(app.latest().unwrap().members.len(), 4);
}

#[test]
fn mashup_collects_frames() {
    let mut w = registered_world();
    w.start_mashup();
    w.idle().unwrap();
    w.advance(20_000).unwrap();
    let m = w.mashup();
    assert!(!m.documents().is_empty(), "{}", w.sim.trace_text());
    let heat = m.documents().iter().find(|d| d.news_slug == "heatwave").unwrap();
    assert_eq!(heat.media_refs.len(), 1);
    assert_eq!(m.store.frames(&heat.media_refs[0].store_key).len(), 5);
}
