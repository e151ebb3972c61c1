use issee::call::CallState;
use issee::netsim::NodeId;
use issee::world::World;

fn world_with(name: &str, ty: &str) -> World {
    let mut w = World::standard(17).unwrap();
    let p = w.sensor_profile(name, ty, 48.8584, 2.2945).unwrap();
    w.spawn_sensor(p).unwrap();
    w.idle().unwrap();
    w
}

fn state(w: &World, id: NodeId) -> CallState {
    w.caller(id).unwrap().call.as_ref().unwrap().state.clone()
}

#[test]
fn five_frames_then_bye() {
    let mut w = world_with("t1", "temperature");
    let id = w.call("t1", 5, vec![]).unwrap();
    w.advance(10_000).unwrap();
    let c = w.caller(id).unwrap();
    let seqs: Vec<u64> = c.frames().iter().map(|f| f.seq).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
    assert!(c.frames().windows(2).all(|p| p[0].timestamp < p[1].timestamp));
    assert_eq!(state(&w, id), CallState::Ended);
    let s = w.sensor("t1").unwrap();
    assert_eq!(s.active_sessions(), 0);
    assert_eq!(s.stats().sessions_accepted, 1);
    // the session stops streaming after BYE
    let sent = s.stats().frames_sent;
    w.advance(10_000).unwrap();
    assert_eq!(w.sensor("t1").unwrap().stats().frames_sent, sent);
}

#[test]
fn concurrent_sessions_each_get_their_own_gap_free_stream() {
    let mut w = world_with("t2", "temperature");
    let a = w.call("t2", 4, vec![]).unwrap();
    let b = w.call("t2", 6, vec![]).unwrap();
    w.advance(15_000).unwrap();
    for (id, n) in [(a, 4), (b, 6)] {
        let seqs: Vec<u64> = w.caller(id).unwrap().frames().iter().map(|f| f.seq).collect();
        assert_eq!(seqs, (1..=n).collect::<Vec<u64>>());
        assert_eq!(state(&w, id), CallState::Ended);
    }
}

#[test]
fn fifth_session_is_refused_busy() {
    let mut w = world_with("t3", "temperature");
    let ids: Vec<NodeId> = (0..5).map(|_| w.call("t3", 1_000, vec![]).unwrap()).collect();
    w.advance(3_000).unwrap();
    let states: Vec<CallState> = ids.iter().map(|id| state(&w, *id)).collect();
    assert_eq!(states.iter().filter(|s| **s == CallState::Established).count(), 4);
    assert_eq!(states[4], CallState::Failed(486));
    assert_eq!(w.sensor("t3").unwrap().stats().sessions_refused, 1);
}

#[test]
fn camera_accepts_actuator_commands() {
    let mut w = world_with("cam", "camera");
    let id = w.call("cam", 3, vec!["zoom=2".into(), "pan=15".into()]).unwrap();
    w.advance(10_000).unwrap();
    let call = w.caller(id).unwrap().call.as_ref().unwrap();
    assert_eq!(call.info_replies[0], (200, "pan=0;tilt=0;zoom=2".to_string()));
    assert_eq!(call.info_replies[1], (200, "pan=15;tilt=0;zoom=2".to_string()));
    let a = w.sensor("cam").unwrap().actuator();
    assert_eq!((a.pan, a.zoom), (15.0, 2.0));
    let last = w.caller(id).unwrap().frames().last().unwrap().clone();
    assert!(last.unit.ends_with("zoom=2"), "{}", last.unit);

    let bad = w.call("cam", 1, vec!["warp=9".into()]).unwrap();
    w.advance(5_000).unwrap();
    assert_eq!(w.caller(bad).unwrap().call.as_ref().unwrap().info_replies[0].0, 400);
}

#[test]
fn plain_sensor_refuses_actuator_commands() {
    let mut w = world_with("t4", "temperature");
    let id = w.call("t4", 2, vec!["zoom=2".into()]).unwrap();
    w.advance(5_000).unwrap();
    let call = w.caller(id).unwrap().call.as_ref().unwrap();
    assert_eq!(call.info_replies[0].0, 501);
    assert_eq!(call.frames.len(), 2);
}

#[test]
fn unknown_sensor_is_not_reachable() {
    let mut w = world_with("t5", "temperature");
    let id = w.call("nobody", 1, vec![]).unwrap();
    w.advance(5_000).unwrap();
    assert!(matches!(state(&w, id), CallState::Failed(404 | 480)), "{:?}", state(&w, id));
}
