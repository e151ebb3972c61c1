//! An application subscribes to a group document and receives a NOTIFY
//! each time the group changes, including when it empties.

use issee::engine::GroupKey;
use issee::world::World;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::standard(5)?;
    let key: GroupKey = "by-location/France/Paris".parse()?;
    w.subscribe_app("dashboard", key)?;
    w.idle()?;

    let spots = [("louvre", 48.8606, 2.3376), ("bercy", 48.8396, 2.3828), ("lyon", 45.76, 4.84)];
    for (name, lat, lon) in spots {
        let p = w.sensor_profile(name, "pressure", lat, lon)?;
        w.spawn_sensor(p)?;
        w.idle()?;
    }
    w.kill_sensor("louvre")?;
    w.idle()?;
    w.kill_sensor("bercy")?;
    w.idle()?;

    let app = w.app("dashboard")?;
    for n in &app.notifications {
        println!("t={:>5} cseq={} v{} {:?}", n.at, n.cseq, n.version, n.members);
    }
    println!("gap free: {}", app.gap_free());
    Ok(())
}
