//! Opens a data session with a camera, steers it with INFO requests and
//! reads the frames it streams back. A temperature sensor refuses commands.

use issee::world::World;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::standard(3)?;
    for (name, ty) in [("cam", "camera"), ("thermo", "temperature")] {
        let p = w.sensor_profile(name, ty, 48.8584, 2.2945)?;
        w.spawn_sensor(p)?;
    }
    w.idle()?;

    let commands = vec!["pan=30".to_string(), "zoom=4".to_string()];
    let cam = w.call("cam", 4, commands.clone())?;
    let thermo = w.call("thermo", 2, commands)?;
    w.advance(10_000)?;

    for (label, id) in [("cam", cam), ("thermo", thermo)] {
        let c = w.caller(id).expect("caller");
        println!("## {label}: {:?}", c.state());
        let call = c.call.as_ref().expect("dialled");
        for (code, body) in &call.info_replies {
            println!("info {code} {body}");
        }
        for f in c.frames() {
            println!("{f}");
        }
    }
    Ok(())
}
