//! A temperature sensor registers; the S-CSCF forwards a third-party
//! REGISTER carrying its type and position to the search engine, which
//! stores a sensor document and files it into groups.

use issee::sip::{parse_message, Method};
use issee::world::{World, WorldConfig, ISSEE_ADDR};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = WorldConfig::standard(7)?;
    cfg.net.capture = true;
    let mut w = World::new(cfg)?;

    let mut p = w.sensor_profile("sensorA", "temperature", 48.0, 2.0)?;
    p.initial_cseq = 70;
    w.spawn_sensor(p)?;
    w.idle()?;

    let engine = ISSEE_ADDR.to_string();
    for c in w.sim.captured() {
        if c.to.to_string() != engine {
            continue;
        }
        if let Ok(m) = parse_message(&c.payload) {
            if m.method() == Some(Method::Register) {
                println!("--- third-party REGISTER at t={} ms", c.at);
                print!("{}", String::from_utf8_lossy(&c.payload));
            }
        }
    }

    println!("--- XDMS");
    for (path, version) in w.xdms.list_collection("/") {
        println!("{path} (v{version})");
    }
    let (doc, _) = w.xdms.get_document("/sensors/sensorA%40hommel.com.xml")?;
    println!("--- sensor document\n{doc}");
    Ok(())
}
