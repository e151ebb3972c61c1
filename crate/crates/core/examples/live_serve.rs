//! Runs the same nodes over real UDP sockets on loopback: sensors register
//! through the S-CSCF and the engine indexes them in wall-clock time.

use std::time::Duration;

use issee::engine::QueryFilter;
use issee::live::{LiveConfig, LiveDeployment};
use issee::world::WorldConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = WorldConfig::standard(0)?;
    let mut d = LiveDeployment::start(LiveConfig::default(), &cfg)?;
    for (logical, sock) in d.rt.bindings() {
        println!("{logical} -> udp {sock}");
    }

    d.spawn_sensor("sensorA", "temperature", 48.0, 2.0)?;
    d.spawn_sensor("falls", "humidity", 43.0896, -79.0849)?;
    d.spawn_sensor("cam", "camera", 48.8584, 2.2945)?;

    let indexed = d.rt.run_until(Duration::from_secs(5), |rt| {
        rt.node::<issee::engine::IsseeEngine>(d.engine).is_some_and(|e| e.sensor_count() == 3)
    });
    println!("all indexed: {indexed} after {} ms", d.rt.now());

    for t in ["temperature", "humidity", "camera"] {
        for s in d.search.query(&QueryFilter::by_type(t))? {
            println!("{} {} {:?}", s.uri, s.sensor_type, s.availability);
        }
    }
    println!("{:?}", d.rt.stats());
    Ok(())
}
