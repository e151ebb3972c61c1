//! The mashup application polls a news feed, picks sensors pertinent to
//! each item, opens a data session with each and stores the frames as media
//! for an enriched document.

use issee::sensor::ReadingGenerator;
use issee::world::World;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::standard(11)?;
    let mut p = w.sensor_profile("sensorA", "temperature", 48.0, 2.0)?;
    p.generator = ReadingGenerator::Ramp { start: 20.0, slope: 0.5 };
    w.spawn_sensor(p)?;
    let p = w.sensor_profile("falls", "humidity", 43.0896, -79.0849)?;
    w.spawn_sensor(p)?;
    w.idle()?;

    w.start_mashup();
    w.advance(30_000)?;

    let m = w.mashup();
    println!("{:?}", m.stats());
    for doc in m.documents() {
        println!("{}", doc.to_xml());
        for r in &doc.media_refs {
            for f in m.store.frames(&r.store_key) {
                println!("  {} {f}", r.sensor);
            }
        }
    }
    Ok(())
}
