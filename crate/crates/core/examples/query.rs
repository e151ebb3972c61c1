//! Builds a small index and runs searches by type, place, point of interest,
//! radius and availability.

use issee::engine::{parse_near, parse_query_string, results_document, results_text, QueryFilter};
use issee::world::World;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut w = World::standard(1)?;
    let sensors = [
        ("eiffel-t", "temperature", 48.8584, 2.2945),
        ("eiffel-cam", "camera", 48.8585, 2.2950),
        ("bastille", "temperature", 48.8532, 2.3692),
        ("falls-h", "humidity", 43.0896, -79.0849),
        ("falls-cam", "camera", 43.0830, -79.0740),
        ("tokyo-p", "pressure", 35.68, 139.75),
    ];
    for (name, ty, lat, lon) in sensors {
        let p = w.sensor_profile(name, ty, lat, lon)?;
        w.spawn_sensor(p)?;
    }
    w.idle()?;
    w.stop_publishing("bastille")?;
    w.advance(11 * 60 * 1000)?;

    let filters = [
        ("type=temperature", QueryFilter::by_type("temperature")),
        ("type=temperature&available=1", parse_query_string("type=temperature&available=1")?.0),
        ("country=Canada", parse_query_string("country=Canada")?.0),
        ("poi=Eiffel+Tower", parse_query_string("poi=Eiffel+Tower")?.0),
        (
            "near 43.09,-79.08 within 2 km",
            QueryFilter {
                near: Some(parse_near("43.09,-79.08,2000")?),
                ..QueryFilter::default()
            },
        ),
    ];
    for (label, f) in filters {
        let r = w.search.query(&f)?;
        println!("## {label}\n{}", results_text(&r));
    }

    let cams = w.search.query(&QueryFilter::by_type("camera"))?;
    println!("## as XML\n{}", results_document("type=camera", &cams));

    let bad = parse_query_string("near=1,2,3&poi=Eiffel+Tower").map(|(f, _)| w.search.query(&f));
    println!("## contradictory filter\n{bad:?}");
    Ok(())
}
