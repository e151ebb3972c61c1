//! Reverse geocoding against the gazetteer, points of interest near a
//! position, and great-circle distances.

use issee::geo::{haversine_m, parse_pois, pois_within, Gazetteer, LatLon};
use issee::world::{BUNDLED_GAZETTEER, BUNDLED_POIS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gaz = Gazetteer::parse(BUNDLED_GAZETTEER)?;
    let pois = parse_pois(BUNDLED_POIS)?;

    let places = [
        ("Champ de Mars", LatLon::new(48.8556, 2.2986)),
        ("Table Rock", LatLon::new(43.0794, -79.0787)),
        ("Lyon", LatLon::new(45.76, 4.84)),
        ("mid-Atlantic", LatLon::new(30.0, -40.0)),
    ];
    for (label, p) in places {
        let a = gaz.reverse_geocode(p);
        let near: Vec<String> = pois_within(p, &pois)
            .into_iter()
            .map(|(poi, d)| format!("{} at {d:.0} m", poi.name))
            .collect();
        println!("{label}: {} / {:?} / near {near:?}", a.country, a.town);
    }

    let paris = LatLon::new(48.8566, 2.3522);
    let niagara = LatLon::new(43.0896, -79.0849);
    println!("Paris to Niagara Falls: {:.0} km", haversine_m(paris, niagara) / 1000.0);
    Ok(())
}
