//! The sensor annotation carried in registration signaling: a sensor type
//! and a location in decimal degrees.
//!
//! Two wire forms exist. Sensors put `sensor-type`, `latitude` and
//! `longitude` parameters on their Contact header. The S-CSCF re-emits them
//! toward the application server as standalone headers, either packed into a
//! single `Sensor-type: temperature; Latitude: 48; Longitude: 2` line or as
//! three separate headers. When both forms are present the standalone
//! headers win.

use std::fmt;

use thiserror::Error;

use super::message::{Header, NameAddr, SipMessage};

#[derive(Debug, Clone, PartialEq)]
pub struct SensorAnnotation {
    pub sensor_type: String,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("invalid sensor type {0:?}")]
    BadType(String),
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("{field} {value:?} is not a coordinate in range")]
    OutOfRange { field: &'static str, value: String },
}

fn valid_type(t: &str) -> bool {
    !t.is_empty() && !t.contains(|c: char| c.is_whitespace() || c == ';')
}

impl SensorAnnotation {
    pub fn new(sensor_type: &str, latitude: f64, longitude: f64) -> Result<Self, AnnotationError> {
        if !valid_type(sensor_type) {
            return Err(AnnotationError::BadType(sensor_type.to_string()));
        }
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(AnnotationError::OutOfRange {
                field: "latitude",
                value: latitude.to_string(),
            });
        }
        if !(-180.0..=180.0).contains(&longitude) {
            return Err(AnnotationError::OutOfRange {
                field: "longitude",
                value: longitude.to_string(),
            });
        }
        Ok(SensorAnnotation {
            sensor_type: sensor_type.to_string(),
            latitude,
            longitude,
        })
    }

    fn from_parts(
        sensor_type: &str,
        latitude: Option<&str>,
        longitude: Option<&str>,
    ) -> Result<Self, AnnotationError> {
        let lat = parse_coord("latitude", latitude)?;
        let lon = parse_coord("longitude", longitude)?;
        SensorAnnotation::new(sensor_type.trim(), lat, lon)
    }

    /// The packed standalone header value, e.g. `temperature; Latitude: 48; Longitude: 2`.
    pub fn packed_value(&self) -> String {
        format!(
            "{}; Latitude: {}; Longitude: {}",
            self.sensor_type, self.latitude, self.longitude
        )
    }

    pub fn packed_header(&self) -> Header {
        Header::other("Sensor-type", self.packed_value())
    }

    /// Adds the Contact parameter form to `contact`.
    pub fn apply_to_contact(&self, contact: &mut NameAddr) {
        contact.set_param("sensor-type", Some(&self.sensor_type));
        contact.set_param("latitude", Some(&self.latitude.to_string()));
        contact.set_param("longitude", Some(&self.longitude.to_string()));
    }
}

impl fmt::Display for SensorAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}, {})", self.sensor_type, self.latitude, self.longitude)
    }
}

fn parse_coord(field: &'static str, v: Option<&str>) -> Result<f64, AnnotationError> {
    let v = v.ok_or(AnnotationError::Missing(field))?.trim();
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| AnnotationError::OutOfRange {
            field,
            value: v.to_string(),
        })
}

/// Extracts the annotation from either wire form; `Ok(None)` when the message
/// carries none.
pub fn extract_sensor_annotation(
    msg: &SipMessage,
) -> Result<Option<SensorAnnotation>, AnnotationError> {
    if let Some(packed) = msg.header("Sensor-type") {
        let mut parts = packed.split(';');
        let sensor_type = parts.next().unwrap_or_default().trim().to_string();
        let (mut lat, mut lon) = (None, None);
        for p in parts {
            let Some((k, v)) = p.split_once([':', '=']) else {
                continue;
            };
            match k.trim().to_ascii_lowercase().as_str() {
                "latitude" => lat = Some(v.trim().to_string()),
                "longitude" => lon = Some(v.trim().to_string()),
                _ => {}
            }
        }
        let lat = lat.or_else(|| msg.header("Latitude"));
        let lon = lon.or_else(|| msg.header("Longitude"));
        return SensorAnnotation::from_parts(&sensor_type, lat.as_deref(), lon.as_deref())
            .map(Some);
    }
    for contact in msg.contact_addrs() {
        if let Some(t) = contact.param("sensor-type") {
            return SensorAnnotation::from_parts(
                t.unwrap_or_default(),
                contact.param("latitude").flatten(),
                contact.param("longitude").flatten(),
            )
            .map(Some);
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sip::parse_message;

    fn register(extra: &str) -> SipMessage {
        let raw = format!(
            "REGISTER sip:hommel.com SIP/2.0\r\n\
             Via: SIP/2.0/UDP 10.0.0.1;branch=z9hG4bK1\r\n\
             From: <sip:a@hommel.com>;tag=1\r\n\
             To: <sip:a@hommel.com>\r\n\
             {extra}\
             Call-ID: c1\r\n\
             CSeq: 1 REGISTER\r\n\r\n"
        );
        parse_message(raw.as_bytes()).unwrap()
    }

    #[test]
    fn contact_form() {
        let m = register(
            "Contact: <sip:a@h>;sensor-type=humidity;latitude=-33.9;longitude=18.4;expires=600\r\n",
        );
        let a = extract_sensor_annotation(&m).unwrap().unwrap();
        assert_eq!(a, SensorAnnotation::new("humidity", -33.9, 18.4).unwrap());
    }

    #[test]
    fn packed_and_separate_standalone_forms() {
        let m = register("Sensor-type: temperature; Latitude: 48; Longitude: 2\r\n");
        let a = extract_sensor_annotation(&m).unwrap().unwrap();
        assert_eq!(a, SensorAnnotation::new("temperature", 48.0, 2.0).unwrap());

        let m = register("Sensor-type: camera\r\nLatitude: 1.5\r\nLongitude: -2\r\n");
        let a = extract_sensor_annotation(&m).unwrap().unwrap();
        assert_eq!(a, SensorAnnotation::new("camera", 1.5, -2.0).unwrap());
    }

    #[test]
    fn standalone_wins_over_contact() {
        let m = register(
            "Contact: <sip:a@h>;sensor-type=humidity;latitude=1;longitude=1\r\n\
             Sensor-type: audio; Latitude: 2; Longitude: 3\r\n",
        );
        assert_eq!(extract_sensor_annotation(&m).unwrap().unwrap().sensor_type, "audio");
    }

    #[test]
    fn absent_and_invalid() {
        let m = register("Contact: <sip:a@h>;expires=600\r\n");
        assert_eq!(extract_sensor_annotation(&m), Ok(None));

        let m = register("Contact: <sip:a@h>;sensor-type=humidity;latitude=10\r\n");
        assert_eq!(
            extract_sensor_annotation(&m),
            Err(AnnotationError::Missing("longitude"))
        );
        let m = register("Sensor-type: temperature; Latitude: 91; Longitude: 2\r\n");
        assert!(matches!(
            extract_sensor_annotation(&m),
            Err(AnnotationError::OutOfRange { field: "latitude", .. })
        ));
        let m = register("Sensor-type: ; Latitude: 1; Longitude: 2\r\n");
        assert!(matches!(extract_sensor_annotation(&m), Err(AnnotationError::BadType(_))));
    }

    #[test]
    fn packed_value_matches_wire_form() {
        let a = SensorAnnotation::new("temperature", 48.0, 2.0).unwrap();
        assert_eq!(a.packed_value(), "temperature; Latitude: 48; Longitude: 2");
    }
}
