//! Evaluates initial filter criteria against REGISTER requests with and
//! without the sensor annotation, and for each session case.

use issee::scscf::{evaluate_ifc, parse_ifc};
use issee::sip::{parse_message, SensorAnnotation};
use issee::world::BUNDLED_IFC;

const REGISTER: &str = "REGISTER sip:hommel.com SIP/2.0\r\n\
Via: SIP/2.0/UDP 10.1.0.1:5060;branch=z9hG4bK1\r\n\
From: <sip:sensorA@hommel.com>;tag=1\r\n\
To: <sip:sensorA@hommel.com>\r\n\
Call-ID: ex1\r\n\
CSeq: 1 REGISTER\r\n\
Content-Length: 0\r\n\r\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let doc = parse_ifc(BUNDLED_IFC)?;
    println!("{} rule(s) loaded", doc.rules.len());

    let plain = parse_message(REGISTER.as_bytes())?;
    let annotated = plain
        .clone()
        .with(SensorAnnotation::new("temperature", 48.0, 2.0)?.packed_header());

    for (label, msg) in [("plain", &plain), ("annotated", &annotated)] {
        for case in 0..3 {
            let hits = evaluate_ifc(&doc, msg, case);
            let servers: Vec<String> = hits.iter().map(|(u, d)| format!("{u} ({d:?})")).collect();
            println!("{label:9} case {case}: {}", if servers.is_empty() { "-".into() } else { servers.join(", ") });
        }
    }

    // A two-group rule: fires on an urgent Subject or on any Event header.
    let custom = r#"<InitialFilterCriteria>
<Priority>5</Priority>
<TriggerPoint>
<SPT><ConditionNegated>0</ConditionNegated><Group>0</Group>
<SIPHeader><Header>Subject</Header><Content>urgent</Content></SIPHeader></SPT>
<SPT><ConditionNegated>0</ConditionNegated><Group>1</Group>
<SIPHeader><Header>Event</Header><Content>*</Content></SIPHeader></SPT>
</TriggerPoint>
<ApplicationServer><ServerName>sip:alerts@10.0.0.9:5050</ServerName><DefaultHandling>1</DefaultHandling></ApplicationServer>
</InitialFilterCriteria>"#;
    let doc = parse_ifc(custom)?;
    let urgent = plain.clone().with(issee::sip::Header::other("Subject", "URGENT"));
    println!("custom rule on plain: {}", evaluate_ifc(&doc, &plain, 0).len());
    println!("custom rule on urgent: {}", evaluate_ifc(&doc, &urgent, 0).len());
    Ok(())
}
