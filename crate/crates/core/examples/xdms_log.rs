//! The XDMS keeps every change in an append-only log. Reopening the log
//! restores documents and versions; the raw records can be listed too.

use issee::xdms::{decode_log, Xdms};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("issee-xdms-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("xdms.log");

    {
        let x = Xdms::open(&log)?;
        let watch = x.subscribe_changes("/groups/")?;
        x.put_document("/groups/by-type/camera.xml", "<group key=\"by-type/camera\"/>")?;
        x.put_document("/groups/by-type/camera.xml", "<group key=\"by-type/camera\"><member uri=\"sip:c@hommel.com\"/></group>")?;
        x.put_document("/sensors/c%40hommel.com.xml", "<sensor/>")?;
        x.delete_document("/groups/by-type/camera.xml")?;
        for e in x.drain_events(watch) {
            println!("event {e:?}");
        }
        x.flush()?;
    }

    let reopened = Xdms::open(&log)?;
    for (path, (content, version)) in reopened.snapshot() {
        println!("restored {path} v{version}: {content}");
    }
    println!("camera group version after delete: {}", reopened.version_of("/groups/by-type/camera.xml"));

    for r in decode_log(&std::fs::read(&log)?)? {
        println!("log v{} {:?} {} ({} bytes)", r.version, r.kind, r.path, r.content.len());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
