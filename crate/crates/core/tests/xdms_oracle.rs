use std::collections::BTreeMap;

use proptest::prelude::*;

use issee::xdms::{decode_log, ChangeKind, Xdms, XdmsError};

#[derive(Debug, Clone)]
enum Op {
    Put(usize, u32),
    Delete(usize),
}

const PATHS: [&str; 5] = [
    "/sensors/a.xml",
    "/sensors/b%40hommel.com.xml",
    "/groups/by-type/temperature.xml",
    "/groups/by-location/France/Paris.xml",
    "/groups/news/heatwave.xml",
];

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0..PATHS.len(), any::<u32>()).prop_map(|(p, v)| Op::Put(p, v)),
            1 => (0..PATHS.len()).prop_map(Op::Delete),
        ],
        100,
    )
}

/// Naive model: current content per path and a per-path version counter
/// that survives deletes.
#[derive(Default)]
struct Model {
    docs: BTreeMap<String, (String, u64)>,
    versions: BTreeMap<String, u64>,
}

impl Model {
    fn apply(&mut self, op: &Op) -> Option<u64> {
        match op {
            Op::Put(p, v) => {
                let ver = self.versions.entry(PATHS[*p].to_string()).or_insert(0);
                *ver += 1;
                self.docs.insert(PATHS[*p].to_string(), (format!("<d v=\"{v}\"/>"), *ver));
                Some(*ver)
            }
            Op::Delete(p) => {
                self.docs.remove(PATHS[*p])?;
                let ver = self.versions.get_mut(PATHS[*p]).unwrap();
                *ver += 1;
                Some(*ver)
            }
        }
    }
}

fn snapshot_strings(x: &Xdms) -> BTreeMap<String, (String, u64)> {
    x.snapshot().into_iter().map(|(k, (c, v))| (k, (c.to_string(), v))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn store_matches_naive_model_and_log_replay(ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("changes.log");
        let x = Xdms::open(&log).unwrap();
        let watch = x.subscribe_changes("/").unwrap();
        let mut model = Model::default();
        let mut last_seen: BTreeMap<String, u64> = BTreeMap::new();
        for op in &ops {
            let want = model.apply(op);
            let got = match op {
                Op::Put(p, v) => Some(x.put_document(PATHS[*p], &format!("<d v=\"{v}\"/>")).unwrap()),
                Op::Delete(p) => match x.delete_document_at(PATHS[*p], 0) {
                    Ok(v) => Some(v),
                    Err(XdmsError::NotFound(_)) => None,
                    Err(e) => panic!("{e}"),
                },
            };
            prop_assert_eq!(got, want);
            for ev in x.drain_events(watch) {
                let prev = last_seen.insert(ev.path.clone(), ev.version).unwrap_or(0);
                prop_assert_eq!(ev.version, prev + 1, "{}", ev.path);
                prop_assert_eq!(ev.kind == ChangeKind::Delete, ev.content.is_none());
            }
        }
        prop_assert_eq!(snapshot_strings(&x), model.docs.clone());
        x.flush().unwrap();

        // replaying the log on a fresh store gives the same state
        let replayed = Xdms::open(&log).unwrap();
        prop_assert_eq!(snapshot_strings(&replayed), model.docs.clone());
        for p in PATHS {
            prop_assert_eq!(replayed.version_of(p), model.versions.get(p).copied().unwrap_or(0));
        }

        // and so does folding the decoded records by hand
        let records = decode_log(&std::fs::read(&log).unwrap()).unwrap();
        let mut folded: BTreeMap<String, (String, u64)> = BTreeMap::new();
        for r in records {
            match r.kind {
                ChangeKind::Put => { folded.insert(r.path, (r.content, r.version)); }
                ChangeKind::Delete => { folded.remove(&r.path); }
            }
        }
        prop_assert_eq!(folded, model.docs);
    }
}

#[test]
fn versions_and_path_rules() {
    let x = Xdms::new();
    assert_eq!(x.put_document("/sensors/a.xml", "<a/>").unwrap(), 1);
    assert_eq!(x.put_document("/sensors/a.xml", "<a/>").unwrap(), 2);
    assert!(matches!(x.put_document("/sensors/../escape.xml", "<a/>"), Err(XdmsError::InvalidPath(_))));
    assert!(matches!(x.put_document("/sensors//a.xml", "<a/>"), Err(XdmsError::InvalidPath(_))));
    assert!(matches!(x.put_document("/sensors/b.xml", "<a>"), Err(XdmsError::MalformedContent { .. })));
    assert!(matches!(x.get_document("/nothing.xml"), Err(XdmsError::NotFound(_))));
    assert_eq!(x.get_document("/sensors/a.xml").unwrap().1, 2);
}

#[test]
fn truncated_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("changes.log");
    let x = Xdms::open(&log).unwrap();
    x.put_document("/a.xml", "<a/>").unwrap();
    x.put_document("/b.xml", "<b/>").unwrap();
    x.flush().unwrap();
    drop(x);
    let bytes = std::fs::read(&log).unwrap();
    std::fs::write(&log, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(Xdms::open(&log), Err(XdmsError::CorruptLog { .. })));
}
