//! Replays the fuzz corpus seeds through the parsers with the fuzz assertions.

use std::path::PathBuf;

use circlefib::specfile::{
    certification_to_json, parse_certification_report, parse_fibration_spec, parse_target, parse_tol_override,
};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn fibration_spec_seeds() {
    let mut parsed = 0;
    for (name, text) in seeds("fibration_spec") {
        if let Ok(spec) = parse_fibration_spec(&text) {
            assert_eq!(parse_fibration_spec(&spec.to_json()).unwrap(), spec, "{name}");
            assert!(spec.build().is_ok(), "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 5);
}

#[test]
fn target_seeds() {
    for (name, text) in seeds("target_j") {
        let t = parse_target(&text).unwrap();
        assert_eq!(parse_target(&t.to_json()).unwrap(), t);
        assert_eq!(t.structure().is_ok(), !name.contains("not_structure"), "{name}");
    }
}

#[test]
fn report_seeds() {
    for (_, text) in seeds("report") {
        let r = parse_certification_report(&text).unwrap();
        assert_eq!(parse_certification_report(&certification_to_json(&r)).unwrap(), r);
    }
}

#[test]
fn tol_override_seeds() {
    let results: Vec<(String, bool)> =
        seeds("tol_override").into_iter().map(|(n, t)| (n, parse_tol_override(&t).is_ok())).collect();
    for (name, ok) in results {
        assert_eq!(ok, name == "fiber" || name == "spaced", "{name}");
    }
}
