//! Replays the checked-in fuzz corpus through the same invariants the fuzz
//! targets assert, so seeds stay meaningful without a nightly toolchain.

use std::path::PathBuf;

use filmhom::cell_solver::parse_field;
use filmhom::config::RunConfig;
use filmhom::geometry::{build_frame, parse_rational};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn config_seeds_round_trip() {
    for (name, data) in seeds("config_parse") {
        let text = std::str::from_utf8(&data).unwrap();
        let c = RunConfig::from_toml_str(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = RunConfig::from_toml_str(&c.canonical_toml()).unwrap();
        assert_eq!(again.config_hash(), c.config_hash(), "{name}");
    }
}

#[test]
fn rational_seeds_reparse_reduced() {
    for (name, data) in seeds("rational_parse") {
        let r = parse_rational(std::str::from_utf8(&data).unwrap().trim()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(*r.denom() > 0);
        assert_eq!(parse_rational(&format!("{}/{}", r.numer(), r.denom())).unwrap(), r, "{name}");
    }
}

#[test]
fn field_seeds_have_consistent_shape() {
    for (name, data) in seeds("nodal_field_parse") {
        let dump = parse_field(std::str::from_utf8(&data).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(dump.rows.iter().enumerate().all(|(i, r)| r.index == i), "{name}");
        assert!(dump.rows.iter().all(|r| r.coords.len() == dump.dim && r.values.len() == dump.m), "{name}");
    }
}

#[test]
fn normal_seeds_give_orthonormal_frames() {
    for (name, data) in seeds("frame_from_normal") {
        let normal: Vec<f64> =
            data.chunks_exact(8).take(3).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let frame = build_frame(&normal).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(frame.orthogonality_defect() <= 1e-12, "{name}");
    }
}
