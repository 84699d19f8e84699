#![no_main]

use filmhom::cell_solver::parse_field;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dump) = parse_field(text) {
        assert!(dump.rows.iter().enumerate().all(|(i, r)| r.index == i));
        assert!(dump.rows.iter().all(|r| r.coords.len() == dump.dim && r.values.len() == dump.m));
    }
});
