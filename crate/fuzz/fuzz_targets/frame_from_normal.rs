#![no_main]

use filmhom::geometry::build_frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let normal: Vec<f64> = data
        .chunks_exact(8)
        .take(3)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Ok(frame) = build_frame(&normal) {
        assert!(frame.orthogonality_defect() <= 1e-12);
    }
});
