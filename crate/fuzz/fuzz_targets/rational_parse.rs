#![no_main]

use filmhom::geometry::parse_rational;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_rational(text) {
        assert!(*r.denom() > 0);
        let back = parse_rational(&format!("{}/{}", r.numer(), r.denom())).expect("reduced form parses");
        assert_eq!(back, r);
    }
});
