#![no_main]

use filmhom::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = RunConfig::from_toml_str(text) {
        // A validated config re-parses to itself with the same hash.
        let again = RunConfig::from_toml_str(&c.canonical_toml()).expect("canonical form parses");
        assert_eq!(again.config_hash(), c.config_hash());
    }
});
