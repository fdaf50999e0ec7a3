#![no_main]

use libfuzzer_sys::fuzz_target;
use union_robust::ModelSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = ModelSpec::parse_descriptor(text) {
        // A descriptor that parses must round-trip through its own rendering.
        assert_eq!(ModelSpec::parse_descriptor(&spec.descriptor()).unwrap(), spec);
    }
});
