#![no_main]

use libfuzzer_sys::fuzz_target;
use union_robust::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok((params, spec)) = decode(data) {
        assert_eq!(params.total_len(), spec.parameter_count());
        // The canonical encoding of whatever decoded is a fixed point.
        let canonical = encode(&params, &spec);
        let (p2, s2) = decode(&canonical).expect("canonical encoding decodes");
        assert_eq!(encode(&p2, &s2), canonical);
    }
});
