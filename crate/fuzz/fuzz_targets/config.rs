#![no_main]

use libfuzzer_sys::fuzz_target;
use union_robust::config::{parse_schedule, ConfigFile};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = ConfigFile::parse(text);
    let _ = parse_schedule(text);
});
