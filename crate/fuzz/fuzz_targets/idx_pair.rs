#![no_main]

use libfuzzer_sys::fuzz_target;
use union_robust::data::parse_idx_pair;

// The first byte picks where the image file ends and the label file begins.
fuzz_target!(|data: &[u8]| {
    let Some((&split, rest)) = data.split_first() else { return };
    let cut = (split as usize).min(rest.len());
    let (images, labels) = rest.split_at(rest.len() - cut);
    if let Ok(ds) = parse_idx_pair(images, labels, "fuzz") {
        assert_eq!(ds.labels.len(), ds.len());
    }
});
