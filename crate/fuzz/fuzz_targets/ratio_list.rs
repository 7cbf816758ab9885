#![no_main]

use cxl_tiering::harness::parse_ratio_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ratios) = parse_ratio_list(text) {
        assert!(!ratios.is_empty());
        assert!(ratios.iter().all(|r| (0.0..=100.0).contains(r)));
    }
});
