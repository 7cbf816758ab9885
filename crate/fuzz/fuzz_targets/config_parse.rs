#![no_main]

use cxl_tiering::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = Config::parse(text) else { return };
    // A config that validates must resolve every scenario it declares.
    for entry in &config.scenarios {
        let scenario = config.scenario(&entry.name).expect("validated scenario resolves");
        assert!(!scenario.workloads.is_empty());
    }
});
