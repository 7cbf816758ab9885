#![no_main]

use cxl_tiering::estimator::ModelCoefficients;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = ModelCoefficients::from_toml(text) else { return };
    let again = ModelCoefficients::from_toml(&model.to_toml()).expect("round trip parses");
    assert_eq!(model, again);
});
