#![no_main]

use libfuzzer_sys::fuzz_target;
use quadmapf::plan::parse_plans;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(plans) = parse_plans(text) {
        assert!(parse_plans(&plans.to_json()).is_ok());
    }
});
