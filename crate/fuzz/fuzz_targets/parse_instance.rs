#![no_main]

use libfuzzer_sys::fuzz_target;
use quadmapf::world::parse_instance;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(inst) = parse_instance(text) {
        assert!(parse_instance(&inst.to_json()).is_ok());
    }
});
