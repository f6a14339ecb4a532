#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sc) = proxops::harness::parse_scenario(text) {
            // a config that parses must also pass validation
            sc.validate().unwrap();
        }
    }
});
