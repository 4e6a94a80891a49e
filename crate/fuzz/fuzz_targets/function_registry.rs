#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = dbanova::testbed::parse_polynomial(s);
        let _ = dbanova::testbed::function_by_name(s);
    }
});
