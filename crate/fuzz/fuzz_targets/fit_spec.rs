#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::config::parse_fit_spec;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_fit_spec(text);
    }
});
