#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::config::{parse_config, Override};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let overrides: Vec<Override> = text.lines().filter_map(|l| l.parse().ok()).collect();
    let _ = parse_config("", &overrides);
});
