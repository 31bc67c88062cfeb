#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text, &[]) {
        let json = cfg.to_json().expect("valid config serializes");
        parse_config(&json, &[]).expect("serialized config parses");
    }
});
