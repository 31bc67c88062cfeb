#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::units::{format_quantity, parse_quantity, Dimension};

const DIMS: [Dimension; 5] = [
    Dimension::Time,
    Dimension::Frequency,
    Dimension::Power,
    Dimension::RatePerPower,
    Dimension::RatePerPowerSquared,
];

fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let dim = DIMS[sel as usize % DIMS.len()];
    if let Ok(v) = parse_quantity(text, dim) {
        // Accepted values re-parse from their canonical form.
        let back = parse_quantity(&format_quantity(v, dim), dim).expect("canonical form parses");
        assert!(back == v || (back - v).abs() <= 1e-12 * v.abs());
    }
});
