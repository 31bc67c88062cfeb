#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::fit::CurveData;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = CurveData::from_csv_reader(data) {
        assert_eq!(c.x.len(), c.y.len());
        assert!(c.sigma.iter().all(|s| *s > 0.0));
    }
});
