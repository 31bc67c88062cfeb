#![no_main]

use libfuzzer_sys::fuzz_target;
use nvcharge::fit::{DatasetContext, HistogramDataset};

fuzz_target!(|data: &[u8]| {
    let ctx = DatasetContext { power_uw: None, duration: 5e-6, label: String::new() };
    if let Ok(d) = HistogramDataset::from_csv_reader(data, ctx.clone()) {
        assert_eq!(d.shots, d.counts.iter().sum::<u64>());
        let mut out = Vec::new();
        d.write_csv(&mut out).expect("write to memory");
        assert_eq!(HistogramDataset::from_csv_reader(out.as_slice(), ctx).expect("round trip"), d);
    }
});
