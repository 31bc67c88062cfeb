//! Replays the checked-in fuzz corpus through the same entry points the fuzz
//! targets use, so the seeds stay valid on stable toolchains.

use std::fs;
use std::path::PathBuf;

use nvcharge::config::{parse_config, parse_fit_spec, Override};
use nvcharge::fit::{CurveData, DatasetContext, HistogramDataset};
use nvcharge::units::{parse_quantity, Dimension};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn quantity_seeds_parse() {
    let dims = [
        Dimension::Time,
        Dimension::Frequency,
        Dimension::Power,
        Dimension::RatePerPower,
        Dimension::RatePerPowerSquared,
    ];
    for (name, bytes) in seeds("parse_quantity") {
        let dim = dims[bytes[0] as usize % dims.len()];
        let text = std::str::from_utf8(&bytes[1..]).unwrap();
        parse_quantity(text, dim).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn config_seeds_parse() {
    for (name, bytes) in seeds("config_json") {
        parse_config(std::str::from_utf8(&bytes).unwrap(), &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn override_seeds_apply() {
    for (name, bytes) in seeds("override_arg") {
        let ovs: Vec<Override> = std::str::from_utf8(&bytes)
            .unwrap()
            .lines()
            .map(|l| l.parse().unwrap_or_else(|e| panic!("{name}: {e}")))
            .collect();
        parse_config("", &ovs).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn histogram_seeds_parse() {
    for (name, bytes) in seeds("histogram_csv") {
        let ctx = DatasetContext { power_uw: None, duration: 5e-6, label: name.clone() };
        let d = HistogramDataset::from_csv_reader(bytes.as_slice(), ctx).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(d.shots > 0);
    }
}

#[test]
fn curve_seeds_parse() {
    for (name, bytes) in seeds("curve_csv") {
        let c = CurveData::from_csv_reader(bytes.as_slice()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!c.x.is_empty());
    }
}

#[test]
fn fit_spec_seeds_parse() {
    for (name, bytes) in seeds("fit_spec") {
        parse_fit_spec(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
