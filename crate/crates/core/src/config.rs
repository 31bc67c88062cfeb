//! JSON run configuration with explicit units.
//!
//! Every section is optional and falls back to the bundled defaults. Dimensioned
//! fields are strings carrying a unit (`"5 us"`, `"89.5 kHz"`, `"6 uW"`); bare
//! numbers are rejected for them. Overrides address one dotted path each, e.g.
//! `protocol.threshold=2` or `protocol.delay="0 ns"`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::charge::CalibrationConstants;
use crate::error::{Error, Result};
use crate::fit::{ChargeParams, CurveFitSpec, FreeMask};
use crate::optimize::{PhysicalConstants, ReadoutModels, SearchGrid};
use crate::protocol::ProtocolConfig;
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub shots: u64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { shots: 10_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub calibration: CalibrationConstants,
    pub protocol: ProtocolConfig,
    pub readout_models: ReadoutModels,
    pub search_grid: SearchGrid,
    pub physical: PhysicalConstants,
    pub simulation: SimulationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            calibration: CalibrationConstants::default(),
            protocol: ProtocolConfig::new(6.0, 5e-6, 1).expect("valid defaults"),
            readout_models: ReadoutModels::default(),
            search_grid: SearchGrid::default(),
            physical: PhysicalConstants::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        fn ctx(section: &'static str) -> impl Fn(Error) -> Error {
            move |e| match e {
                Error::Config(m) | Error::Domain(m) => Error::Config(format!("{section}: {m}")),
                e => Error::Config(format!("{section}: {e}")),
            }
        }
        self.calibration.validate().map_err(ctx("calibration"))?;
        self.protocol.validate().map_err(ctx("protocol"))?;
        self.readout_models.validate().map_err(ctx("readout_models"))?;
        self.physical.validate().map_err(ctx("physical"))?;
        if self.simulation.shots == 0 {
            return Err(Error::Config("simulation: shots must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `path=value`; the value is read as JSON when it parses, otherwise as a string.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn new(path: impl Into<String>, value: Value) -> Self {
        Override { path: path.into(), value }
    }
}

impl FromStr for Override {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form path=value")))?;
        let path = path.trim();
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("override `{s}` has an empty path segment")));
        }
        let raw = raw.trim();
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Override::new(path, value))
    }
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), msg: e.to_string() }
}

/// Parse and validate a configuration, then apply `overrides` in order.
pub fn parse_config(text: &str, overrides: &[Override]) -> Result<Config> {
    let cfg: Config = if text.trim().is_empty() { Config::default() } else { serde_json::from_str(text).map_err(json_error)? };
    if overrides.is_empty() {
        cfg.validate()?;
        return Ok(cfg);
    }
    let mut tree = serde_json::to_value(&cfg)?;
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: Config = serde_json::from_value(tree).map_err(|e| {
        let paths: Vec<&str> = overrides.iter().map(|o| o.path.as_str()).collect();
        Error::Config(format!("after overrides {paths:?}: {e}"))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn apply_override(tree: &mut Value, o: &Override) -> Result<()> {
    let mut node = tree;
    let segments: Vec<&str> = o.path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("override path `{}` does not name a section", o.path)));
        };
        if i + 1 == segments.len() {
            if !map.contains_key(*seg) {
                return Err(Error::Config(format!("override path `{}` names an unknown field", o.path)));
            }
            map.insert(seg.to_string(), o.value.clone());
            return Ok(());
        }
        node = map
            .get_mut(*seg)
            .ok_or_else(|| Error::Config(format!("override path `{}` names an unknown section `{seg}`", o.path)))?;
    }
    Ok(())
}

/// One histogram file and its readout context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSource {
    pub path: String,
    #[serde(with = "units::time")]
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_uw: Option<f64>,
    #[serde(default)]
    pub label: String,
}

/// What the `fit` command should do with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FitSpec {
    /// One histogram, or a joint fit with shared rates when several are listed.
    Histogram {
        datasets: Vec<HistogramSource>,
        free: FreeMask,
        init: ChargeParams,
        #[serde(default)]
        seed: u64,
    },
    Curve {
        /// One CSV for coherence fits; before and after CSVs for lifetime fits.
        data: Vec<String>,
        spec: CurveFitSpec,
        #[serde(default)]
        seed: u64,
    },
}

pub fn parse_fit_spec(text: &str) -> Result<FitSpec> {
    let spec: FitSpec = serde_json::from_str(text).map_err(json_error)?;
    match &spec {
        FitSpec::Histogram { datasets, free, init, .. } => {
            if datasets.is_empty() {
                return Err(Error::Config("fit spec lists no datasets".into()));
            }
            if !free.any() {
                return Err(Error::Config("fit spec frees no parameters".into()));
            }
            init.rates().map_err(|e| Error::Config(format!("init: {e}")))?;
            if !(0.0..=1.0).contains(&init.p_minus) {
                return Err(Error::Config("init.p_minus must lie in [0, 1]".into()));
            }
        }
        FitSpec::Curve { data, spec, .. } => {
            let need = match spec {
                CurveFitSpec::Coherence { .. } => 1,
                CurveFitSpec::LifetimeJoint { .. } => 2,
            };
            if data.len() != need {
                return Err(Error::Config(format!("this curve fit takes {need} data file(s), got {}", data.len())));
            }
        }
    }
    Ok(spec)
}
