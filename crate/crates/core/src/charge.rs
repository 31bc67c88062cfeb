//! Power-dependent charge dynamics under red illumination.
//!
//! Below saturation the photon detection rates scale linearly with probe power
//! and the charge conversion rates quadratically:
//!
//! ```text
//! γ⁻ = C⁻·P        γ⁰ = C⁰·P + D
//! Γ_ion = C_ion·P²  Γ_rec = C_rec·P²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Powers above this are outside the calibrated unsaturated regime.
pub const SATURATION_WARNING_UW: f64 = 200.0;

/// Optical power in microwatts.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Power(#[serde(with = "units::power")] f64);

impl Power {
    pub fn microwatts(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::domain(format!("power must be a finite value >= 0, got {value}")));
        }
        Ok(Power(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fitted power-law coefficients of the four charge processes.
///
/// Units: `c_minus`, `c_zero` in Hz/µW; `dark` in Hz; `c_ion`, `c_rec` in Hz/µW².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConstants {
    #[serde(with = "units::rate_per_power")]
    pub c_minus: f64,
    #[serde(with = "units::rate_per_power")]
    pub c_zero: f64,
    #[serde(with = "units::frequency")]
    pub dark: f64,
    #[serde(with = "units::rate_per_power_squared")]
    pub c_ion: f64,
    #[serde(with = "units::rate_per_power_squared")]
    pub c_rec: f64,
}

/// One-sigma uncertainties reported alongside the bundled calibration.
/// Stored for reference; nothing propagates them.
pub const TABLE_UNCERTAINTIES: CalibrationConstants = CalibrationConstants {
    c_minus: 27.0,
    c_zero: 2.3,
    dark: 67.0,
    c_ion: 0.27,
    c_rec: 0.0041,
};

impl Default for CalibrationConstants {
    /// Central values of the bundled red charge-dynamics calibration.
    fn default() -> Self {
        CalibrationConstants {
            c_minus: 895.0,
            c_zero: 16.3,
            dark: 39.0,
            c_ion: 5.36,
            c_rec: 0.082,
        }
    }
}

impl CalibrationConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [self.c_minus, self.c_zero, self.dark, self.c_ion, self.c_rec];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("calibration constants must be finite and >= 0".into()));
        }
        if self.c_minus <= self.c_zero {
            return Err(Error::Config(format!(
                "c_minus ({}) must exceed c_zero ({}): NV- is the bright state",
                self.c_minus, self.c_zero
            )));
        }
        Ok(())
    }
}

/// Photon detection and charge conversion rates at one probe power, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    #[serde(with = "units::frequency")]
    pub gamma_minus: f64,
    #[serde(with = "units::frequency")]
    pub gamma_zero: f64,
    #[serde(with = "units::frequency")]
    pub gamma_ion: f64,
    #[serde(with = "units::frequency")]
    pub gamma_rec: f64,
}

impl RateSet {
    pub fn new(gamma_minus: f64, gamma_zero: f64, gamma_ion: f64, gamma_rec: f64) -> Result<Self> {
        let r = RateSet { gamma_minus, gamma_zero, gamma_ion, gamma_rec };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma_minus, self.gamma_zero, self.gamma_ion, self.gamma_rec];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!("rates must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Exchange the roles of the two charge states.
    pub fn swapped(&self) -> RateSet {
        RateSet {
            gamma_minus: self.gamma_zero,
            gamma_zero: self.gamma_minus,
            gamma_ion: self.gamma_rec,
            gamma_rec: self.gamma_ion,
        }
    }
}

pub fn rates_at_power(cal: &CalibrationConstants, p: Power) -> RateSet {
    let p = p.value();
    if p > SATURATION_WARNING_UW {
        log::warn!("probe power {p} uW exceeds {SATURATION_WARNING_UW} uW; unsaturated rate laws may not hold");
    }
    RateSet {
        gamma_minus: cal.c_minus * p,
        gamma_zero: cal.c_zero * p + cal.dark,
        gamma_ion: cal.c_ion * p * p,
        gamma_rec: cal.c_rec * p * p,
    }
}

/// Steady-state NV⁻ population `Γ_rec / (Γ_ion + Γ_rec)` under continuous illumination.
pub fn steady_state_population(rates: &RateSet) -> Result<f64> {
    let total = rates.gamma_ion + rates.gamma_rec;
    if !(total > 0.0) {
        return Err(Error::UndefinedSteadyState);
    }
    Ok(rates.gamma_rec / total)
}

/// Recombination rate implied by a measured steady-state population: `P⁻/(1−P⁻)·Γ_ion`.
pub fn recombination_from_steady_state(gamma_ion: f64, p_minus: f64) -> Result<f64> {
    if !(gamma_ion >= 0.0) {
        return Err(Error::domain(format!("ionization rate must be >= 0, got {gamma_ion}")));
    }
    if p_minus == 1.0 {
        return Err(Error::Divergence("recombination rate for a steady-state NV- population of 1"));
    }
    if !(0.0..1.0).contains(&p_minus) {
        return Err(Error::domain(format!("steady-state population must lie in [0, 1), got {p_minus}")));
    }
    Ok(p_minus / (1.0 - p_minus) * gamma_ion)
}
