//! Real-time charge initialization: analytic predictions of the pump/probe
//! feedback loop, plus a discrete-event emulation of the controller.
//!
//! For probe rates `r`, window `τ_probe`, threshold `ν` and NV⁻ prior `P⁻`:
//!
//! ```text
//! q     = Σ_{n≥ν} P⁻ p(n|−) + (1−P⁻) p(n|0)      per-attempt success probability
//! ε_T   = Σ_{n≥ν} (1−P⁻) p(n|0) / q
//! ε_D   = 1 − exp(−τ_delay Γ_ion)
//! F     = (1−ε_T)(1−ε_D)
//! n̄     = 1/q
//! τ_I   = (τ_pump + τ_overhead + τ_probe) n̄
//! ```

mod controller;

pub use controller::{
    estimate_protocol_stats, run_controller, run_controller_with, ControllerOptions, ControllerOutcome,
    CounterMode, ProtocolStats, SpadCounter, TrialCounter, DEFAULT_ATTEMPT_BUDGET,
};

use serde::{Deserialize, Serialize};

use crate::charge::{rates_at_power, CalibrationConstants, Power, RateSet};
use crate::error::{Error, Result};
use crate::photon::{conditional_pair, tail_probability, PhotonDistribution};
use crate::units;

/// Largest threshold a 6-bit photon counter can compare against.
pub const MAX_THRESHOLD: u32 = 63;
const UNDERFLOW: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub probe_power: Power,
    #[serde(with = "units::time")]
    pub probe_duration: f64,
    pub threshold: u32,
    #[serde(with = "units::time", default = "default_pump_duration")]
    pub pump_duration: f64,
    #[serde(default = "default_pump_power")]
    pub pump_power: Power,
    #[serde(with = "units::time", default = "default_overhead")]
    pub overhead: f64,
    #[serde(with = "units::time", default = "default_delay")]
    pub delay: f64,
    #[serde(default = "default_prior")]
    pub prior_p_minus: f64,
}

fn default_pump_duration() -> f64 {
    0.5e-6
}
fn default_pump_power() -> Power {
    Power::microwatts(500.0).expect("positive")
}
fn default_overhead() -> f64 {
    1.5e-6
}
fn default_delay() -> f64 {
    550e-9
}
fn default_prior() -> f64 {
    0.75
}

impl ProtocolConfig {
    /// Loop defaults with the given probe settings.
    pub fn new(probe_power_uw: f64, probe_duration: f64, threshold: u32) -> Result<Self> {
        let cfg = ProtocolConfig {
            probe_power: Power::microwatts(probe_power_uw)?,
            probe_duration,
            threshold,
            pump_duration: default_pump_duration(),
            pump_power: default_pump_power(),
            overhead: default_overhead(),
            delay: default_delay(),
            prior_p_minus: default_prior(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("probe_duration", self.probe_duration),
            ("pump_duration", self.pump_duration),
            ("overhead", self.overhead),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            return Err(Error::Config(format!("delay must be >= 0, got {}", self.delay)));
        }
        if self.threshold < 1 {
            return Err(Error::Config("threshold must be >= 1".into()));
        }
        if self.threshold > MAX_THRESHOLD {
            return Err(Error::Config(format!(
                "threshold {} exceeds the 6-bit counter limit of {MAX_THRESHOLD}",
                self.threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.prior_p_minus) {
            return Err(Error::Config(format!(
                "prior_p_minus must lie in [0, 1], got {}",
                self.prior_p_minus
            )));
        }
        Ok(())
    }

    /// Duration of one pump/overhead/probe cycle at full probe length.
    pub fn cycle_time(&self) -> f64 {
        self.pump_duration + self.overhead + self.probe_duration
    }

    pub fn probe_rates(&self, cal: &CalibrationConstants) -> RateSet {
        rates_at_power(cal, self.probe_power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolPrediction {
    pub epsilon_t: f64,
    pub epsilon_d: f64,
    pub fidelity: f64,
    pub success_probability: f64,
    pub avg_attempts: f64,
    /// Upper bound: every attempt is charged a full probe window.
    #[serde(with = "units::time")]
    pub init_time: f64,
}

/// Per-attempt probability of reaching the threshold.
pub fn success_probability(minus: &PhotonDistribution, zero: &PhotonDistribution, nu: usize, prior: f64) -> f64 {
    prior * tail_probability(minus, nu) + (1.0 - prior) * tail_probability(zero, nu)
}

fn check_prior(prior: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&prior) {
        return Err(Error::domain(format!("prior must lie in [0, 1], got {prior}")));
    }
    Ok(())
}

fn threshold_error_from(minus: &PhotonDistribution, zero: &PhotonDistribution, nu: usize, prior: f64) -> Result<f64> {
    let q = success_probability(minus, zero, nu, prior);
    if q < UNDERFLOW {
        return Err(Error::UnreachableThreshold(q));
    }
    Ok(((1.0 - prior) * tail_probability(zero, nu) / q).clamp(0.0, 1.0))
}

/// Probability that a threshold-reaching probe started in NV⁰.
pub fn threshold_error(rates: &RateSet, probe_duration: f64, nu: usize, prior: f64) -> Result<f64> {
    check_prior(prior)?;
    let (minus, zero) = conditional_pair(rates, probe_duration)?;
    threshold_error_from(&minus, &zero, nu, prior)
}

/// Probability of ionizing during the control latency.
pub fn delay_error(gamma_ion: f64, delay: f64) -> Result<f64> {
    if !(delay >= 0.0) {
        return Err(Error::domain(format!("delay must be >= 0, got {delay}")));
    }
    if !(gamma_ion >= 0.0) {
        return Err(Error::domain(format!("ionization rate must be >= 0, got {gamma_ion}")));
    }
    Ok(-(-delay * gamma_ion).exp_m1())
}

/// Mean number of attempts `1/q` for explicit probe parameters.
pub fn attempts_for(rates: &RateSet, probe_duration: f64, nu: usize, prior: f64) -> Result<f64> {
    check_prior(prior)?;
    let (minus, zero) = conditional_pair(rates, probe_duration)?;
    let q = success_probability(&minus, &zero, nu, prior);
    if q < UNDERFLOW {
        return Err(Error::UnreachableThreshold(q));
    }
    Ok(1.0 / q)
}

pub fn initialization_fidelity(cfg: &ProtocolConfig, cal: &CalibrationConstants) -> Result<ProtocolPrediction> {
    predict(cfg, cal)
}

pub fn average_attempts(cfg: &ProtocolConfig, cal: &CalibrationConstants) -> Result<f64> {
    Ok(predict(cfg, cal)?.avg_attempts)
}

pub fn initialization_time(cfg: &ProtocolConfig, n_bar: f64) -> Result<f64> {
    if !(n_bar >= 1.0) {
        return Err(Error::domain(format!("average attempts must be >= 1, got {n_bar}")));
    }
    Ok(cfg.cycle_time() * n_bar)
}

/// All analytic loop quantities for one configuration.
pub fn predict(cfg: &ProtocolConfig, cal: &CalibrationConstants) -> Result<ProtocolPrediction> {
    cfg.validate()?;
    let rates = cfg.probe_rates(cal);
    let (minus, zero) = conditional_pair(&rates, cfg.probe_duration)?;
    predict_from(cfg, &rates, &minus, &zero)
}

/// Predictions reusing precomputed conditional distributions of the probe window.
pub fn predict_from(
    cfg: &ProtocolConfig,
    rates: &RateSet,
    minus: &PhotonDistribution,
    zero: &PhotonDistribution,
) -> Result<ProtocolPrediction> {
    let nu = cfg.threshold as usize;
    let prior = cfg.prior_p_minus;
    let epsilon_t = threshold_error_from(minus, zero, nu, prior)?;
    let epsilon_d = delay_error(rates.gamma_ion, cfg.delay)?;
    let q = success_probability(minus, zero, nu, prior);
    let avg_attempts = 1.0 / q;
    Ok(ProtocolPrediction {
        epsilon_t,
        epsilon_d,
        fidelity: (1.0 - epsilon_t) * (1.0 - epsilon_d),
        success_probability: q,
        avg_attempts,
        init_time: initialization_time(cfg, avg_attempts)?,
    })
}
