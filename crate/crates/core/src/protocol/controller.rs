//! Discrete-event emulation of the pump/probe feedback loop.
//!
//! Each attempt: a green pump re-randomizes the charge state (NV⁻ with
//! probability `prior_p_minus`), the loop waits out the overhead, then a red
//! probe runs with photon arrivals drawn from the telegraph process. A 6-bit
//! SPAD counter compares against the threshold on every rising edge; on a
//! match the probe stops, the control latency elapses (only ionization is
//! possible during it) and the loop exits.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ProtocolConfig;
use crate::charge::{CalibrationConstants, RateSet};
use crate::error::{Error, Result};
use crate::photon::ChargeState;
use crate::telegraph::{derive_seed, draw_exponential, emission_rate, exit_rate, stream};

pub const DEFAULT_ATTEMPT_BUDGET: u64 = 1_000_000;
const COUNTER_MASK: u8 = 0x3f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterMode {
    /// Raise an event when the count reaches the threshold.
    Initialize,
    /// Count only; the threshold is ignored.
    Readout,
}

/// 6-bit rising-edge counter of SPAD pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpadCounter {
    value: u8,
    threshold: u8,
    mode: CounterMode,
}

impl SpadCounter {
    pub fn new(threshold: u8, mode: CounterMode) -> Self {
        SpadCounter { value: 0, threshold: threshold & COUNTER_MASK, mode }
    }

    /// Register one rising edge; true when this edge triggers the event line.
    pub fn rising_edge(&mut self) -> bool {
        self.value = (self.value + 1) & COUNTER_MASK;
        self.mode == CounterMode::Initialize && self.value == self.threshold
    }

    pub fn reset(&mut self) {
        self.value = 0;
    }

    pub fn value(&self) -> u8 {
        self.value
    }
}

/// 6-bit counter of AWG trial edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialCounter(u8);

impl TrialCounter {
    pub fn tick(&mut self) {
        self.0 = (self.0 + 1) & COUNTER_MASK;
    }

    pub fn value(&self) -> u8 {
        self.0
    }

    /// The 12-bit register sampled by the DAQ: trial count in the high six bits.
    pub fn register(&self, spad: &SpadCounter) -> u16 {
        ((self.0 as u16) << 6) | spad.value() as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerOptions {
    pub attempt_budget: u64,
    /// Keep the SPAD counter value at the end of every attempt.
    pub record_trace: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        ControllerOptions { attempt_budget: DEFAULT_ATTEMPT_BUDGET, record_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerOutcome {
    pub attempts: u64,
    /// Wall time from the first pump to loop exit, seconds.
    pub elapsed: f64,
    /// Charge state after the control latency, when the loop hands over.
    pub success_state: ChargeState,
    /// Charge state the successful probe started in.
    pub heralded_state: ChargeState,
    /// Charge state at the photon that reached the threshold.
    pub threshold_state: ChargeState,
    /// 6-bit trial counter at exit (wraps modulo 64).
    pub trial_counter: u8,
    pub counter_trace: Option<Vec<u8>>,
}

pub fn run_controller(cfg: &ProtocolConfig, cal: &CalibrationConstants, seed: u64) -> Result<ControllerOutcome> {
    run_controller_with(cfg, cal, seed, &ControllerOptions::default())
}

pub fn run_controller_with(
    cfg: &ProtocolConfig,
    cal: &CalibrationConstants,
    seed: u64,
    opts: &ControllerOptions,
) -> Result<ControllerOutcome> {
    cfg.validate()?;
    let rates = cfg.probe_rates(cal);
    let mut rng = stream(seed, 0);
    emulate(&mut rng, cfg, &rates, opts)
}

struct ProbeResult {
    /// Time of the threshold-reaching edge and the state at that moment.
    hit: Option<(f64, ChargeState)>,
}

fn emulate<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ProtocolConfig,
    rates: &RateSet,
    opts: &ControllerOptions,
) -> Result<ControllerOutcome> {
    let mut trials = TrialCounter::default();
    let mut spad = SpadCounter::new(cfg.threshold as u8, CounterMode::Initialize);
    let mut trace = opts.record_trace.then(Vec::new);
    let mut elapsed = 0.0;
    let mut attempts = 0u64;
    loop {
        if attempts >= opts.attempt_budget {
            return Err(Error::AttemptBudget(opts.attempt_budget));
        }
        attempts += 1;
        trials.tick();
        spad.reset();

        // Pump, then overhead.
        let start = if rng.random::<f64>() < cfg.prior_p_minus {
            ChargeState::Negative
        } else {
            ChargeState::Neutral
        };
        elapsed += cfg.pump_duration + cfg.overhead;

        let probe = run_probe(rng, rates, cfg.probe_duration, start, &mut spad);
        if let Some(t) = trace.as_mut() {
            t.push(spad.value());
        }
        match probe.hit {
            Some((t_hit, state)) => {
                elapsed += t_hit + cfg.delay;
                let success_state =
                    if state == ChargeState::Negative && draw_exponential(rng, rates.gamma_ion) < cfg.delay {
                        ChargeState::Neutral
                    } else {
                        state
                    };
                return Ok(ControllerOutcome {
                    attempts,
                    elapsed,
                    success_state,
                    heralded_state: start,
                    threshold_state: state,
                    trial_counter: trials.value(),
                    counter_trace: trace,
                });
            }
            None => elapsed += cfg.probe_duration,
        }
    }
}

fn run_probe<R: Rng + ?Sized>(
    rng: &mut R,
    rates: &RateSet,
    duration: f64,
    start: ChargeState,
    spad: &mut SpadCounter,
) -> ProbeResult {
    let mut state = start;
    let mut now = 0.0;
    loop {
        let leave = now + draw_exponential(rng, exit_rate(rates, state));
        let seg_end = leave.min(duration);
        let gamma = emission_rate(rates, state);
        let mut t = now + draw_exponential(rng, gamma);
        while t < seg_end {
            if spad.rising_edge() {
                return ProbeResult { hit: Some((t, state)) };
            }
            t += draw_exponential(rng, gamma);
        }
        if leave >= duration {
            return ProbeResult { hit: None };
        }
        now = leave;
        state = state.other();
    }
}

/// Ensemble statistics of independent controller runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub shots: u64,
    pub seed: u64,
    /// Fraction of runs handing over in NV⁻.
    pub fidelity: f64,
    /// Binomial standard error; absent for a single run.
    pub fidelity_se: Option<f64>,
    /// Fraction of runs whose successful probe started in NV⁻ and survived the latency.
    pub heralded_fidelity: f64,
    pub attempts_mean: f64,
    pub attempts_se: Option<f64>,
    pub elapsed_mean: f64,
    pub elapsed_se: Option<f64>,
    /// True when a single run makes the error bars undefined.
    pub degenerate: bool,
}

/// Run `shots` controllers with seeds `derive_seed(seed, i)` and aggregate in index order.
pub fn estimate_protocol_stats(
    cfg: &ProtocolConfig,
    cal: &CalibrationConstants,
    shots: u64,
    seed: u64,
) -> Result<(ProtocolStats, Vec<ControllerOutcome>)> {
    if shots == 0 {
        return Err(Error::domain("at least one controller run is required"));
    }
    cfg.validate()?;
    let rates = cfg.probe_rates(cal);
    let opts = ControllerOptions::default();
    let outcomes: Vec<ControllerOutcome> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(derive_seed(seed, i), 0);
            emulate(&mut rng, cfg, &rates, &opts)
        })
        .collect::<Result<_>>()?;
    Ok((summarize(&outcomes, seed), outcomes))
}

fn summarize(outcomes: &[ControllerOutcome], seed: u64) -> ProtocolStats {
    let n = outcomes.len() as f64;
    let good = outcomes.iter().filter(|o| o.success_state == ChargeState::Negative).count() as f64;
    let heralded_survive = outcomes
        .iter()
        .filter(|o| o.heralded_state == ChargeState::Negative && o.success_state == ChargeState::Negative)
        .count() as f64
        / n;
    let fidelity = good / n;
    let (attempts_mean, attempts_se) = mean_se(outcomes.iter().map(|o| o.attempts as f64));
    let (elapsed_mean, elapsed_se) = mean_se(outcomes.iter().map(|o| o.elapsed));
    let degenerate = outcomes.len() < 2;
    ProtocolStats {
        shots: outcomes.len() as u64,
        seed,
        fidelity,
        fidelity_se: (!degenerate).then(|| (fidelity * (1.0 - fidelity) / n).sqrt()),
        heralded_fidelity: heralded_survive,
        attempts_mean,
        attempts_se,
        elapsed_mean,
        elapsed_se,
        degenerate,
    }
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, Option<f64>) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, None);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}
