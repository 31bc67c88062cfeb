//! Readout efficiency, speedup, readout noise and ac sensitivity, plus a grid
//! search over initialization and readout settings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge::{rates_at_power, CalibrationConstants, Power};
use crate::error::{Error, Result};
use crate::photon::{conditional_pair, tail_probability};
use crate::protocol::{predict_from, ProtocolConfig, MAX_THRESHOLD};
use crate::spin::{observable_with_fidelity, pl_snr, scc_observed_from, scc_snr, ObservableKind, SpinObservableModel};
use crate::telegraph::{derive_seed, stream};
use crate::units;

/// PL spin readout integrates the first 250 ns of fluorescence.
pub const PL_WINDOW: f64 = 250e-9;
/// Steady-state initialization: 2 µs of green light leaves NV⁻ 75% of the time.
pub const SSI_FIDELITY: f64 = 0.75;
pub const SSI_DURATION: f64 = 2e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub g_factor: f64,
    pub mu_b: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants { hbar: 1.054_571_817e-34, g_factor: 2.003, mu_b: 9.274_010_078_3e-24 }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        if [self.hbar, self.g_factor, self.mu_b].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain("physical constants must be finite and > 0"))
        }
    }
}

/// `ξ = SNR/√(τ_I+τ_O+τ_R)`.
pub fn readout_efficiency(snr: f64, tau_i: f64, tau_o: f64, tau_r: f64) -> Result<f64> {
    if [tau_i, tau_o, tau_r].iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::domain("durations must be finite and >= 0"));
    }
    let total = tau_i + tau_o + tau_r;
    if total == 0.0 {
        return Err(Error::domain("total cycle time is zero"));
    }
    if !(snr >= 0.0) {
        return Err(Error::domain(format!("SNR must be >= 0, got {snr}")));
    }
    Ok(snr / total.sqrt())
}

/// `(ξ/ξ_baseline)²`.
pub fn speedup(xi: f64, xi_baseline: f64) -> Result<f64> {
    if !(xi_baseline > 0.0) {
        return Err(Error::domain(format!("baseline efficiency must be > 0, got {xi_baseline}")));
    }
    if !(xi >= 0.0) {
        return Err(Error::domain(format!("efficiency must be >= 0, got {xi}")));
    }
    Ok((xi / xi_baseline).powi(2))
}

/// `σ_R = √(1 + 2/SNR²)`.
pub fn spin_readout_noise(snr: f64) -> Result<f64> {
    if snr == 0.0 {
        return Err(Error::Divergence("spin readout noise at zero SNR"));
    }
    if !(snr > 0.0) {
        return Err(Error::domain(format!("SNR must be > 0, got {snr}")));
    }
    Ok((1.0 + 2.0 / (snr * snr)).sqrt())
}

/// Hahn-echo ac sensitivity in T/√Hz.
pub fn ac_sensitivity(t2: f64, tau_i: f64, tau_r: f64, sigma_r: f64, c: &PhysicalConstants) -> Result<f64> {
    c.validate()?;
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::domain(format!("T2 must be > 0, got {t2}")));
    }
    if !(tau_i >= 0.0 && tau_r >= 0.0 && sigma_r >= 0.0) {
        return Err(Error::domain("overheads and readout noise must be >= 0"));
    }
    let prefactor = std::f64::consts::PI * c.hbar / (2.0 * c.g_factor * c.mu_b);
    Ok(prefactor * ((t2 + tau_i + tau_r) / (t2 * t2)).sqrt() * sigma_r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "SSI_PL")]
    SsiPl,
    #[serde(rename = "RTI_PL")]
    RtiPl,
    #[serde(rename = "SSI_SCC")]
    SsiScc,
    #[serde(rename = "RTI_SCC")]
    RtiScc,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::SsiPl, Strategy::RtiPl, Strategy::SsiScc, Strategy::RtiScc];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SsiPl => "SSI_PL",
            Strategy::RtiPl => "RTI_PL",
            Strategy::SsiScc => "SSI_SCC",
            Strategy::RtiScc => "RTI_SCC",
        }
    }

    fn real_time(self) -> bool {
        matches!(self, Strategy::RtiPl | Strategy::RtiScc)
    }

    fn scc(self) -> bool {
        matches!(self, Strategy::SsiScc | Strategy::RtiScc)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(format!("unknown strategy `{s}`; expected one of SSI_PL, RTI_PL, SSI_SCC, RTI_SCC")))
    }
}

/// Observable models for the two readout techniques.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutModels {
    pub pl: SpinObservableModel,
    pub scc: SpinObservableModel,
}

impl Default for ReadoutModels {
    fn default() -> Self {
        ReadoutModels { pl: SpinObservableModel::pl_default(), scc: SpinObservableModel::scc_default() }
    }
}

impl ReadoutModels {
    pub fn validate(&self) -> Result<()> {
        self.pl.validate()?;
        self.scc.validate()?;
        if self.pl.kind != ObservableKind::PlPhotons || self.scc.kind != ObservableKind::SccNvMinusProbability {
            return Err(Error::domain("readout models have mismatched kinds"));
        }
        Ok(())
    }
}

/// Candidate lattice for the exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    pub probe_powers_uw: Vec<f64>,
    #[serde(with = "units::time_vec")]
    pub probe_durations: Vec<f64>,
    pub thresholds: Vec<u32>,
    #[serde(with = "units::time_vec")]
    pub scc_durations: Vec<f64>,
    pub scc_powers_uw: Vec<f64>,
    pub scc_thresholds: Vec<u32>,
}

/// `n` points from `a` to `b` inclusive, evenly spaced in `ln`.
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => {
            let (la, lb) = (a.ln(), b.ln());
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        b
                    } else {
                        (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            probe_powers_uw: log_space(1.0, 200.0, 25),
            probe_durations: log_space(0.5e-6, 20e-6, 12),
            thresholds: vec![1, 2, 3],
            scc_durations: log_space(10e-6, 500e-6, 15),
            scc_powers_uw: log_space(5.0, 100.0, 10),
            scc_thresholds: (1..=40).collect(),
        }
    }
}

impl SearchGrid {
    pub fn validate(&self, strategy: Strategy) -> Result<()> {
        let empty = |name: &str| Err(Error::domain(format!("search grid `{name}` is empty")));
        if strategy.real_time() {
            if self.probe_powers_uw.is_empty() {
                return empty("probe_powers_uw");
            }
            if self.probe_durations.is_empty() {
                return empty("probe_durations");
            }
            if self.thresholds.is_empty() {
                return empty("thresholds");
            }
        }
        if strategy.scc() {
            if self.scc_durations.is_empty() {
                return empty("scc_durations");
            }
            if self.scc_powers_uw.is_empty() {
                return empty("scc_powers_uw");
            }
            if self.scc_thresholds.is_empty() {
                return empty("scc_thresholds");
            }
        }
        let positive = self
            .probe_powers_uw
            .iter()
            .chain(&self.probe_durations)
            .chain(&self.scc_durations)
            .chain(&self.scc_powers_uw)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::domain("grid powers and durations must be finite and > 0"));
        }
        if self.thresholds.iter().chain(&self.scc_thresholds).any(|t| !(1..=MAX_THRESHOLD).contains(t)) {
            return Err(Error::domain(format!("grid thresholds must lie in 1..={MAX_THRESHOLD}")));
        }
        Ok(())
    }
}

/// An initialization option: its fidelity and mean duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitCandidate {
    /// `None` for steady-state initialization.
    pub protocol: Option<ProtocolConfig>,
    pub fidelity: f64,
    #[serde(with = "units::time")]
    pub tau_i: f64,
}

/// A thresholded charge readout following spin-to-charge conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeReadout {
    pub power_uw: f64,
    #[serde(with = "units::time")]
    pub duration: f64,
    pub threshold: u32,
    /// P(≥ν photons | NV⁻) and P(≥ν photons | NV⁰).
    pub tail_minus: f64,
    pub tail_zero: f64,
}

/// Everything the search needs that does not depend on `τ_O`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTable {
    pub rti: Vec<InitCandidate>,
    pub ssi: InitCandidate,
    pub readouts: Vec<ChargeReadout>,
    pub models: ReadoutModels,
    /// Used for the sensitivity when a T₂ is supplied.
    pub physical: PhysicalConstants,
}

impl CandidateTable {
    /// Evaluate every initialization and readout option on the grid.
    pub fn build(cal: &CalibrationConstants, models: &ReadoutModels, grid: &SearchGrid, base: &ProtocolConfig) -> Result<Self> {
        cal.validate()?;
        models.validate()?;
        base.validate()?;
        let probes: Vec<(f64, f64)> = grid
            .probe_powers_uw
            .iter()
            .flat_map(|&p| grid.probe_durations.iter().map(move |&t| (p, t)))
            .collect();
        let rti: Vec<Vec<InitCandidate>> = probes
            .par_iter()
            .map(|&(p, t)| -> Result<Vec<InitCandidate>> {
                let mut cfg = *base;
                cfg.probe_power = Power::microwatts(p)?;
                cfg.probe_duration = t;
                let rates = cfg.probe_rates(cal);
                let (m, z) = conditional_pair(&rates, t)?;
                let mut out = Vec::new();
                for &nu in &grid.thresholds {
                    cfg.threshold = nu;
                    match predict_from(&cfg, &rates, &m, &z) {
                        Ok(pred) => out.push(InitCandidate { protocol: Some(cfg), fidelity: pred.fidelity, tau_i: pred.init_time }),
                        Err(Error::UnreachableThreshold(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let windows: Vec<(f64, f64)> = grid
            .scc_powers_uw
            .iter()
            .flat_map(|&p| grid.scc_durations.iter().map(move |&t| (p, t)))
            .collect();
        let readouts: Vec<Vec<ChargeReadout>> = windows
            .par_iter()
            .map(|&(p, t)| -> Result<Vec<ChargeReadout>> {
                let rates = rates_at_power(cal, Power::microwatts(p)?);
                let (m, z) = conditional_pair(&rates, t)?;
                Ok(grid
                    .scc_thresholds
                    .iter()
                    .map(|&nu| ChargeReadout {
                        power_uw: p,
                        duration: t,
                        threshold: nu,
                        tail_minus: tail_probability(&m, nu as usize),
                        tail_zero: tail_probability(&z, nu as usize),
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(CandidateTable {
            rti: rti.into_iter().flatten().collect(),
            ssi: InitCandidate { protocol: None, fidelity: SSI_FIDELITY, tau_i: SSI_DURATION },
            readouts: readouts.into_iter().flatten().collect(),
            models: *models,
            physical: PhysicalConstants::default(),
        })
    }

    fn inits(&self, strategy: Strategy) -> &[InitCandidate] {
        if strategy.real_time() {
            &self.rti
        } else {
            std::slice::from_ref(&self.ssi)
        }
    }
}

/// Single-shot SNR of SCC readout through a thresholded charge measurement.
pub fn scc_readout_snr(models: &ReadoutModels, fidelity: f64, r: &ChargeReadout) -> Result<f64> {
    let b0 = observable_with_fidelity(&models.scc, 0, fidelity)?;
    let b1 = observable_with_fidelity(&models.scc, 1, fidelity)?;
    scc_snr(scc_observed_from(b0, r.tail_minus, r.tail_zero), scc_observed_from(b1, r.tail_minus, r.tail_zero))
}

/// Single-shot SNR of PL readout over the fixed window.
pub fn pl_readout_snr(models: &ReadoutModels, fidelity: f64) -> Result<f64> {
    pl_snr(
        observable_with_fidelity(&models.pl, 0, fidelity)?,
        observable_with_fidelity(&models.pl, 1, fidelity)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub strategy: Strategy,
    pub snr: f64,
    pub fidelity: f64,
    #[serde(with = "units::time")]
    pub tau_i: f64,
    #[serde(with = "units::time")]
    pub tau_o: f64,
    #[serde(with = "units::time")]
    pub tau_r: f64,
    /// Hz^½
    pub xi: f64,
    /// Relative to steady-state initialization with PL readout at the same `τ_O`.
    pub speedup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_r: Option<f64>,
    /// T/√Hz, when a T₂ was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_ac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout: Option<ChargeReadout>,
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    xi: f64,
    snr: f64,
    init: usize,
    readout: Option<usize>,
    tau_i: f64,
    tau_r: f64,
}

// Larger ξ first, then shorter τ_I, then shorter τ_R, then grid order.
fn better(a: &Choice, b: &Choice) -> Ordering {
    b.xi.total_cmp(&a.xi)
        .then(a.tau_i.total_cmp(&b.tau_i))
        .then(a.tau_r.total_cmp(&b.tau_r))
        .then(a.init.cmp(&b.init))
        .then(a.readout.cmp(&b.readout))
}

fn best_choice(table: &CandidateTable, strategy: Strategy, tau_o: f64) -> Result<Choice> {
    if !(tau_o >= 0.0) || !tau_o.is_finite() {
        return Err(Error::domain(format!("operation time must be finite and >= 0, got {tau_o}")));
    }
    let inits = table.inits(strategy);
    if inits.is_empty() || (strategy.scc() && table.readouts.is_empty()) {
        return Err(Error::domain(format!("no feasible candidates for {strategy}")));
    }
    let best = inits
        .par_iter()
        .enumerate()
        .map(|(i, init)| -> Result<Option<Choice>> {
            let mut best: Option<Choice> = None;
            let mut offer = |c: Choice| {
                if best.as_ref().is_none_or(|b| better(&c, b) == Ordering::Less) {
                    best = Some(c);
                }
            };
            if strategy.scc() {
                for (j, r) in table.readouts.iter().enumerate() {
                    let snr = match scc_readout_snr(&table.models, init.fidelity, r) {
                        Ok(s) => s,
                        Err(Error::UndefinedSnr(_)) => continue,
                        Err(e) => return Err(e),
                    };
                    let xi = readout_efficiency(snr, init.tau_i, tau_o, r.duration)?;
                    offer(Choice { xi, snr, init: i, readout: Some(j), tau_i: init.tau_i, tau_r: r.duration });
                }
            } else {
                let snr = pl_readout_snr(&table.models, init.fidelity)?;
                let xi = readout_efficiency(snr, init.tau_i, tau_o, PL_WINDOW)?;
                offer(Choice { xi, snr, init: i, readout: None, tau_i: init.tau_i, tau_r: PL_WINDOW });
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .min_by(better);
    best.ok_or_else(|| Error::domain(format!("no candidate for {strategy} yields a defined SNR")))
}

/// Best settings for `strategy` at operation time `tau_o` over a prebuilt table.
pub fn optimize_with_table(table: &CandidateTable, strategy: Strategy, tau_o: f64, t2: Option<f64>) -> Result<EfficiencyReport> {
    let c = best_choice(table, strategy, tau_o)?;
    let base = best_choice(table, Strategy::SsiPl, tau_o)?;
    let init = &table.inits(strategy)[c.init];
    let sigma_r = spin_readout_noise(c.snr).ok();
    let eta_ac = match (t2, sigma_r) {
        (Some(t2), Some(s)) => Some(ac_sensitivity(t2, c.tau_i, c.tau_r, s, &table.physical)?),
        _ => None,
    };
    Ok(EfficiencyReport {
        strategy,
        snr: c.snr,
        fidelity: init.fidelity,
        tau_i: c.tau_i,
        tau_o,
        tau_r: c.tau_r,
        xi: c.xi,
        speedup: speedup(c.xi, base.xi)?,
        sigma_r,
        eta_ac,
        protocol: init.protocol,
        readout: c.readout.map(|j| table.readouts[j]),
    })
}

/// Build the candidate table for `grid` and return the best settings.
pub fn optimize_protocol(
    strategy: Strategy,
    tau_o: f64,
    cal: &CalibrationConstants,
    models: &ReadoutModels,
    grid: &SearchGrid,
) -> Result<EfficiencyReport> {
    grid.validate(strategy)?;
    grid.validate(Strategy::SsiPl)?;
    let table = CandidateTable::build(cal, models, grid, &default_loop()?)?;
    optimize_with_table(&table, strategy, tau_o, None)
}

/// Loop timing used for every real-time candidate; only the probe settings vary.
pub fn default_loop() -> Result<ProtocolConfig> {
    ProtocolConfig::new(1.0, 1e-6, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    #[serde(with = "units::time")]
    pub tau_o: f64,
    pub strategy: Strategy,
    pub speedup: f64,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub strategy: Strategy,
    /// Interpolated `τ_O` where the speedup crosses 1; absent when it never does.
    pub tau_o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupCurve {
    pub rows: Vec<SpeedupRow>,
    pub break_even: Vec<BreakEven>,
}

impl SpeedupCurve {
    pub fn series(&self, strategy: Strategy) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.strategy == strategy).map(|r| (r.tau_o, r.speedup)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["tau_o", "strategy", "speedup"])?;
        for r in &self.rows {
            wtr.write_record([format!("{:e}", r.tau_o), r.strategy.to_string(), format!("{:e}", r.speedup)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Speedup of each strategy against SSI_PL over a grid of operation times.
pub fn speedup_curve(table: &CandidateTable, tau_o_grid: &[f64], strategies: &[Strategy]) -> Result<SpeedupCurve> {
    if tau_o_grid.is_empty() || strategies.is_empty() {
        return Err(Error::domain("speedup curve needs at least one operation time and one strategy"));
    }
    let mut rows = Vec::with_capacity(tau_o_grid.len() * strategies.len());
    for &tau_o in tau_o_grid {
        let base = best_choice(table, Strategy::SsiPl, tau_o)?;
        for &s in strategies {
            let c = best_choice(table, s, tau_o)?;
            rows.push(SpeedupRow { tau_o, strategy: s, speedup: speedup(c.xi, base.xi)?, xi: c.xi });
        }
    }
    let break_even = strategies
        .iter()
        .map(|&s| {
            let pts: Vec<(f64, f64)> =
                rows.iter().filter(|r| r.strategy == s).map(|r| (r.tau_o, r.speedup)).collect();
            BreakEven { strategy: s, tau_o: crossing(&pts) }
        })
        .collect();
    Ok(SpeedupCurve { rows, break_even })
}

/// First place where `y − 1` changes sign, interpolated linearly in `ln τ` where possible.
fn crossing(pts: &[(f64, f64)]) -> Option<f64> {
    pts.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let (a, b) = (y0 - 1.0, y1 - 1.0);
        if a == 0.0 {
            return Some(x0);
        }
        if a * b >= 0.0 {
            return if b == 0.0 { Some(x1) } else { None };
        }
        let f = a / (a - b);
        if x0 > 0.0 && x1 > 0.0 {
            Some((x0.ln() + f * (x1.ln() - x0.ln())).exp())
        } else {
            Some(x0 + f * (x1 - x0))
        }
    })
}

/// Empirical total SNR after `shots` repetitions per spin state, estimated
/// from `experiments` independent runs with the observable's own statistics.
pub fn simulate_total_snr(model: &SpinObservableModel, fidelity: f64, shots: u64, experiments: u64, seed: u64) -> Result<f64> {
    if shots == 0 || experiments < 2 {
        return Err(Error::domain("need at least one shot and two experiments"));
    }
    let s0 = observable_with_fidelity(model, 0, fidelity)?;
    let s1 = observable_with_fidelity(model, 1, fidelity)?;
    let totals: Vec<(f64, f64)> = (0..experiments)
        .into_par_iter()
        .map(|e| -> Result<(f64, f64)> {
            let mut rng = stream(derive_seed(seed, e), 0);
            let mut draw = |mean: f64| -> Result<f64> {
                Ok(match model.kind {
                    ObservableKind::PlPhotons => {
                        if mean == 0.0 {
                            0.0
                        } else {
                            Poisson::new(mean * shots as f64).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng)
                        }
                    }
                    ObservableKind::SccNvMinusProbability => {
                        Binomial::new(shots, mean).map_err(|e| Error::domain(e.to_string()))?.sample(&mut rng) as f64
                    }
                })
            };
            Ok((draw(s0)?, draw(s1)?))
        })
        .collect::<Result<_>>()?;
    let n = experiments as f64;
    let stats = |sel: fn(&(f64, f64)) -> f64| {
        let mean = totals.iter().map(sel).sum::<f64>() / n;
        let var = totals.iter().map(|t| (sel(t) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    };
    let (m0, v0) = stats(|t| t.0);
    let (m1, v1) = stats(|t| t.1);
    if v0 + v1 == 0.0 {
        return Err(Error::UndefinedSnr("simulated totals have zero variance"));
    }
    Ok((m0 - m1).abs() / (v0 + v1).sqrt())
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::domain("slope needs at least two strictly positive points"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("slope needs at least two distinct x values"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn efficiency_examples() {
        assert_eq!(readout_efficiency(0.0, 1e-6, 1e-6, 1e-6).unwrap(), 0.0);
        let xi = readout_efficiency(0.4, 43e-6, 800e-6, 127e-6).unwrap();
        assert!((xi - 12.85).abs() < 0.01, "{xi}");
        let a = readout_efficiency(0.4, 1e-6, 2e-6, 3e-6).unwrap();
        let b = readout_efficiency(0.4, 4e-6, 8e-6, 12e-6).unwrap();
        assert_relative_eq!(b, a / 2.0, max_relative = 1e-14);
        assert!(readout_efficiency(0.4, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(speedup(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(speedup(6.0, 3.0).unwrap(), 4.0);
        assert!(speedup(1.0, 0.0).is_err());
    }

    #[test]
    fn readout_noise_examples() {
        assert!((spin_readout_noise(0.4).unwrap() - 3.674).abs() < 1e-3);
        assert_relative_eq!(spin_readout_noise(2f64.sqrt()).unwrap(), 2f64.sqrt(), max_relative = 1e-15);
        assert!((spin_readout_noise(1e8).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(spin_readout_noise(0.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn sensitivity_examples() {
        let c = PhysicalConstants::default();
        let eta = ac_sensitivity(800e-6, 43e-6, 127e-6, 3.67, &c).unwrap();
        assert!((eta / 1.3e-9 - 1.0).abs() < 0.08, "{eta}");
        assert_eq!(ac_sensitivity(800e-6, 43e-6, 127e-6, 0.0, &c).unwrap(), 0.0);
        let pre = std::f64::consts::PI * c.hbar / (2.0 * c.g_factor * c.mu_b);
        assert_relative_eq!(ac_sensitivity(1e-3, 0.0, 0.0, 2.0, &c).unwrap(), pre * 2.0 / 1e-3f64.sqrt(), max_relative = 1e-14);
        assert!(ac_sensitivity(0.0, 0.0, 0.0, 1.0, &c).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("rti_scc".parse::<Strategy>().unwrap(), Strategy::RtiScc);
        let e = "RTI_SCX".parse::<Strategy>().unwrap_err().to_string();
        assert!(e.contains("SSI_PL") && e.contains("RTI_SCC"));
        assert_eq!(serde_json::to_string(&Strategy::SsiPl).unwrap(), "\"SSI_PL\"");
    }

    fn small_grid() -> SearchGrid {
        SearchGrid {
            probe_powers_uw: vec![6.0, 50.0],
            probe_durations: vec![5e-6],
            thresholds: vec![1, 2],
            scc_durations: vec![100e-6, 300e-6],
            scc_powers_uw: vec![20.0],
            scc_thresholds: vec![2, 4, 8],
        }
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let grid = SearchGrid {
            probe_powers_uw: vec![20.0],
            probe_durations: vec![5e-6],
            thresholds: vec![1],
            scc_durations: vec![100e-6],
            scc_powers_uw: vec![20.0],
            scc_thresholds: vec![3],
        };
        let cal = CalibrationConstants::default();
        let models = ReadoutModels::default();
        let r = optimize_protocol(Strategy::RtiScc, 1e-3, &cal, &models, &grid).unwrap();
        let cfg = r.protocol.unwrap();
        assert_eq!(cfg.threshold, 1);
        assert_eq!(r.readout.unwrap().threshold, 3);
        assert_relative_eq!(r.xi * (r.tau_i + r.tau_o + r.tau_r).sqrt(), r.snr, max_relative = 1e-14);
        let empty = SearchGrid { scc_durations: vec![], ..grid };
        assert!(optimize_protocol(Strategy::RtiScc, 1e-3, &cal, &models, &empty).is_err());
    }

    #[test]
    fn curve_shape_and_baseline() {
        let cal = CalibrationConstants::default();
        let table = CandidateTable::build(&cal, &ReadoutModels::default(), &small_grid(), &default_loop().unwrap()).unwrap();
        let curve = speedup_curve(&table, &[10e-6, 100e-6, 1e-3], &Strategy::ALL).unwrap();
        assert_eq!(curve.rows.len(), 12);
        for (_, s) in curve.series(Strategy::SsiPl) {
            assert_eq!(s, 1.0);
        }
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 13);
        assert!(speedup_curve(&table, &[], &Strategy::ALL).is_err());
    }

    #[test]
    fn tie_break_is_order_independent() {
        let a = Choice { xi: 1.0, snr: 1.0, init: 5, readout: None, tau_i: 2.0, tau_r: 1.0 };
        let b = Choice { xi: 1.0, snr: 1.0, init: 1, readout: None, tau_i: 1.0, tau_r: 9.0 };
        assert_eq!(better(&a, &b), Ordering::Greater);
        assert_eq!([a, b].into_iter().min_by(better).unwrap().init, 1);
        assert_eq!([b, a].into_iter().min_by(better).unwrap().init, 1);
    }

    #[test]
    fn crossing_interpolates() {
        assert!(crossing(&[(1.0, 0.5), (2.0, 0.8)]).is_none());
        let x = crossing(&[(10.0, 0.5), (100.0, 1.5)]).unwrap();
        assert_relative_eq!(x, 10f64.powf(1.5), max_relative = 1e-12);
    }

    #[test]
    fn total_snr_grows_as_root_n() {
        let m = SpinObservableModel::scc_default();
        let pts: Vec<(f64, f64)> = [1u64, 10, 100, 1000]
            .iter()
            .map(|&n| (n as f64, simulate_total_snr(&m, 0.98, n, 4000, 12).unwrap()))
            .collect();
        let slope = log_log_slope(&pts).unwrap();
        assert!((slope - 0.5).abs() < 0.02, "{slope}");
    }

    proptest! {
        #[test]
        fn xi_reconstructs_snr(snr in 0.0f64..5.0, a in 0.0f64..1e-3, b in 1e-9f64..1e-3, c in 0.0f64..1e-3) {
            let xi = readout_efficiency(snr, a, b, c).unwrap();
            prop_assert!((xi * (a + b + c).sqrt() - snr).abs() <= 1e-12 * (1.0 + snr));
        }

        #[test]
        fn speedup_scale_invariant(x in 1e-3f64..1e3, y in 1e-3f64..1e3, k in 1e-3f64..1e3) {
            let s = speedup(x, y).unwrap();
            prop_assert!((speedup(k * x, k * y).unwrap() - s).abs() <= 1e-12 * s);
            prop_assert_eq!(speedup(x, x).unwrap(), 1.0);
        }

        #[test]
        fn readout_noise_decreasing(a in 1e-3f64..100.0, d in 1e-6f64..10.0) {
            prop_assert!(spin_readout_noise(a + d).unwrap() < spin_readout_noise(a).unwrap());
        }

        #[test]
        fn sensitivity_increasing(ti in 0.0f64..1e-3, tr in 0.0f64..1e-3, s in 0.1f64..10.0, d in 1e-7f64..1e-4) {
            let c = PhysicalConstants::default();
            let base = ac_sensitivity(800e-6, ti, tr, s, &c).unwrap();
            prop_assert!(ac_sensitivity(800e-6, ti + d, tr, s, &c).unwrap() > base);
            prop_assert!(ac_sensitivity(800e-6, ti, tr + d, s, &c).unwrap() > base);
            prop_assert!(ac_sensitivity(800e-6, ti, tr, s + d * 1e3, &c).unwrap() > base);
        }
    }
}
