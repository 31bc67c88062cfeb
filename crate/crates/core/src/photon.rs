//! Photon-count distributions of a charge readout window.
//!
//! A readout of duration `t_R` starting in NV⁻ is a two-state telegraph process.
//! Conditioning on the total time `τ` spent in NV⁻, the detected photon number
//! is Poisson with mean `γ⁻τ + γ⁰(t_R − τ)`. The occupation-time density splits
//! by the parity of the number of charge transitions:
//!
//! ```text
//! odd:  Γ_ion · e^{−Γ_ion τ − Γ_rec (t_R−τ)} · I₀(z)
//! even: Γ_ion Γ_rec τ · e^{−Γ_ion τ − Γ_rec (t_R−τ)} · 2I₁(z)/z   (+ atom e^{−Γ_ion t_R} at τ = t_R)
//! z = 2 √(Γ_ion Γ_rec τ (t_R − τ))
//! ```
//!
//! The even-branch factor `√(Γ_ion Γ_rec τ/(t_R−τ))·I₁(z)` is rewritten as
//! `Γ_ion Γ_rec τ · 2I₁(z)/z`, which is bounded and equals `Γ_ion Γ_rec τ` at
//! the `τ = t_R` endpoint. The neutral-start distribution follows by swapping
//! the two states' rates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::charge::RateSet;
use crate::error::{Error, Result};
use crate::special::{bessel_i1_over_half_z_scaled, bessel_i_scaled, log_poisson_row, log_poisson_unchecked};

/// Relative change between successive Simpson refinements that counts as converged.
pub const QUADRATURE_TOL: f64 = 1e-9;
/// Maximum number of Simpson panels.
pub const MAX_PANELS: usize = 1 << 20;
const MIN_PANELS: usize = 16;
/// Tail mass allowed beyond the truncation point before the safety margin.
const TRUNCATION_TAIL: f64 = 1e-12;
const TRUNCATION_MARGIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargeState {
    Negative,
    Neutral,
}

impl ChargeState {
    pub fn other(self) -> ChargeState {
        match self {
            ChargeState::Negative => ChargeState::Neutral,
            ChargeState::Neutral => ChargeState::Negative,
        }
    }
}

/// What the readout window started from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCharge {
    State(ChargeState),
    /// NV⁻ population of a mixed initial state.
    Mixture(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    pmf: Vec<f64>,
    pub rates: RateSet,
    /// Readout duration in seconds.
    pub duration: f64,
    pub initial: InitialCharge,
}

impl PhotonDistribution {
    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn n_max(&self) -> usize {
        self.pmf.len() - 1
    }

    /// Probability of `n` photons; zero beyond the truncation point.
    pub fn prob(&self, n: usize) -> f64 {
        self.pmf.get(n).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// Two-column `n,probability` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "probability"])?;
        for (n, p) in self.pmf.iter().enumerate() {
            wtr.write_record([n.to_string(), format!("{p:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Count cutoff for a window: smallest `n` whose Poisson tail at the brighter
/// state's mean drops below 1e-12, plus a margin of 10.
pub fn truncation_point(rates: &RateSet, duration: f64) -> usize {
    let mean = rates.gamma_minus.max(rates.gamma_zero) * duration;
    if mean <= 0.0 {
        return TRUNCATION_MARGIN;
    }
    // Accumulate the cdf upward from the mode region; log-space terms avoid
    // underflow of e^{-mean} for long windows.
    let mut cdf = 0.0;
    let mut n = 0usize;
    loop {
        cdf += log_poisson_unchecked(mean, n as u64).exp();
        if 1.0 - cdf < TRUNCATION_TAIL && n as f64 >= mean {
            return n + TRUNCATION_MARGIN;
        }
        n += 1;
        if n > 100_000 {
            return n;
        }
    }
}

fn check_window(rates: &RateSet, duration: f64) -> Result<()> {
    rates.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!("readout duration must be > 0, got {duration}")));
    }
    Ok(())
}

/// `p(n | s)` for a window starting in charge state `initial`.
pub fn distribution_conditional(
    rates: &RateSet,
    duration: f64,
    initial: ChargeState,
) -> Result<PhotonDistribution> {
    check_window(rates, duration)?;
    let n_max = truncation_point(rates, duration);
    let oriented = match initial {
        ChargeState::Negative => *rates,
        ChargeState::Neutral => rates.swapped(),
    };
    let pmf = start_in_bright_pmf(&oriented, duration, n_max)?;
    Ok(PhotonDistribution {
        pmf,
        rates: *rates,
        duration,
        initial: InitialCharge::State(initial),
    })
}

/// `P⁻·p(n|−) + (1−P⁻)·p(n|0)`.
pub fn distribution_mixture(rates: &RateSet, duration: f64, p_minus: f64) -> Result<PhotonDistribution> {
    if !(0.0..=1.0).contains(&p_minus) {
        return Err(Error::domain(format!("NV- population must lie in [0, 1], got {p_minus}")));
    }
    let (minus, zero) = conditional_pair(rates, duration)?;
    Ok(mix(&minus, &zero, p_minus))
}

/// Both conditional distributions of one window, sharing a truncation point.
pub fn conditional_pair(rates: &RateSet, duration: f64) -> Result<(PhotonDistribution, PhotonDistribution)> {
    Ok((
        distribution_conditional(rates, duration, ChargeState::Negative)?,
        distribution_conditional(rates, duration, ChargeState::Neutral)?,
    ))
}

/// Mixture of two conditionals computed for the same window.
pub fn mix(minus: &PhotonDistribution, zero: &PhotonDistribution, p_minus: f64) -> PhotonDistribution {
    let len = minus.pmf.len().max(zero.pmf.len());
    let pmf = (0..len)
        .map(|n| p_minus * minus.prob(n) + (1.0 - p_minus) * zero.prob(n))
        .collect();
    PhotonDistribution {
        pmf,
        rates: minus.rates,
        duration: minus.duration,
        initial: InitialCharge::Mixture(p_minus),
    }
}

/// `Σ_{n ≥ ν} p(n)`, clamped to `[0, 1]`.
pub fn tail_probability(dist: &PhotonDistribution, nu: usize) -> f64 {
    let s: f64 = dist.pmf.iter().skip(nu).sum();
    s.clamp(0.0, 1.0)
}

/// Threshold maximizing the prior-weighted assignment fidelity
/// `prior·P(n ≥ ν | −) + (1 − prior)·P(n < ν | 0)`; ties go to the smaller `ν`.
pub fn optimal_charge_threshold(
    dist_minus: &PhotonDistribution,
    dist_zero: &PhotonDistribution,
    prior: f64,
) -> (usize, f64) {
    let top = dist_minus.pmf.len().max(dist_zero.pmf.len()) + 1;
    let mut best = (0usize, f64::NEG_INFINITY);
    for nu in 0..=top {
        let f = assignment_fidelity(dist_minus, dist_zero, prior, nu);
        if f > best.1 + 1e-12 {
            best = (nu, f);
        }
    }
    best
}

pub fn assignment_fidelity(
    dist_minus: &PhotonDistribution,
    dist_zero: &PhotonDistribution,
    prior: f64,
    nu: usize,
) -> f64 {
    let bright = tail_probability(dist_minus, nu);
    let dark = 1.0 - tail_probability(dist_zero, nu);
    prior * bright + (1.0 - prior) * dark
}

// Distribution for a window that starts in the state whose emission rate is
// `gamma_minus` and which leaves it at `gamma_ion`.
fn start_in_bright_pmf(r: &RateSet, t: f64, n_max: usize) -> Result<Vec<f64>> {
    let a = r.gamma_ion;
    let b = r.gamma_rec;
    let len = n_max + 1;

    let mut integral = vec![0.0; len];
    if a > 0.0 {
        integral = simpson_vector(len, t, |tau, row, scratch| {
            let rest = t - tau;
            let z = 2.0 * (a * b * tau * rest).max(0.0).sqrt();
            let ln_env = -a * tau - b * rest + z;
            let odd = a * bessel_i_scaled(0, z).expect("z >= 0");
            let even = a * b * tau * bessel_i1_over_half_z_scaled(z);
            let weight = odd + even;
            if weight <= 0.0 {
                row.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let ln_w = ln_env + weight.ln();
            log_poisson_row(r.gamma_minus * tau + r.gamma_zero * rest, scratch);
            for (v, lp) in row.iter_mut().zip(scratch.iter()) {
                *v = (ln_w + lp).exp();
            }
        })?;
    }

    // No transition during the window.
    let mut pmf = vec![0.0; len];
    log_poisson_row(r.gamma_minus * t, &mut pmf);
    let ln_survive = -a * t;
    for (p, i) in pmf.iter_mut().zip(&integral) {
        *p = (*p + ln_survive).exp() + i;
    }

    let total: f64 = pmf.iter().sum();
    if total > 1.0 {
        // Quadrature overshoot is below the convergence tolerance.
        pmf.iter_mut().for_each(|p| *p /= total);
    }
    Ok(pmf)
}

/// Composite Simpson integration over `[0, t]` of a vector-valued integrand,
/// doubling the panel count until the largest componentwise change is below
/// `QUADRATURE_TOL` relative to the integral's total mass.
fn simpson_vector<F>(len: usize, t: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64], &mut [f64]),
{
    let mut row = vec![0.0; len];
    let mut scratch = vec![0.0; len];

    let mut ends = vec![0.0; len];
    f(0.0, &mut row, &mut scratch);
    add(&mut ends, &row);
    f(t, &mut row, &mut scratch);
    add(&mut ends, &row);

    // Interior points at even indices (weight 2) and odd indices (weight 4).
    let mut evens = vec![0.0; len];
    let mut odds = vec![0.0; len];
    let mut panels = 2usize;
    f(0.5 * t, &mut row, &mut scratch);
    add(&mut odds, &row);

    let estimate = |ends: &[f64], evens: &[f64], odds: &[f64], panels: usize| -> Vec<f64> {
        let h = t / panels as f64;
        ends.iter()
            .zip(evens)
            .zip(odds)
            .map(|((e, ev), od)| h / 3.0 * (e + 2.0 * ev + 4.0 * od))
            .collect()
    };
    let mut previous = estimate(&ends, &evens, &odds, panels);
    let mut change = f64::INFINITY;

    while panels < MAX_PANELS {
        // Old odd points become even points of the refined grid.
        add(&mut evens, &odds);
        odds.iter_mut().for_each(|v| *v = 0.0);
        panels *= 2;
        let h = t / panels as f64;
        for k in (1..panels).step_by(2) {
            f(k as f64 * h, &mut row, &mut scratch);
            add(&mut odds, &row);
        }
        let current = estimate(&ends, &evens, &odds, panels);
        let mass: f64 = current.iter().sum::<f64>().abs().max(f64::MIN_POSITIVE);
        change = current
            .iter()
            .zip(&previous)
            .map(|(c, p)| (c - p).abs())
            .fold(0.0, f64::max)
            / mass;
        previous = current;
        if panels >= MIN_PANELS && change < QUADRATURE_TOL {
            return Ok(previous);
        }
    }
    Err(Error::Quadrature { achieved: change, panels })
}

fn add(acc: &mut [f64], row: &[f64]) {
    for (a, r) in acc.iter_mut().zip(row) {
        *a += r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge::{rates_at_power, CalibrationConstants, Power};
    use crate::special::log_poisson_pmf;
    use approx::assert_relative_eq;

    fn table_rates(p: f64) -> RateSet {
        rates_at_power(&CalibrationConstants::default(), Power::microwatts(p).unwrap())
    }

    fn poisson(mean: f64, n: usize) -> f64 {
        log_poisson_pmf(mean, n as u64).unwrap().exp()
    }

    #[test]
    fn no_transitions_gives_exact_poisson() {
        let r = RateSet::new(89.5e3, 1.669e3, 0.0, 0.0).unwrap();
        let t = 5e-6;
        let d = distribution_conditional(&r, t, ChargeState::Negative).unwrap();
        for n in 0..=d.n_max() {
            assert_relative_eq!(d.prob(n), poisson(89.5e3 * t, n), max_relative = 1e-12, epsilon = 1e-300);
        }
        assert_relative_eq!(d.mean(), 89.5e3 * t, max_relative = 1e-9);
        let z = distribution_conditional(&r, t, ChargeState::Neutral).unwrap();
        assert_relative_eq!(z.mean(), 1.669e3 * t, max_relative = 1e-9);
    }

    #[test]
    fn normalization_over_grid() {
        for &p in &[1.0, 6.0, 22.0, 53.0, 100.0] {
            for &t in &[1e-6, 5e-6, 9e-6, 127e-6] {
                for s in [ChargeState::Negative, ChargeState::Neutral] {
                    let d = distribution_conditional(&table_rates(p), t, s).unwrap();
                    let mass = d.total_mass();
                    assert!((1.0 - 1e-6..=1.0 + 4.0 * f64::EPSILON).contains(&mass), "P={p} t={t} {s:?}: mass {mass}");
                    assert!(d.pmf().iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }

    #[test]
    fn neutral_start_is_swapped_negative_start() {
        let r = table_rates(100.0);
        let neutral = distribution_conditional(&r, 5e-6, ChargeState::Neutral).unwrap();
        let swapped = distribution_conditional(&r.swapped(), 5e-6, ChargeState::Negative).unwrap();
        assert_eq!(neutral.n_max(), swapped.n_max());
        for n in 0..=neutral.n_max() {
            assert!((neutral.prob(n) - swapped.prob(n)).abs() <= 1e-10);
        }
    }

    // Brute-force oracle: forward Euler-free exact evolution of the joint
    // (charge state, photon count) master equation by uniformization.
    fn master_equation(r: &RateSet, t: f64, start: ChargeState, n_max: usize) -> Vec<f64> {
        // Uniformization with rate Λ ≥ every exit rate.
        let lam = (r.gamma_minus + r.gamma_ion).max(r.gamma_zero + r.gamma_rec) * 1.01 + 1.0;
        let mut state = vec![[0.0f64; 2]; n_max + 2];
        state[0][if start == ChargeState::Negative { 0 } else { 1 }] = 1.0;
        let mut acc = vec![[0.0f64; 2]; n_max + 2];
        let mut weight = (-lam * t).exp();
        let mut k = 0u32;
        let mut total_w = 0.0;
        while total_w < 1.0 - 1e-15 && k < 20_000 {
            for n in 0..state.len() {
                acc[n][0] += weight * state[n][0];
                acc[n][1] += weight * state[n][1];
            }
            total_w += weight;
            // One uniformized jump.
            let mut next = vec![[0.0f64; 2]; n_max + 2];
            for n in 0..state.len() {
                let [m, z] = state[n];
                let up = (n + 1).min(n_max + 1);
                next[up][0] += m * r.gamma_minus / lam;
                next[n][1] += m * r.gamma_ion / lam;
                next[n][0] += m * (1.0 - (r.gamma_minus + r.gamma_ion) / lam);
                next[up][1] += z * r.gamma_zero / lam;
                next[n][0] += z * r.gamma_rec / lam;
                next[n][1] += z * (1.0 - (r.gamma_zero + r.gamma_rec) / lam);
            }
            state = next;
            k += 1;
            weight *= lam * t / k as f64;
        }
        acc.iter().take(n_max + 1).map(|[m, z]| m + z).collect()
    }

    #[test]
    fn matches_master_equation_oracle() {
        for &(p, t) in &[(100.0, 5e-6), (22.0, 127e-6), (6.0, 9e-6), (150.0, 20e-6)] {
            let r = table_rates(p);
            for s in [ChargeState::Negative, ChargeState::Neutral] {
                let d = distribution_conditional(&r, t, s).unwrap();
                let oracle = master_equation(&r, t, s, d.n_max());
                for (n, want) in oracle.iter().enumerate() {
                    assert!(
                        (d.prob(n) - want).abs() < 1e-9,
                        "P={p} t={t} {s:?} n={n}: {} vs {}",
                        d.prob(n),
                        want
                    );
                }
            }
        }
    }

    #[test]
    fn mixture_endpoints() {
        let r = table_rates(100.0);
        let (m, z) = conditional_pair(&r, 5e-6).unwrap();
        assert_eq!(distribution_mixture(&r, 5e-6, 1.0).unwrap().pmf(), m.pmf());
        assert_eq!(distribution_mixture(&r, 5e-6, 0.0).unwrap().pmf(), z.pmf());
        assert!(distribution_mixture(&r, 5e-6, 1.5).is_err());
    }

    #[test]
    fn tail_cases() {
        let r = RateSet::new(0.4475e5, 0.0, 0.0, 0.0).unwrap();
        let d = distribution_conditional(&r, 1e-5, ChargeState::Negative).unwrap();
        assert_eq!(tail_probability(&d, 0), 1.0);
        assert_relative_eq!(tail_probability(&d, 1), 1.0 - (-0.4475f64).exp(), max_relative = 1e-12);
        assert!((1.0 - (-0.4475f64).exp() - 0.3608).abs() < 1e-4);
        assert!(tail_probability(&d, d.n_max() + 5) < 1e-6);
        let mut prev = 1.0;
        for nu in 0..d.n_max() + 3 {
            let t = tail_probability(&d, nu);
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn threshold_for_identical_and_separated() {
        let r = table_rates(50.0);
        let d = distribution_conditional(&r, 5e-6, ChargeState::Negative).unwrap();
        let (nu, f) = optimal_charge_threshold(&d, &d, 0.5);
        assert_eq!(nu, 0);
        assert_relative_eq!(f, 0.5, epsilon = 1e-12);

        let bright = distribution_conditional(&RateSet::new(20.0, 0.0, 0.0, 0.0).unwrap(), 1.0, ChargeState::Negative).unwrap();
        let dark = distribution_conditional(&RateSet::new(0.1, 0.0, 0.0, 0.0).unwrap(), 1.0, ChargeState::Negative).unwrap();
        let (nu, f) = optimal_charge_threshold(&bright, &dark, 0.5);
        // Exhaustive scan with closed-form Poisson tails.
        let exact = |nu: usize| {
            let lo: f64 = (0..nu).map(|n| poisson(20.0, n)).sum();
            let dark_lo: f64 = (0..nu).map(|n| poisson(0.1, n)).sum();
            0.5 * (1.0 - lo) + 0.5 * dark_lo
        };
        let best = (0..60).map(exact).fold(0.0, f64::max);
        assert_relative_eq!(f, best, max_relative = 1e-9);
        assert!(f > 0.99);
        assert!(nu >= 1);
    }

    #[test]
    fn csv_export() {
        let r = RateSet::new(1e5, 0.0, 0.0, 0.0).unwrap();
        let d = distribution_conditional(&r, 1e-5, ChargeState::Negative).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,probability\n0,"));
        assert_eq!(text.lines().count(), d.pmf().len() + 1);
    }

    #[test]
    fn degenerate_window_rejected() {
        assert!(distribution_conditional(&table_rates(1.0), 0.0, ChargeState::Negative).is_err());
    }
}
