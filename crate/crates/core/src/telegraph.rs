//! Monte Carlo realization of the two-state charge telegraph process with
//! state-dependent Poisson photon emission.
//!
//! This module shares no code with [`crate::photon`]; it exists to check the
//! analytic distributions empirically.
//!
//! Every shot draws from its own `ChaCha8Rng`, seeded with
//! [`derive_seed`]`(master, shot_index)`, so histograms are identical whether
//! shots run sequentially or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge::RateSet;
use crate::error::{Error, Result};
use crate::photon::{ChargeState, InitialCharge};

/// Per-stream seed: SplitMix64 finalizer applied to `master + (index+1)·φ`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// Exponential waiting time; infinite for a zero rate.
pub fn draw_exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    // 1 - u lies in (0, 1], keeping the logarithm finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

pub fn draw_poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

pub fn emission_rate(rates: &RateSet, s: ChargeState) -> f64 {
    match s {
        ChargeState::Negative => rates.gamma_minus,
        ChargeState::Neutral => rates.gamma_zero,
    }
}

pub fn exit_rate(rates: &RateSet, s: ChargeState) -> f64 {
    match s {
        ChargeState::Negative => rates.gamma_ion,
        ChargeState::Neutral => rates.gamma_rec,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub state: ChargeState,
    /// Dwell time in seconds.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonRecord {
    /// Photon count per segment.
    Counts(Vec<u64>),
    /// Arrival times in seconds from the start of the trajectory.
    Timestamps(Vec<f64>),
}

impl PhotonRecord {
    pub fn total(&self) -> u64 {
        match self {
            PhotonRecord::Counts(c) => c.iter().sum(),
            PhotonRecord::Timestamps(t) => t.len() as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonMode {
    Counts,
    Timestamps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub segments: Vec<Segment>,
    pub photons: PhotonRecord,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.dwell).sum()
    }

    pub fn transitions(&self) -> usize {
        self.segments.len() - 1
    }

    /// Time of the first charge transition, if any occurred.
    pub fn first_transition(&self) -> Option<f64> {
        (self.segments.len() > 1).then(|| self.segments[0].dwell)
    }

    pub fn time_in(&self, s: ChargeState) -> f64 {
        self.segments.iter().filter(|g| g.state == s).map(|g| g.dwell).sum()
    }
}

pub fn simulate_trajectory(
    rates: &RateSet,
    duration: f64,
    initial: ChargeState,
    seed: u64,
) -> Result<TrajectoryRecord> {
    simulate_trajectory_with(rates, duration, initial, seed, PhotonMode::Counts)
}

pub fn simulate_trajectory_with(
    rates: &RateSet,
    duration: f64,
    initial: ChargeState,
    seed: u64,
    mode: PhotonMode,
) -> Result<TrajectoryRecord> {
    rates.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!("trajectory duration must be > 0, got {duration}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (segments, photons) = sample_path(&mut rng, rates, duration, initial, mode);
    Ok(TrajectoryRecord { segments, photons, seed })
}

fn sample_path<R: Rng + ?Sized>(
    rng: &mut R,
    rates: &RateSet,
    duration: f64,
    initial: ChargeState,
    mode: PhotonMode,
) -> (Vec<Segment>, PhotonRecord) {
    let mut segments = Vec::new();
    let mut counts = Vec::new();
    let mut stamps = Vec::new();
    let mut state = initial;
    let mut elapsed = 0.0;
    loop {
        let dwell = draw_exponential(rng, exit_rate(rates, state));
        let remaining = duration - elapsed;
        let last = dwell >= remaining;
        let dwell = if last { remaining } else { dwell };
        let gamma = emission_rate(rates, state);
        match mode {
            PhotonMode::Counts => counts.push(draw_poisson(rng, gamma * dwell)),
            PhotonMode::Timestamps => {
                let mut t = draw_exponential(rng, gamma);
                while t < dwell {
                    stamps.push(elapsed + t);
                    t += draw_exponential(rng, gamma);
                }
            }
        }
        segments.push(Segment { state, dwell });
        if last {
            break;
        }
        elapsed += dwell;
        state = state.other();
    }
    let photons = match mode {
        PhotonMode::Counts => PhotonRecord::Counts(counts),
        PhotonMode::Timestamps => PhotonRecord::Timestamps(stamps),
    };
    (segments, photons)
}

// Photon total of one window without recording the path.
fn sample_count<R: Rng + ?Sized>(rng: &mut R, rates: &RateSet, duration: f64, initial: ChargeState) -> u64 {
    let mut state = initial;
    let mut remaining = duration;
    let mut total = 0;
    loop {
        let dwell = draw_exponential(rng, exit_rate(rates, state));
        let span = dwell.min(remaining);
        total += draw_poisson(rng, emission_rate(rates, state) * span);
        if dwell >= remaining {
            return total;
        }
        remaining -= dwell;
        state = state.other();
    }
}

/// Histogram of photon counts from independent windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    /// `counts[n]` = number of shots with exactly `n` photons.
    pub counts: Vec<u64>,
    pub shots: u64,
    pub seed: u64,
}

impl EmpiricalDistribution {
    pub fn pmf(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.shots as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum::<f64>() / self.shots as f64
    }
}

pub fn empirical_distribution(
    rates: &RateSet,
    duration: f64,
    initial: InitialCharge,
    shots: u64,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    rates.validate()?;
    if shots == 0 {
        return Err(Error::domain("at least one shot is required"));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::domain(format!("readout duration must be > 0, got {duration}")));
    }
    if let InitialCharge::Mixture(p) = initial {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("NV- population must lie in [0, 1], got {p}")));
        }
    }
    let counts = (0..shots)
        .into_par_iter()
        .fold(Vec::new, |mut hist: Vec<u64>, shot| {
            let mut rng = stream(seed, shot);
            let start = match initial {
                InitialCharge::State(s) => s,
                InitialCharge::Mixture(p) => {
                    if rng.random::<f64>() < p {
                        ChargeState::Negative
                    } else {
                        ChargeState::Neutral
                    }
                }
            };
            let n = sample_count(&mut rng, rates, duration, start) as usize;
            if hist.len() <= n {
                hist.resize(n + 1, 0);
            }
            hist[n] += 1;
            hist
        })
        .reduce(Vec::new, merge_histograms);
    Ok(EmpiricalDistribution { counts, shots, seed })
}

fn merge_histograms(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

/// `½ Σ |a(n) − b(n)|`, entries missing from the shorter slice count as zero.
pub fn total_variation_distance(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let s: f64 = (0..len)
        .map(|n| (a.get(n).copied().unwrap_or(0.0) - b.get(n).copied().unwrap_or(0.0)).abs())
        .sum();
    (0.5 * s).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge::{rates_at_power, CalibrationConstants, Power};
    use approx::assert_relative_eq;

    fn table_rates(p: f64) -> RateSet {
        rates_at_power(&CalibrationConstants::default(), Power::microwatts(p).unwrap())
    }

    fn poisson_pmf(mean: f64, n: usize) -> f64 {
        let mut p = (-mean).exp();
        for k in 1..=n {
            p *= mean / k as f64;
        }
        p
    }

    // Asymptotic Kolmogorov survival function Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}.
    fn kolmogorov_q(lambda: f64) -> f64 {
        if lambda < 0.2 {
            return 1.0;
        }
        let mut s = 0.0;
        for k in 1..200 {
            let k = k as f64;
            s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        s.clamp(0.0, 1.0)
    }

    #[test]
    fn frozen_rates_give_single_segment() {
        let r = RateSet::new(1e5, 1e3, 0.0, 0.0).unwrap();
        let t = simulate_trajectory(&r, 5e-6, ChargeState::Negative, 3).unwrap();
        assert_eq!(t.segments.len(), 1);
        assert_eq!(t.segments[0].state, ChargeState::Negative);
        assert_eq!(t.segments[0].dwell, 5e-6);
    }

    #[test]
    fn identical_seeds_identical_records() {
        let r = table_rates(100.0);
        for mode in [PhotonMode::Counts, PhotonMode::Timestamps] {
            let a = simulate_trajectory_with(&r, 50e-6, ChargeState::Negative, 99, mode).unwrap();
            let b = simulate_trajectory_with(&r, 50e-6, ChargeState::Negative, 99, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn segments_alternate_and_cover_duration() {
        let r = table_rates(150.0);
        for seed in 0..200 {
            let t = simulate_trajectory(&r, 40e-6, ChargeState::Neutral, seed).unwrap();
            assert!(t.segments.iter().all(|s| s.dwell > 0.0));
            for w in t.segments.windows(2) {
                assert_ne!(w[0].state, w[1].state);
            }
            assert_relative_eq!(t.duration(), 40e-6, max_relative = 1e-12);
        }
    }

    #[test]
    fn first_transition_is_exponential() {
        // KS test on the first ionization time, censored at a long horizon.
        let r = table_rates(100.0);
        let horizon = 1e-3;
        let mut times: Vec<f64> = (0..100_000u64)
            .map(|i| {
                simulate_trajectory(&r, horizon, ChargeState::Negative, derive_seed(7, i))
                    .unwrap()
                    .first_transition()
                    .unwrap()
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let n = times.len() as f64;
        let d = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let cdf = 1.0 - (-r.gamma_ion * t).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        let p = kolmogorov_q(d * n.sqrt());
        // Statistical test: fails by chance with probability 0.001.
        assert!(p > 0.001, "KS p-value {p} (D = {d})");
    }

    #[test]
    fn ionization_probability_in_window() {
        let r = table_rates(100.0);
        let t = 5e-6;
        let shots = 100_000u64;
        let ionized = (0..shots)
            .filter(|&i| {
                simulate_trajectory(&r, t, ChargeState::Negative, derive_seed(11, i))
                    .unwrap()
                    .transitions()
                    > 0
            })
            .count() as f64
            / shots as f64;
        let expect = 1.0 - (-r.gamma_ion * t).exp();
        let sigma = (expect * (1.0 - expect) / shots as f64).sqrt();
        assert!((ionized - expect).abs() < 4.0 * sigma, "{ionized} vs {expect}");
    }

    #[test]
    fn long_run_occupancy_matches_steady_state() {
        let r = RateSet::new(1.0, 0.0, 2e3, 1e3).unwrap();
        let horizon = 2.0;
        let tr = simulate_trajectory(&r, horizon, ChargeState::Negative, 5).unwrap();
        let frac = tr.time_in(ChargeState::Negative) / horizon;
        let expect = crate::charge::steady_state_population(&r).unwrap();
        // Correlation time 1/(Γ_ion+Γ_rec); effective independent samples ≈ horizon·(Γ_ion+Γ_rec)/2.
        let n_eff = horizon * (r.gamma_ion + r.gamma_rec) / 2.0;
        let sigma = (expect * (1.0 - expect) / n_eff).sqrt();
        assert!((frac - expect).abs() < 3.0 * sigma, "{frac} vs {expect} (σ {sigma})");
    }

    #[test]
    fn frozen_empirical_matches_poisson() {
        let lambda = 2.5;
        let r = RateSet::new(lambda / 1e-5, 0.0, 0.0, 0.0).unwrap();
        let shots = 50_000;
        let e = empirical_distribution(&r, 1e-5, InitialCharge::State(ChargeState::Negative), shots, 1).unwrap();
        assert_eq!(e.counts.iter().sum::<u64>(), shots);
        for (n, &c) in e.counts.iter().enumerate() {
            let p = poisson_pmf(lambda, n);
            let sigma = (p * (1.0 - p) / shots as f64).sqrt();
            assert!((c as f64 / shots as f64 - p).abs() < 5.0 * sigma + 1e-4, "n={n}");
        }
    }

    #[test]
    fn single_shot_histogram() {
        let r = table_rates(50.0);
        let e = empirical_distribution(&r, 5e-6, InitialCharge::Mixture(0.75), 1, 4).unwrap();
        assert_eq!(e.shots, 1);
        assert_eq!(e.counts.iter().sum::<u64>(), 1);
        assert!(empirical_distribution(&r, 5e-6, InitialCharge::Mixture(0.75), 0, 4).is_err());
    }

    #[test]
    fn empirical_is_deterministic() {
        let r = table_rates(100.0);
        let a = empirical_distribution(&r, 5e-6, InitialCharge::Mixture(0.75), 20_000, 42).unwrap();
        let b = empirical_distribution(&r, 5e-6, InitialCharge::Mixture(0.75), 20_000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tv_distance_cases() {
        let d = [0.2, 0.3, 0.5];
        assert_eq!(total_variation_distance(&d, &d), 0.0);
        assert_eq!(total_variation_distance(&[1.0], &[0.0, 1.0]), 1.0);

        let p1: Vec<f64> = (0..60).map(|n| poisson_pmf(1.0, n)).collect();
        let p2: Vec<f64> = (0..60).map(|n| poisson_pmf(2.0, n)).collect();
        // Closed form: the densities cross between n=1 and n=2, so
        // TV = P₁(N ≤ 1) − P₂(N ≤ 1) = 2e⁻¹ − 3e⁻².
        let exact = 2.0 * (-1f64).exp() - 3.0 * (-2f64).exp();
        assert_relative_eq!(total_variation_distance(&p1, &p2), exact, max_relative = 1e-12);
    }
}
