//! Spin-readout observables, single-shot SNR, lifetime-based polarization
//! model and coherence curve shapes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::charge::RateSet;
use crate::error::{Error, Result};
use crate::photon::{conditional_pair, tail_probability};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    /// Mean detected photons per shot (Poisson statistics).
    PlPhotons,
    /// Probability of finding NV⁻ after spin-to-charge conversion (binomial).
    SccNvMinusProbability,
}

/// `⟨S_i⟩ = ⟨S̃_i⟩·F + ⟨ε⟩·(1−F)` parameters for one readout technique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinObservableModel {
    pub kind: ObservableKind,
    pub s_tilde_0: f64,
    pub s_tilde_1: f64,
    pub epsilon: f64,
}

impl SpinObservableModel {
    pub fn pl_default() -> Self {
        SpinObservableModel {
            kind: ObservableKind::PlPhotons,
            s_tilde_0: 9.664e-2,
            s_tilde_1: 5.254e-2,
            epsilon: 2.703e-6,
        }
    }

    pub fn scc_default() -> Self {
        SpinObservableModel {
            kind: ObservableKind::SccNvMinusProbability,
            s_tilde_0: 0.1581,
            s_tilde_1: 0.4778,
            epsilon: 0.0530,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.s_tilde_0, self.s_tilde_1, self.epsilon];
        let ok = match self.kind {
            ObservableKind::PlPhotons => vals.iter().all(|v| v.is_finite() && *v >= 0.0),
            ObservableKind::SccNvMinusProbability => vals.iter().all(|v| (0.0..=1.0).contains(v)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("observable values out of range for {:?}: {vals:?}", self.kind)))
        }
    }

    /// Scale the spin contrast about the midpoint of the two NV⁻ observables.
    ///
    /// Models a change in spin polarization without touching the NV⁰ term.
    pub fn with_contrast(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(Error::domain(format!("contrast factor must be >= 0, got {factor}")));
        }
        let mid = 0.5 * (self.s_tilde_0 + self.s_tilde_1);
        let half = 0.5 * (self.s_tilde_0 - self.s_tilde_1) * factor;
        let m = SpinObservableModel { s_tilde_0: mid + half, s_tilde_1: mid - half, ..*self };
        m.validate()?;
        Ok(m)
    }

    /// SNR for an initial NV⁻ fidelity `f`, using the statistics of the observable kind.
    pub fn snr(&self, f: f64) -> Result<f64> {
        let s0 = observable_with_fidelity(self, 0, f)?;
        let s1 = observable_with_fidelity(self, 1, f)?;
        match self.kind {
            ObservableKind::PlPhotons => pl_snr(s0, s1),
            ObservableKind::SccNvMinusProbability => scc_snr(s0, s1),
        }
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must lie in [0, 1], got {v}")))
    }
}

pub fn observable_with_fidelity(model: &SpinObservableModel, spin: u8, f: f64) -> Result<f64> {
    check_fraction("fidelity", f)?;
    let tilde = match spin {
        0 => model.s_tilde_0,
        1 => model.s_tilde_1,
        _ => return Err(Error::domain(format!("spin index must be 0 or 1, got {spin}"))),
    };
    Ok(tilde * f + model.epsilon * (1.0 - f))
}

/// `|s0−s1|/√(s0+s1)` for Poissonian photon counts.
pub fn pl_snr(s0: f64, s1: f64) -> Result<f64> {
    if !(s0 >= 0.0 && s1 >= 0.0) {
        return Err(Error::domain(format!("photon means must be >= 0, got {s0}, {s1}")));
    }
    let var = s0 + s1;
    if var == 0.0 {
        return Err(Error::UndefinedSnr("both photon means are zero"));
    }
    Ok((s0 - s1).abs() / var.sqrt())
}

/// `|b0−b1|/√(b0(1−b0)+b1(1−b1))` for binomial outcomes.
pub fn scc_snr(b0: f64, b1: f64) -> Result<f64> {
    check_fraction("b0", b0)?;
    check_fraction("b1", b1)?;
    let var = b0 * (1.0 - b0) + b1 * (1.0 - b1);
    if var == 0.0 {
        return Err(Error::UndefinedSnr("both binomial variances are zero"));
    }
    Ok((b0 - b1).abs() / var.sqrt())
}

/// Probability that a charge readout of length `t_r` reports NV⁻ (≥ ν photons)
/// when the true NV⁻ population is `b_true`.
pub fn scc_observed_probability(b_true: f64, rates: &RateSet, t_r: f64, nu: usize) -> Result<f64> {
    check_fraction("b_true", b_true)?;
    let (m, z) = conditional_pair(rates, t_r)?;
    Ok(scc_observed_from(b_true, tail_probability(&m, nu), tail_probability(&z, nu)))
}

/// Same as [`scc_observed_probability`] from precomputed conditional tails.
pub fn scc_observed_from(b_true: f64, tail_minus: f64, tail_zero: f64) -> f64 {
    b_true * tail_minus + (1.0 - b_true) * tail_zero
}

/// Ground-state populations `(m_s=+1, m_s=−1, m_s=0)` before and after a π pulse
/// on the 0 ↔ −1 transition.
pub fn populations_before_after(p0: f64, f_pi: f64) -> Result<([f64; 3], [f64; 3])> {
    check_fraction("p0", p0)?;
    check_fraction("f_pi", f_pi)?;
    let side = 0.5 * (1.0 - p0);
    let before = [side, side, p0];
    let after = [side, side * (1.0 - f_pi) + p0 * f_pi, p0 * (1.0 - f_pi) + side * f_pi];
    Ok((before, after))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeBranch {
    Before,
    After,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeModel {
    pub p0: f64,
    #[serde(default = "default_f_pi")]
    pub f_pi: f64,
    #[serde(with = "units::frequency")]
    pub gamma0_opt: f64,
    #[serde(with = "units::frequency")]
    pub gamma1_opt: f64,
    pub amplitude_before: f64,
    pub amplitude_after: f64,
    pub background: f64,
}

fn default_f_pi() -> f64 {
    0.88
}

impl LifetimeModel {
    pub fn validate(&self) -> Result<()> {
        check_fraction("p0", self.p0)?;
        check_fraction("f_pi", self.f_pi)?;
        if !(self.gamma0_opt > 0.0 && self.gamma1_opt > 0.0) || !self.gamma0_opt.is_finite() || !self.gamma1_opt.is_finite() {
            return Err(Error::domain("optical decay rates must be finite and > 0"));
        }
        Ok(())
    }

    /// Noise-free response at time `t` after the excitation pulse; `C` before it.
    pub fn eval(&self, which: LifetimeBranch, t: f64) -> f64 {
        if t < 0.0 {
            return self.background;
        }
        let (before, after) = populations_before_after(self.p0, self.f_pi).unwrap_or(([0.0; 3], [0.0; 3]));
        let (pops, amp) = match which {
            LifetimeBranch::Before => (before, self.amplitude_before),
            LifetimeBranch::After => (after, self.amplitude_after),
        };
        amp * (pops[2] * (-self.gamma0_opt * t).exp() + (pops[0] + pops[1]) * (-self.gamma1_opt * t).exp())
            + self.background
    }
}

pub fn lifetime_response(model: &LifetimeModel, which: LifetimeBranch, t: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    if let Some(bad) = t.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::domain(format!("lifetime times must be >= 0, got {bad}")));
    }
    Ok(t.iter().map(|&x| model.eval(which, x)).collect())
}

/// Uniformly sampled values: `values[i]` is the sample at `start + i·step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampled {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Sampled {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.start + i as f64 * self.step)
    }
}

/// Sampled normalized Gaussian kernel centred on zero, spanning ±`width`·σ.
pub fn gaussian_irf(sigma: f64, step: f64, width: f64) -> Result<Sampled> {
    if !(sigma > 0.0 && step > 0.0 && width > 0.0) {
        return Err(Error::domain("IRF sigma, step and width must be > 0"));
    }
    let half = (width * sigma / step).ceil() as i64;
    let mut values: Vec<f64> = (-half..=half)
        .map(|k| {
            let x = k as f64 * step / sigma;
            (-0.5 * x * x).exp()
        })
        .collect();
    let norm: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(Sampled { start: -(half as f64) * step, step, values })
}

/// Discrete convolution of `signal` with `irf`, reported on the signal grid.
///
/// The kernel must share the signal's sampling step and sum to 1; its start
/// must sit on the same lattice. Samples beyond either end of the signal take
/// the nearest edge value.
pub fn convolve_with_irf(signal: &Sampled, irf: &Sampled) -> Result<Sampled> {
    if signal.values.is_empty() || irf.values.is_empty() {
        return Err(Error::domain("signal and kernel must be non-empty"));
    }
    if !(signal.step > 0.0) || ((signal.step - irf.step).abs() > 1e-9 * signal.step) {
        return Err(Error::domain(format!(
            "sampling intervals differ: signal {} s, kernel {} s",
            signal.step, irf.step
        )));
    }
    let shift = irf.start / irf.step;
    let offset = shift.round();
    if (shift - offset).abs() > 1e-6 {
        return Err(Error::domain("kernel start is not on the signal sampling lattice"));
    }
    let sum: f64 = irf.values.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("kernel must sum to 1, got {sum}")));
    }
    let offset = offset as i64;
    let last = signal.values.len() as i64 - 1;
    let values = (0..=last)
        .map(|i| {
            irf.values
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let j = (i - k as i64 - offset).clamp(0, last);
                    h * signal.values[j as usize]
                })
                .sum()
        })
        .collect();
    Ok(Sampled { start: signal.start, step: signal.step, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoherenceModel {
    /// `C + A·exp(−(τ/T₂*)²)·Σ_{k∈{−1,0,1}} cos(2π(δ−kA∥)τ + φ)`
    Ramsey {
        offset: f64,
        amplitude: f64,
        #[serde(with = "units::time")]
        t2_star: f64,
        #[serde(with = "units::frequency")]
        detuning: f64,
        #[serde(with = "units::frequency")]
        hyperfine: f64,
        phase: f64,
    },
    /// `C + A·exp(−(τ/T₂)ⁿ)`
    Hahn {
        offset: f64,
        amplitude: f64,
        #[serde(with = "units::time")]
        t2: f64,
        stretch: f64,
    },
    /// `C + A·exp(−τ/T₁)`
    T1 {
        offset: f64,
        amplitude: f64,
        #[serde(with = "units::time")]
        t1: f64,
    },
}

impl CoherenceModel {
    pub fn validate(&self) -> Result<()> {
        let (scale, stretch) = match *self {
            CoherenceModel::Ramsey { t2_star, .. } => (t2_star, 1.0),
            CoherenceModel::Hahn { t2, stretch, .. } => (t2, stretch),
            CoherenceModel::T1 { t1, .. } => (t1, 1.0),
        };
        if !(scale > 0.0) || !(stretch > 0.0) {
            return Err(Error::domain("coherence timescale and stretch must be > 0"));
        }
        Ok(())
    }
}

pub fn coherence_model_eval(model: &CoherenceModel, tau: f64) -> f64 {
    match *model {
        CoherenceModel::Ramsey { offset, amplitude, t2_star, detuning, hyperfine, phase } => {
            let env = (-(tau / t2_star).powi(2)).exp();
            let osc: f64 = (-1..=1)
                .map(|k| (2.0 * PI * (detuning - k as f64 * hyperfine) * tau + phase).cos())
                .sum();
            offset + amplitude * env * osc
        }
        CoherenceModel::Hahn { offset, amplitude, t2, stretch } => {
            offset + amplitude * (-(tau / t2).powf(stretch)).exp()
        }
        CoherenceModel::T1 { offset, amplitude, t1 } => offset + amplitude * (-tau / t1).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge::{rates_at_power, CalibrationConstants, Power};
    use approx::assert_relative_eq;
    use crate::photon::mix;
    use proptest::prelude::*;

    fn mixture_tail(b: f64, rates: &RateSet, t_r: f64, nu: usize) -> Result<f64> {
        let (m, z) = conditional_pair(rates, t_r)?;
        Ok(tail_probability(&mix(&m, &z, b), nu))
    }

    #[test]
    fn observable_endpoints_and_example() {
        let pl = SpinObservableModel::pl_default();
        assert_eq!(observable_with_fidelity(&pl, 0, 1.0).unwrap(), pl.s_tilde_0);
        assert_eq!(observable_with_fidelity(&pl, 1, 0.0).unwrap(), pl.epsilon);
        let v = observable_with_fidelity(&pl, 0, 0.75).unwrap();
        assert_relative_eq!(v, 0.09664 * 0.75 + 2.703e-6 * 0.25, max_relative = 1e-15);
        assert!((v - 0.07248).abs() < 1e-5);
        assert!(observable_with_fidelity(&pl, 2, 0.5).is_err());
        assert!(observable_with_fidelity(&pl, 0, 1.1).is_err());
    }

    #[test]
    fn snr_values() {
        assert_eq!(pl_snr(0.3, 0.3).unwrap(), 0.0);
        assert!((pl_snr(0.09664, 0.05254).unwrap() - 0.114).abs() < 5e-4);
        assert!(matches!(pl_snr(0.0, 0.0), Err(Error::UndefinedSnr(_))));
        assert_eq!(scc_snr(0.4, 0.4).unwrap(), 0.0);
        assert!((scc_snr(0.1581, 0.4778).unwrap() - 0.52).abs() < 0.01);
        assert!(matches!(scc_snr(0.0, 1.0), Err(Error::UndefinedSnr(_))));
    }

    #[test]
    fn snr_non_decreasing_in_fidelity() {
        for model in [SpinObservableModel::pl_default(), SpinObservableModel::scc_default()] {
            let mut last = 0.0;
            for i in 0..=200 {
                let s = model.snr(i as f64 / 200.0).unwrap();
                assert!(s >= last - 1e-15, "{model:?} at {i}");
                last = s;
            }
        }
    }

    #[test]
    fn contrast_knob() {
        let m = SpinObservableModel::pl_default();
        let same = m.with_contrast(1.0).unwrap();
        assert_relative_eq!(same.s_tilde_0, m.s_tilde_0, max_relative = 1e-14);
        let flat = m.with_contrast(0.0).unwrap();
        assert_eq!(flat.snr(1.0).unwrap(), 0.0);
        assert!(m.with_contrast(1.07).unwrap().snr(0.9).unwrap() > m.snr(0.9).unwrap());
    }

    #[test]
    fn scc_observation_limits() {
        let rates = RateSet::new(1e8, 0.0, 0.0, 0.0).unwrap();
        assert_relative_eq!(scc_observed_probability(0.37, &rates, 1e-6, 1).unwrap(), 0.37, max_relative = 1e-12);
        let cal = CalibrationConstants::default();
        let r = rates_at_power(&cal, Power::microwatts(20.0).unwrap());
        let (m, z) = conditional_pair(&r, 100e-6).unwrap();
        assert_relative_eq!(
            scc_observed_probability(1.0, &r, 100e-6, 4).unwrap(),
            tail_probability(&m, 4),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            scc_observed_probability(0.0, &r, 100e-6, 4).unwrap(),
            tail_probability(&z, 4),
            max_relative = 1e-14
        );
        let direct = mixture_tail(0.3, &r, 100e-6, 4).unwrap();
        assert_relative_eq!(scc_observed_probability(0.3, &r, 100e-6, 4).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn population_vectors() {
        let (_, after) = populations_before_after(1.0, 1.0).unwrap();
        assert_eq!(after, [0.0, 1.0, 0.0]);
        let (b, a) = populations_before_after(0.7, 0.0).unwrap();
        assert_eq!(b, a);
        let (_, a) = populations_before_after(0.915, 0.88).unwrap();
        assert!((a[2] - 0.1472).abs() < 1e-4);
    }

    fn lifetime(p0: f64) -> LifetimeModel {
        LifetimeModel {
            p0,
            f_pi: 0.88,
            gamma0_opt: 1.0 / 12.5e-9,
            gamma1_opt: 1.0 / 7.48e-9,
            amplitude_before: 1000.0,
            amplitude_after: 950.0,
            background: 3.0,
        }
    }

    #[test]
    fn lifetime_limits() {
        let m = lifetime(0.915);
        let v = lifetime_response(&m, LifetimeBranch::Before, &[0.0]).unwrap();
        assert_relative_eq!(v[0], 1003.0, max_relative = 1e-14);
        let single = LifetimeModel { gamma1_opt: m.gamma0_opt, ..m };
        for p in [0.2, 0.9] {
            let s = LifetimeModel { p0: p, ..single };
            let y = lifetime_response(&s, LifetimeBranch::After, &[5e-9]).unwrap()[0];
            assert_relative_eq!(y, 950.0 * (-5e-9 * m.gamma0_opt).exp() + 3.0, max_relative = 1e-13);
        }
        assert!(lifetime_response(&m, LifetimeBranch::Before, &[-1e-9]).is_err());
    }

    #[test]
    fn convolution_identity_and_constant() {
        let sig = Sampled { start: 0.0, step: 1e-10, values: (0..50).map(|i| (i as f64).sin()).collect() };
        let delta = Sampled { start: 0.0, step: 1e-10, values: vec![1.0] };
        assert_eq!(convolve_with_irf(&sig, &delta).unwrap(), sig);
        let flat = Sampled { start: 0.0, step: 1e-10, values: vec![2.5; 80] };
        let g = gaussian_irf(1e-9, 1e-10, 5.0).unwrap();
        for v in convolve_with_irf(&flat, &g).unwrap().values {
            assert_relative_eq!(v, 2.5, max_relative = 1e-12);
        }
        let bad = Sampled { step: 2e-10, ..g.clone() };
        assert!(convolve_with_irf(&flat, &bad).is_err());
    }

    #[test]
    fn convolution_preserves_interior_integral() {
        let step = 1e-10;
        let g = gaussian_irf(1e-9, step, 6.0).unwrap();
        // Compact bump well inside the grid.
        let values: Vec<f64> = (0..600)
            .map(|i| {
                let x = (i as f64 - 300.0) / 40.0;
                (-x * x).exp()
            })
            .collect();
        let sig = Sampled { start: 0.0, step, values };
        let out = convolve_with_irf(&sig, &g).unwrap();
        let a: f64 = sig.values.iter().sum();
        let b: f64 = out.values.iter().sum();
        assert_relative_eq!(a, b, max_relative = 1e-9);
    }

    #[test]
    fn coherence_shapes() {
        let r = CoherenceModel::Ramsey {
            offset: 0.1,
            amplitude: 0.2,
            t2_star: 2.24e-6,
            detuning: 5e6,
            hyperfine: 2.16e6,
            phase: 0.0,
        };
        assert_relative_eq!(coherence_model_eval(&r, 0.0), 0.1 + 3.0 * 0.2, max_relative = 1e-15);
        let h = CoherenceModel::Hahn { offset: 0.5, amplitude: 0.3, t2: 852e-6, stretch: 2.85 };
        assert_relative_eq!(coherence_model_eval(&h, 852e-6), 0.5 + 0.3 / std::f64::consts::E, max_relative = 1e-14);
        let t = CoherenceModel::T1 { offset: 0.0, amplitude: 1.0, t1: 5.3e-3 };
        assert_relative_eq!(coherence_model_eval(&t, 5.3e-3), (-1.0f64).exp(), max_relative = 1e-14);
        assert!(CoherenceModel::Hahn { offset: 0.0, amplitude: 1.0, t2: 1.0, stretch: 0.0 }.validate().is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let h = CoherenceModel::Hahn { offset: 0.5, amplitude: 0.3, t2: 852e-6, stretch: 2.85 };
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.contains("\"kind\":\"hahn\""));
        assert_eq!(serde_json::from_str::<CoherenceModel>(&s).unwrap(), h);
        let l = lifetime(0.944);
        let back: LifetimeModel = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
        assert_relative_eq!(back.gamma0_opt, l.gamma0_opt, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn populations_sum_to_one(p0 in 0.0f64..=1.0, f in 0.0f64..=1.0) {
            let (b, a) = populations_before_after(p0, f).unwrap();
            prop_assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }

        #[test]
        fn pl_snr_homogeneous(s0 in 0.0f64..10.0, s1 in 0.001f64..10.0, k in 0.01f64..100.0) {
            let base = pl_snr(s0, s1).unwrap();
            let scaled = pl_snr(k * s0, k * s1).unwrap();
            prop_assert!((scaled - k.sqrt() * base).abs() <= 1e-12 * (1.0 + scaled));
        }

        #[test]
        fn observable_affine(f in 0.0f64..=1.0, g in 0.0f64..=1.0) {
            let m = SpinObservableModel::scc_default();
            let mid = observable_with_fidelity(&m, 1, 0.5 * (f + g)).unwrap();
            let avg = 0.5 * (observable_with_fidelity(&m, 1, f).unwrap() + observable_with_fidelity(&m, 1, g).unwrap());
            prop_assert!((mid - avg).abs() < 1e-15);
        }
    }
}
