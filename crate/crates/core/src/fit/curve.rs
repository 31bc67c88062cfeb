//! Weighted least-squares fits of coherence and lifetime curves.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{run_fit, FitResult, ObjectiveKind, Param, SimplexOptions, Transform};
use crate::error::{Error, Result};
use crate::spin::{coherence_model_eval, convolve_with_irf, gaussian_irf, CoherenceModel, LifetimeBranch, LifetimeModel, Sampled};
use crate::units;

const FISHER_STEP: f64 = 1e-4;
const IRF_WIDTH: f64 = 5.0;

/// Samples `(x, y ± sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl CurveData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() != sigma.len() {
            return Err(Error::domain("x, y and sigma must have equal length"));
        }
        if x.is_empty() {
            return Err(Error::domain("curve has no samples"));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("sigma must be finite and > 0, got {s}")));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::domain("curve samples must be finite"));
        }
        Ok(CurveData { x, y, sigma })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Read `x,y[,sigma]` CSV; a missing sigma column means unit weights.
    pub fn from_csv_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let with_sigma = match names.as_slice() {
            ["x", "y"] => false,
            ["x", "y", "sigma"] => true,
            _ => {
                return Err(Error::Parse { line: 1, msg: format!("expected header `x,y` or `x,y,sigma`, found `{}`", names.join(",")) })
            }
        };
        let (mut x, mut y, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |i: usize| -> Result<f64> {
                let v: f64 = rec[i]
                    .parse()
                    .map_err(|_| Error::Parse { line, msg: format!("`{}` is not a number", &rec[i]) })?;
                if !v.is_finite() {
                    return Err(Error::Parse { line, msg: format!("`{}` is not finite", &rec[i]) });
                }
                Ok(v)
            };
            x.push(num(0)?);
            y.push(num(1)?);
            let sig = if with_sigma { num(2)? } else { 1.0 };
            if sig <= 0.0 {
                return Err(Error::Parse { line, msg: format!("sigma must be > 0, got {sig}") });
            }
            s.push(sig);
        }
        if x.is_empty() {
            return Err(Error::Parse { line: 1, msg: "curve contains no samples".into() });
        }
        Self::new(x, y, s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y", "sigma"])?;
        for i in 0..self.len() {
            wtr.write_record([self.x[i].to_string(), self.y[i].to_string(), self.sigma[i].to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn chi_square(&self, model: impl Fn(f64) -> f64) -> f64 {
        (0..self.len()).map(|i| ((self.y[i] - model(self.x[i])) / self.sigma[i]).powi(2)).sum()
    }

    fn uniform_step(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::domain("a convolved fit needs at least two samples"));
        }
        let step = self.x[1] - self.x[0];
        let ok = step > 0.0 && self.x.windows(2).all(|w| ((w[1] - w[0]) - step).abs() <= 1e-6 * step);
        if ok {
            Ok(step)
        } else {
            Err(Error::domain("a convolved fit needs uniformly spaced, increasing x"))
        }
    }
}

/// Before/after pulsed-lifetime transients with an optional instrument response.
#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeFitInput {
    pub before: CurveData,
    pub after: CurveData,
    pub irf: Option<Sampled>,
}

/// Serializable description of a curve fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveFitSpec {
    Coherence {
        init: CoherenceModel,
        #[serde(default)]
        fixed: Vec<String>,
    },
    LifetimeJoint {
        init: LifetimeModel,
        /// Gaussian IRF width in seconds; omitted means no convolution.
        #[serde(default, skip_serializing_if = "Option::is_none", with = "units::opt_time")]
        irf_sigma: Option<f64>,
        #[serde(default = "default_lifetime_fixed")]
        fixed: Vec<String>,
    },
}

fn default_lifetime_fixed() -> Vec<String> {
    vec!["f_pi".into()]
}

/// Dispatch on `spec`: one curve for coherence fits, two (before, after) for lifetime.
pub fn fit_curve(spec: &CurveFitSpec, data: &[CurveData], opts: &SimplexOptions) -> Result<FitResult> {
    match spec {
        CurveFitSpec::Coherence { init, fixed } => {
            let [d] = data else {
                return Err(Error::domain(format!("a coherence fit takes one curve, got {}", data.len())));
            };
            fit_coherence(d, init, &names(fixed), opts)
        }
        CurveFitSpec::LifetimeJoint { init, irf_sigma, fixed } => {
            let [before, after] = data else {
                return Err(Error::domain(format!("a lifetime fit takes two curves, got {}", data.len())));
            };
            let irf = match irf_sigma {
                Some(s) => Some(gaussian_irf(*s, before.uniform_step()?, IRF_WIDTH)?),
                None => None,
            };
            let input = LifetimeFitInput { before: before.clone(), after: after.clone(), irf };
            fit_lifetime_joint(&input, init, &names(fixed), opts)
        }
    }
}

fn names(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn check_fixed(fixed: &[&str], known: &[&str]) -> Result<()> {
    match fixed.iter().find(|f| !known.contains(f)) {
        Some(f) => Err(Error::domain(format!("unknown parameter `{f}`; expected one of {known:?}"))),
        None => Ok(()),
    }
}

fn coherence_params(m: &CoherenceModel) -> Vec<(&'static str, f64, Transform)> {
    let lin = Transform::linear_for;
    match *m {
        CoherenceModel::Ramsey { offset, amplitude, t2_star, detuning, hyperfine, phase } => vec![
            ("offset", offset, lin(offset)),
            ("amplitude", amplitude, lin(amplitude)),
            ("t2_star", t2_star, Transform::Log),
            ("detuning", detuning, lin(detuning)),
            ("hyperfine", hyperfine, lin(hyperfine)),
            ("phase", phase, Transform::Linear { scale: 1.0 }),
        ],
        CoherenceModel::Hahn { offset, amplitude, t2, stretch } => vec![
            ("offset", offset, lin(offset)),
            ("amplitude", amplitude, lin(amplitude)),
            ("t2", t2, Transform::Log),
            ("stretch", stretch, Transform::Log),
        ],
        CoherenceModel::T1 { offset, amplitude, t1 } => {
            vec![("offset", offset, lin(offset)), ("amplitude", amplitude, lin(amplitude)), ("t1", t1, Transform::Log)]
        }
    }
}

fn coherence_from(kind: &CoherenceModel, v: &[f64]) -> CoherenceModel {
    match kind {
        CoherenceModel::Ramsey { .. } => CoherenceModel::Ramsey {
            offset: v[0],
            amplitude: v[1],
            t2_star: v[2],
            detuning: v[3],
            hyperfine: v[4],
            phase: v[5],
        },
        CoherenceModel::Hahn { .. } => CoherenceModel::Hahn { offset: v[0], amplitude: v[1], t2: v[2], stretch: v[3] },
        CoherenceModel::T1 { .. } => CoherenceModel::T1 { offset: v[0], amplitude: v[1], t1: v[2] },
    }
}

pub fn fit_coherence(data: &CurveData, init: &CoherenceModel, fixed: &[&str], opts: &SimplexOptions) -> Result<FitResult> {
    init.validate()?;
    let spec = coherence_params(init);
    let known: Vec<&str> = spec.iter().map(|s| s.0).collect();
    check_fixed(fixed, &known)?;
    let free = spec.iter().filter(|s| !fixed.contains(&s.0)).count();
    if data.len() < free + 2 {
        return Err(Error::domain(format!("{} samples are too few for {free} free parameters", data.len())));
    }
    let params = spec
        .iter()
        .map(|&(name, v, t)| Param::new(name, v, !fixed.contains(&name), t))
        .collect();
    let objective = |v: &[f64]| {
        let m = coherence_from(init, v);
        data.chi_square(|x| coherence_model_eval(&m, x))
    };
    Ok(run_fit(params, objective, ObjectiveKind::ChiSquare, opts, FISHER_STEP))
}

const LIFETIME_NAMES: [&str; 7] =
    ["p0", "f_pi", "gamma0_opt", "gamma1_opt", "amplitude_before", "amplitude_after", "background"];

fn lifetime_from(v: &[f64]) -> LifetimeModel {
    LifetimeModel {
        p0: v[0],
        f_pi: v[1],
        gamma0_opt: v[2],
        gamma1_opt: v[3],
        amplitude_before: v[4],
        amplitude_after: v[5],
        background: v[6],
    }
}

/// Model values on the sample times, convolved with `irf` when present.
fn lifetime_curve(m: &LifetimeModel, which: LifetimeBranch, data: &CurveData, irf: Option<&Sampled>) -> Result<Vec<f64>> {
    let Some(k) = irf else {
        return Ok(data.x.iter().map(|&t| m.eval(which, t)).collect());
    };
    let step = data.uniform_step()?;
    let pad = k.values.len();
    let start = data.x[0] - pad as f64 * step;
    let values = (0..data.len() + pad).map(|i| m.eval(which, start + i as f64 * step)).collect();
    let out = convolve_with_irf(&Sampled { start, step, values }, k)?;
    Ok(out.values[pad..].to_vec())
}

/// Joint fit of before/after transients sharing `(p0, f_pi, γ₀, γ₁, C)` with
/// separate amplitudes.
pub fn fit_lifetime_joint(
    input: &LifetimeFitInput,
    init: &LifetimeModel,
    fixed: &[&str],
    opts: &SimplexOptions,
) -> Result<FitResult> {
    init.validate()?;
    check_fixed(fixed, &LIFETIME_NAMES)?;
    let free = LIFETIME_NAMES.iter().filter(|n| !fixed.contains(n)).count();
    if input.before.len() + input.after.len() < free + 2 {
        return Err(Error::domain("too few samples for the free lifetime parameters"));
    }
    if let Some(k) = &input.irf {
        for d in [&input.before, &input.after] {
            let step = d.uniform_step()?;
            if (step - k.step).abs() > 1e-9 * step {
                return Err(Error::domain(format!("IRF step {} s differs from sample step {step} s", k.step)));
            }
        }
    }
    let init_v = [
        init.p0,
        init.f_pi,
        init.gamma0_opt,
        init.gamma1_opt,
        init.amplitude_before,
        init.amplitude_after,
        init.background,
    ];
    let transforms = [
        Transform::Logit,
        Transform::Logit,
        Transform::Log,
        Transform::Log,
        Transform::linear_for(init.amplitude_before),
        Transform::linear_for(init.amplitude_after),
        Transform::linear_for(init.background.abs().max(init.amplitude_before.abs() * 1e-3)),
    ];
    let params = (0..7)
        .map(|i| {
            let free = !fixed.contains(&LIFETIME_NAMES[i]);
            let v = if free && matches!(transforms[i], Transform::Logit) { init_v[i].clamp(1e-6, 1.0 - 1e-6) } else { init_v[i] };
            Param::new(LIFETIME_NAMES[i], v, free, transforms[i])
        })
        .collect();
    let irf = input.irf.as_ref();
    let objective = |v: &[f64]| {
        let m = lifetime_from(v);
        let mut chi = 0.0;
        for (which, d) in [(LifetimeBranch::Before, &input.before), (LifetimeBranch::After, &input.after)] {
            let Ok(curve) = lifetime_curve(&m, which, d, irf) else {
                return f64::INFINITY;
            };
            chi += (0..d.len()).map(|i| ((d.y[i] - curve[i]) / d.sigma[i]).powi(2)).sum::<f64>();
        }
        chi
    };
    Ok(run_fit(params, objective, ObjectiveKind::ChiSquare, opts, FISHER_STEP))
}

/// Synthetic lifetime curve on a uniform grid, optionally convolved.
pub fn synthetic_lifetime(
    m: &LifetimeModel,
    which: LifetimeBranch,
    times: &[f64],
    irf: Option<&Sampled>,
) -> Result<Vec<f64>> {
    let d = CurveData::new(times.to_vec(), vec![0.0; times.len()], vec![1.0; times.len()])?;
    lifetime_curve(m, which, &d, irf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn csv_parsing() {
        let d = CurveData::from_csv_reader("x,y\n0,1\n1,2\n".as_bytes()).unwrap();
        assert_eq!(d.sigma, vec![1.0, 1.0]);
        let e = CurveData::from_csv_reader("x,y,sigma\n0,1,1\n1,2,0\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
        assert!(CurveData::from_csv_reader("x,y\n".as_bytes()).is_err());
        assert!(CurveData::from_csv_reader("t,v\n1,2\n".as_bytes()).is_err());
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        assert_eq!(CurveData::from_csv_reader(out.as_slice()).unwrap(), d);
    }

    #[test]
    fn noiseless_hahn_exact() {
        let truth = CoherenceModel::Hahn { offset: 0.02, amplitude: 0.1, t2: 852e-6, stretch: 2.85 };
        let x: Vec<f64> = (0..60).map(|i| i as f64 * 30e-6).collect();
        let y = x.iter().map(|&t| coherence_model_eval(&truth, t)).collect();
        let d = CurveData::new(x, y, vec![1e-3; 60]).unwrap();
        let init = CoherenceModel::Hahn { offset: 0.03, amplitude: 0.08, t2: 600e-6, stretch: 2.0 };
        let r = fit_coherence(&d, &init, &[], &SimplexOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.get("t2").unwrap() / 852e-6 - 1.0).abs() < 1e-6);
        assert!((r.get("stretch").unwrap() / 2.85 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noisy_t1_within_ten_percent() {
        let truth = CoherenceModel::T1 { offset: 0.0, amplitude: 1.0, t1: 5.3e-3 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (1..=40).map(|i| i as f64 * 0.5e-3).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&t| {
                let v = coherence_model_eval(&truth, t);
                v + Normal::new(0.0, 0.05 * v).unwrap().sample(&mut rng)
            })
            .collect();
        let s = x.iter().map(|&t| 0.05 * coherence_model_eval(&truth, t)).collect();
        let d = CurveData::new(x, y, s).unwrap();
        let init = CoherenceModel::T1 { offset: 0.0, amplitude: 0.8, t1: 3e-3 };
        let r = fit_coherence(&d, &init, &["offset"], &SimplexOptions::default()).unwrap();
        assert!((r.get("t1").unwrap() / 5.3e-3 - 1.0).abs() < 0.1, "{r:?}");
        assert!(r.error("t1").is_some());
    }

    #[test]
    fn synthetic_ramsey_recovers_t2_star() {
        let truth = CoherenceModel::Ramsey {
            offset: 0.5,
            amplitude: 0.05,
            t2_star: 2.24e-6,
            detuning: 5e6,
            hyperfine: 2.16e6,
            phase: 0.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..200).map(|i| i as f64 * 20e-9).collect();
        let y = x
            .iter()
            .map(|&t| coherence_model_eval(&truth, t) + Normal::new(0.0, 0.005).unwrap().sample(&mut rng))
            .collect();
        let d = CurveData::new(x, y, vec![0.005; 200]).unwrap();
        let init = CoherenceModel::Ramsey {
            offset: 0.49,
            amplitude: 0.04,
            t2_star: 1.8e-6,
            detuning: 5.02e6,
            hyperfine: 2.16e6,
            phase: 0.0,
        };
        let r = fit_coherence(&d, &init, &["hyperfine"], &SimplexOptions::default()).unwrap();
        assert!((r.get("t2_star").unwrap() / 2.24e-6 - 1.0).abs() < 0.05, "{r:?}");
    }

    fn lifetime_truth(p0: f64) -> LifetimeModel {
        LifetimeModel {
            p0,
            f_pi: 0.88,
            gamma0_opt: 1.0 / 12.50e-9,
            gamma1_opt: 1.0 / 7.48e-9,
            amplitude_before: 2000.0,
            amplitude_after: 1900.0,
            background: 5.0,
        }
    }

    pub(crate) fn noisy_lifetime_pair(p0: f64, irf: Option<&Sampled>, seed: u64) -> (CurveData, CurveData) {
        let truth = lifetime_truth(p0);
        let times: Vec<f64> = (0..400).map(|i| -5e-9 + i as f64 * 0.1e-9).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut make = |which| {
            let mean = synthetic_lifetime(&truth, which, &times, irf).unwrap();
            let y: Vec<f64> = mean.iter().map(|&m| Poisson::new(m).unwrap().sample(&mut rng)).collect();
            let s = y.iter().map(|v: &f64| v.max(1.0).sqrt()).collect();
            CurveData::new(times.clone(), y, s).unwrap()
        };
        (make(LifetimeBranch::Before), make(LifetimeBranch::After))
    }

    #[test]
    fn lifetime_joint_with_irf_recovers_p0_and_rates() {
        let irf = gaussian_irf(1e-9, 0.1e-9, IRF_WIDTH).unwrap();
        let (before, after) = noisy_lifetime_pair(0.944, Some(&irf), 5);
        let spec = CurveFitSpec::LifetimeJoint {
            init: LifetimeModel { p0: 0.8, gamma0_opt: 1.0 / 11e-9, gamma1_opt: 1.0 / 8e-9, ..lifetime_truth(0.8) },
            irf_sigma: Some(1e-9),
            fixed: default_lifetime_fixed(),
        };
        let r = fit_curve(&spec, &[before, after], &SimplexOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((r.get("p0").unwrap() - 0.944).abs() < 0.02, "{r:?}");
        assert!((r.get("gamma0_opt").unwrap() * 12.5e-9 - 1.0).abs() < 0.02);
        assert!((r.get("gamma1_opt").unwrap() * 7.48e-9 - 1.0).abs() < 0.02);
    }

    #[test]
    fn input_contracts() {
        let d = CurveData::new(vec![0.0, 1.0], vec![1.0, 0.5], vec![1.0, 1.0]).unwrap();
        let init = CoherenceModel::T1 { offset: 0.0, amplitude: 1.0, t1: 1.0 };
        assert!(fit_coherence(&d, &init, &[], &SimplexOptions::default()).is_err());
        assert!(fit_coherence(&d, &init, &["bogus"], &SimplexOptions::default()).is_err());
        let spec = CurveFitSpec::Coherence { init, fixed: vec![] };
        assert!(fit_curve(&spec, &[d.clone(), d], &SimplexOptions::default()).is_err());
        assert!(CurveData::new(vec![0.0], vec![1.0], vec![0.0]).is_err());
    }
}
