//! Maximum-likelihood histogram fits, weighted least-squares curve fits and
//! observed-information uncertainties.
//!
//! All fits minimize over transformed coordinates (log for rates, logit for
//! fractions, scaled linear otherwise) with [`simplex::minimize`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

mod curve;
mod histogram;
pub mod simplex;

pub use curve::{fit_coherence, fit_curve, fit_lifetime_joint, synthetic_lifetime, CurveData, CurveFitSpec, LifetimeFitInput};
pub use histogram::{
    fit_charge_histogram, joint_fit_histograms, ChargeParams, DatasetContext, FreeMask, HistogramDataset,
    MIN_RECOMMENDED_SHOTS,
};
pub use simplex::{minimize, SimplexOptions, SimplexResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Strictly positive; optimized as `ln x`.
    Log,
    /// In (0, 1); optimized as `ln(x/(1−x))`.
    Logit,
    /// Unbounded; optimized as `x/scale`.
    Linear { scale: f64 },
}

impl Transform {
    fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Log => x.max(f64::MIN_POSITIVE).ln(),
            Transform::Logit => {
                let p = x.clamp(1e-15, 1.0 - 1e-15);
                (p / (1.0 - p)).ln()
            }
            Transform::Linear { scale } => x / scale,
        }
    }

    fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Log => u.exp(),
            Transform::Logit => 1.0 / (1.0 + (-u).exp()),
            Transform::Linear { scale } => u * scale,
        }
    }

    /// Linear scale for a value, so that `x/scale` is of order one.
    pub fn linear_for(x: f64) -> Transform {
        Transform::Linear { scale: if x != 0.0 { x.abs() } else { 1.0 } }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: f64,
    pub free: bool,
    pub transform: Transform,
}

impl Param {
    pub fn new(name: impl Into<String>, value: f64, free: bool, transform: Transform) -> Self {
        Param { name: name.into(), value, free, transform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: BTreeMap<String, f64>,
    /// Present only for free parameters of a converged fit with a positive-definite information matrix.
    pub standard_errors: BTreeMap<String, f64>,
    /// Final negative log-likelihood or χ².
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.get(name).copied()
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.standard_errors.get(name).copied()
    }
}

/// How an objective maps onto a log-likelihood, for the information matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveKind {
    NegLogLikelihood,
    ChiSquare,
}

impl ObjectiveKind {
    fn info_scale(self) -> f64 {
        match self {
            ObjectiveKind::NegLogLikelihood => 1.0,
            ObjectiveKind::ChiSquare => 0.5,
        }
    }
}

/// Standard errors and the reasons any were withheld.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Uncertainties {
    pub standard_errors: BTreeMap<String, f64>,
    pub diagnostics: Vec<String>,
}

/// Standard errors from the inverse of the numerically differenced observed
/// information at `params`. Only free parameters enter; `rel_step` sets the
/// central-difference step relative to each value.
pub fn fisher_uncertainties<F: FnMut(&[f64]) -> f64>(
    mut objective: F,
    params: &[Param],
    kind: ObjectiveKind,
    rel_step: f64,
) -> Uncertainties {
    let mut out = Uncertainties::default();
    let idx: Vec<usize> = (0..params.len())
        .filter(|&i| params[i].free)
        .filter(|&i| {
            let pinned = is_pinned(&params[i]);
            if pinned {
                out.diagnostics.push(format!("{} is pinned at a bound; no standard error", params[i].name));
            }
            !pinned
        })
        .collect();
    if idx.is_empty() {
        return out;
    }
    let x0: Vec<f64> = params.iter().map(|p| p.value).collect();
    let steps: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p = &params[i];
            let mut h = rel_step * if p.value != 0.0 { p.value.abs() } else { 1.0 };
            match p.transform {
                Transform::Log => h = h.min(0.5 * p.value),
                Transform::Logit => h = h.min(0.5 * p.value).min(0.5 * (1.0 - p.value)),
                Transform::Linear { .. } => {}
            }
            h
        })
        .collect();
    let m = idx.len();
    let f0 = objective(&x0);
    let mut at = |shifts: &[(usize, f64)]| {
        let mut x = x0.clone();
        for &(k, d) in shifts {
            x[idx[k]] += d;
        }
        objective(&x)
    };
    let mut h = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        let ha = steps[a];
        h[(a, a)] = (at(&[(a, ha)]) - 2.0 * f0 + at(&[(a, -ha)])) / (ha * ha);
        for b in 0..a {
            let hb = steps[b];
            let v = (at(&[(a, ha), (b, hb)]) - at(&[(a, ha), (b, -hb)]) - at(&[(a, -ha), (b, hb)])
                + at(&[(a, -ha), (b, -hb)]))
                / (4.0 * ha * hb);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    let info = h * kind.info_scale();
    if info.iter().any(|v| !v.is_finite()) {
        out.diagnostics.push("information matrix has non-finite entries; standard errors omitted".into());
        return out;
    }
    match info.cholesky() {
        Some(chol) => {
            let cov = chol.inverse();
            for (k, &i) in idx.iter().enumerate() {
                out.standard_errors.insert(params[i].name.clone(), cov[(k, k)].sqrt());
            }
        }
        None => out
            .diagnostics
            .push("information matrix is not positive definite; standard errors omitted".into()),
    }
    out
}

fn is_pinned(p: &Param) -> bool {
    match p.transform {
        Transform::Log => p.value < 1e-300 || !p.value.is_finite(),
        Transform::Logit => p.value < 1e-6 || p.value > 1.0 - 1e-6,
        Transform::Linear { .. } => !p.value.is_finite(),
    }
}

/// Minimize `objective` (called with the full natural-parameter vector) over
/// the free parameters, then attach observed-information errors.
pub(crate) fn run_fit<F: FnMut(&[f64]) -> f64>(
    mut params: Vec<Param>,
    mut objective: F,
    kind: ObjectiveKind,
    opts: &SimplexOptions,
    rel_step: f64,
) -> FitResult {
    let free: Vec<usize> = (0..params.len()).filter(|&i| params[i].free).collect();
    let u0: Vec<f64> = free.iter().map(|&i| params[i].transform.forward(params[i].value)).collect();
    let base: Vec<f64> = params.iter().map(|p| p.value).collect();
    let decode = |u: &[f64], params: &[Param]| {
        let mut x = base.clone();
        for (k, &i) in free.iter().enumerate() {
            x[i] = params[i].transform.inverse(u[k]);
        }
        x
    };
    let res = {
        let params_ref = &params;
        minimize(|u| objective(&decode(u, params_ref)), &u0, opts)
    };
    let x = decode(&res.x, &params);
    for (p, v) in params.iter_mut().zip(&x) {
        p.value = *v;
    }
    let mut diagnostics = Vec::new();
    if !res.converged {
        diagnostics.push(format!(
            "simplex did not converge within {} evaluations per run",
            opts.max_evals
        ));
    }
    let mut standard_errors = BTreeMap::new();
    let fx = res.fx;
    if res.converged && fx.is_finite() {
        let unc = fisher_uncertainties(&mut objective, &params, kind, rel_step);
        standard_errors = unc.standard_errors;
        diagnostics.extend(unc.diagnostics);
    } else {
        for p in params.iter().filter(|p| p.free && is_pinned(p)) {
            diagnostics.push(format!("{} is pinned at a bound", p.name));
        }
    }
    FitResult {
        parameters: params.iter().map(|p| (p.name.clone(), p.value)).collect(),
        standard_errors,
        objective: fx,
        converged: res.converged,
        iterations: res.iterations,
        evaluations: res.evaluations,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transforms_invert() {
        for t in [Transform::Log, Transform::Logit, Transform::Linear { scale: 3.0 }] {
            for x in [0.01, 0.3, 0.99] {
                assert_relative_eq!(t.inverse(t.forward(x)), x, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_curvature_gives_exact_error() {
        // NLL = (x−2)²/(2·0.3²) + (y−5)²/(2·1.5²)
        let f = |v: &[f64]| (v[0] - 2.0).powi(2) / (2.0 * 0.09) + (v[1] - 5.0).powi(2) / (2.0 * 2.25);
        let params = vec![
            Param::new("x", 2.0, true, Transform::linear_for(2.0)),
            Param::new("y", 5.0, true, Transform::Log),
        ];
        let u = fisher_uncertainties(f, &params, ObjectiveKind::NegLogLikelihood, 1e-3);
        assert_relative_eq!(u.standard_errors["x"], 0.3, max_relative = 1e-6);
        assert_relative_eq!(u.standard_errors["y"], 1.5, max_relative = 1e-6);
        let chi = |v: &[f64]| 2.0 * f(v);
        let u = fisher_uncertainties(chi, &params, ObjectiveKind::ChiSquare, 1e-3);
        assert_relative_eq!(u.standard_errors["x"], 0.3, max_relative = 1e-6);
    }

    #[test]
    fn singular_and_pinned_cases_are_flagged() {
        let flat = |v: &[f64]| (v[0] + v[1] - 1.0).powi(2);
        let params = vec![
            Param::new("a", 0.5, true, Transform::linear_for(0.5)),
            Param::new("b", 0.5, true, Transform::linear_for(0.5)),
        ];
        let u = fisher_uncertainties(flat, &params, ObjectiveKind::NegLogLikelihood, 1e-3);
        assert!(u.standard_errors.is_empty());
        assert!(!u.diagnostics.is_empty());
        let pinned = vec![Param::new("p", 1.0 - 1e-9, true, Transform::Logit)];
        let u = fisher_uncertainties(|v| v[0], &pinned, ObjectiveKind::NegLogLikelihood, 1e-3);
        assert!(u.standard_errors.is_empty());
        assert!(u.diagnostics[0].contains("pinned"));
    }

    #[test]
    fn run_fit_respects_bounds_and_fixed() {
        let params = vec![
            Param::new("rate", 10.0, true, Transform::Log),
            Param::new("frac", 0.5, true, Transform::Logit),
            Param::new("fixed", 7.0, false, Transform::linear_for(7.0)),
        ];
        let r = run_fit(
            params,
            |v| (v[0] - 3.0).powi(2) + (v[1] - 0.2).powi(2) + v[2],
            ObjectiveKind::ChiSquare,
            &SimplexOptions::default(),
            1e-4,
        );
        assert!(r.converged);
        assert_relative_eq!(r.parameters["rate"], 3.0, max_relative = 1e-6);
        assert_relative_eq!(r.parameters["frac"], 0.2, max_relative = 1e-6);
        assert_eq!(r.parameters["fixed"], 7.0);
        assert!(r.standard_errors.contains_key("rate") && !r.standard_errors.contains_key("fixed"));
    }
}
