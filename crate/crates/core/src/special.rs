//! Modified Bessel functions of the first kind (orders 0 and 1) and Poisson
//! log-probabilities.

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Switch from the ascending series to the large-argument expansion.
const SERIES_LIMIT: f64 = 30.0;
const SERIES_TOL: f64 = 1e-16;

/// `I_order(x)` for `order ∈ {0, 1}` and `x ≥ 0`.
pub fn bessel_i(order: u32, x: f64) -> Result<f64> {
    check_args(order, x)?;
    if x <= SERIES_LIMIT {
        Ok(series(order, x))
    } else {
        Ok(asymptotic_scaled(order, x) * x.exp())
    }
}

/// Exponentially scaled `e^{-x}·I_order(x)`; finite for every `x ≥ 0`.
pub fn bessel_i_scaled(order: u32, x: f64) -> Result<f64> {
    check_args(order, x)?;
    if x <= SERIES_LIMIT {
        Ok(series(order, x) * (-x).exp())
    } else {
        Ok(asymptotic_scaled(order, x))
    }
}

/// `2·I₁(z)/z · e^{-z}`, continuous through `z = 0` where it equals 1.
pub(crate) fn bessel_i1_over_half_z_scaled(z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    if z <= SERIES_LIMIT {
        // Σ (z/2)^{2k} / (k!(k+1)!)
        let q = 0.25 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= q / (k * (k + 1.0));
            sum += term;
            if term < SERIES_TOL * sum {
                break;
            }
        }
        sum * (-z).exp()
    } else {
        2.0 * asymptotic_scaled(1, z) / z
    }
}

fn check_args(order: u32, x: f64) -> Result<()> {
    if order > 1 {
        return Err(Error::domain(format!("Bessel order {order} is not supported (only 0 and 1)")));
    }
    if !(x >= 0.0) || x.is_infinite() {
        return Err(Error::domain(format!("Bessel argument must be finite and >= 0, got {x}")));
    }
    Ok(())
}

fn series(order: u32, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let nu = order as f64;
    let mut term = if order == 0 { 1.0 } else { 0.5 * x };
    let mut sum = term;
    let mut k = 0.0;
    if term == 0.0 {
        return 0.0;
    }
    loop {
        k += 1.0;
        term *= q / (k * (k + nu));
        sum += term;
        if term < SERIES_TOL * sum {
            break;
        }
    }
    sum
}

// Hankel expansion of e^{-x} I_ν(x), truncated at the smallest term.
fn asymptotic_scaled(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order as f64).powi(2);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k: f64 = 1.0;
    while k < 60.0 {
        let next = term * -(mu - (2.0 * k - 1.0).powi(2)) / (k * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < SERIES_TOL * sum.abs() {
            break;
        }
        k += 1.0;
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// `ln P(n | mean)` for a Poisson law; `mean = 0` is the point mass at 0.
pub fn log_poisson_pmf(mean: f64, n: u64) -> Result<f64> {
    if !(mean >= 0.0) || mean.is_infinite() {
        return Err(Error::domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    Ok(log_poisson_unchecked(mean, n))
}

pub(crate) fn log_poisson_unchecked(mean: f64, n: u64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * mean.ln() - mean - ln_factorial(n)
}

/// Fill `out[k]` with `ln P(k | mean)` for `k = 0..out.len()`.
pub(crate) fn log_poisson_row(mean: f64, out: &mut [f64]) {
    if mean == 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            *v = if k == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        return;
    }
    let ln_mean = mean.ln();
    for (k, v) in out.iter_mut().enumerate() {
        *v = k as f64 * ln_mean - mean - ln_factorial(k as u64);
    }
}
