//! Seeded synthetic data sets for fit round trips and bundled examples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::charge::RateSet;
use crate::error::{Error, Result};
use crate::fit::{synthetic_lifetime, CurveData, DatasetContext, HistogramDataset};
use crate::photon::InitialCharge;
use crate::spin::{coherence_model_eval, CoherenceModel, LifetimeBranch, LifetimeModel, Sampled};
use crate::telegraph::{derive_seed, empirical_distribution};

/// Photon-count histogram of a readout window starting with NV⁻ population `p_minus`.
pub fn histogram_fixture(
    rates: &RateSet,
    duration: f64,
    p_minus: f64,
    shots: u64,
    seed: u64,
    context: DatasetContext,
) -> Result<HistogramDataset> {
    let e = empirical_distribution(rates, duration, InitialCharge::Mixture(p_minus), shots, seed)?;
    HistogramDataset::from_empirical(&e, context)
}

/// Poisson-noised before/after lifetime transients on `times`, with `σ = √max(y, 1)`.
pub fn lifetime_fixture(
    model: &LifetimeModel,
    times: &[f64],
    irf: Option<&Sampled>,
    seed: u64,
) -> Result<(CurveData, CurveData)> {
    let make = |which, stream| -> Result<CurveData> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
        let mean = synthetic_lifetime(model, which, times, irf)?;
        let y: Vec<f64> = mean
            .iter()
            .map(|&m| {
                if m <= 0.0 {
                    return Ok(0.0);
                }
                Poisson::new(m).map(|p| p.sample(&mut rng)).map_err(|e| Error::Domain(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let sigma = y.iter().map(|v| v.max(1.0).sqrt()).collect();
        CurveData::new(times.to_vec(), y, sigma)
    };
    Ok((make(LifetimeBranch::Before, 0)?, make(LifetimeBranch::After, 1)?))
}

/// Coherence curve with additive Gaussian noise of standard deviation `noise`.
pub fn coherence_fixture(model: &CoherenceModel, taus: &[f64], noise: f64, seed: u64) -> Result<CurveData> {
    model.validate()?;
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Domain(e.to_string()))?;
    if !(noise > 0.0) {
        return Err(Error::Domain(format!("noise must be > 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = taus.iter().map(|&t| coherence_model_eval(model, t) + normal.sample(&mut rng)).collect();
    CurveData::new(taus.to_vec(), y, vec![noise; taus.len()])
}
