//! Multinomial maximum-likelihood fits of photon-count histograms.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{run_fit, FitResult, ObjectiveKind, Param, SimplexOptions, Transform};
use crate::charge::RateSet;
use crate::error::{Error, Result};
use crate::photon::{conditional_pair, PhotonDistribution};
use crate::telegraph::EmpiricalDistribution;
use crate::units;

/// Below this many shots a fit still runs but is reported as unreliable.
pub const MIN_RECOMMENDED_SHOTS: u64 = 100;
const PROB_FLOOR: f64 = 1e-300;
const FISHER_STEP: f64 = 1e-3;
const CACHE_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_uw: Option<f64>,
    #[serde(with = "units::time")]
    pub duration: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramDataset {
    /// `counts[n]` = occurrences of exactly `n` photons.
    pub counts: Vec<u64>,
    pub shots: u64,
    pub context: DatasetContext,
}

impl HistogramDataset {
    pub fn new(counts: Vec<u64>, context: DatasetContext) -> Result<Self> {
        let shots = counts.iter().sum();
        if shots == 0 {
            return Err(Error::domain("histogram is empty"));
        }
        if !(context.duration > 0.0) || !context.duration.is_finite() {
            return Err(Error::domain(format!("readout duration must be > 0, got {}", context.duration)));
        }
        Ok(HistogramDataset { counts, shots, context })
    }

    pub fn from_empirical(e: &EmpiricalDistribution, context: DatasetContext) -> Result<Self> {
        Self::new(e.counts.clone(), context)
    }

    /// Read `n,count` CSV; absent `n` values count as zero.
    pub fn from_csv_reader<R: Read>(r: R, context: DatasetContext) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
        if headers.len() != 2 || &headers[0] != "n" || &headers[1] != "count" {
            return Err(Error::Parse { line: 1, msg: format!("expected header `n,count`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")) });
        }
        let mut counts: Vec<u64> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let parse = |field: &str, what: &str| -> Result<u64> {
                field
                    .parse::<u64>()
                    .map_err(|_| Error::Parse { line, msg: format!("{what} `{field}` is not a non-negative integer") })
            };
            if rec.len() != 2 {
                return Err(Error::Parse { line, msg: format!("expected 2 fields, found {}", rec.len()) });
            }
            let n = parse(&rec[0], "n")?;
            let c = parse(&rec[1], "count")?;
            if n > 1_000_000 {
                return Err(Error::Parse { line, msg: format!("photon number {n} is implausibly large") });
            }
            if !seen.insert(n) {
                return Err(Error::Parse { line, msg: format!("duplicate photon number {n}") });
            }
            let n = n as usize;
            if counts.len() <= n {
                counts.resize(n + 1, 0);
            }
            counts[n] = c;
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Parse { line: 1, msg: "histogram contains no counts".into() });
        }
        Self::new(counts, context)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["n", "count"])?;
        for (n, c) in self.counts.iter().enumerate() {
            wtr.write_record([n.to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Model parameters of a charge-readout histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeParams {
    #[serde(with = "units::frequency")]
    pub gamma_minus: f64,
    #[serde(with = "units::frequency")]
    pub gamma_zero: f64,
    #[serde(with = "units::frequency")]
    pub gamma_ion: f64,
    #[serde(with = "units::frequency")]
    pub gamma_rec: f64,
    pub p_minus: f64,
}

impl ChargeParams {
    pub fn from_rates(r: &RateSet, p_minus: f64) -> Self {
        ChargeParams {
            gamma_minus: r.gamma_minus,
            gamma_zero: r.gamma_zero,
            gamma_ion: r.gamma_ion,
            gamma_rec: r.gamma_rec,
            p_minus,
        }
    }

    pub fn rates(&self) -> Result<RateSet> {
        RateSet::new(self.gamma_minus, self.gamma_zero, self.gamma_ion, self.gamma_rec)
    }
}

/// Which parameters a fit varies. In joint fits `p_minus` frees one population per dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeMask {
    pub gamma_minus: bool,
    pub gamma_zero: bool,
    pub gamma_ion: bool,
    pub gamma_rec: bool,
    pub p_minus: bool,
}

impl FreeMask {
    pub fn only_p_minus() -> Self {
        FreeMask { p_minus: true, ..Default::default() }
    }

    pub fn any(&self) -> bool {
        self.gamma_minus || self.gamma_zero || self.gamma_ion || self.gamma_rec || self.p_minus
    }
}

const RATE_NAMES: [&str; 4] = ["gamma_minus", "gamma_zero", "gamma_ion", "gamma_rec"];

pub fn fit_charge_histogram(
    data: &HistogramDataset,
    free: FreeMask,
    init: ChargeParams,
    opts: &SimplexOptions,
) -> Result<FitResult> {
    fit_sets(std::slice::from_ref(data), free, init, opts, |_| "p_minus".to_string())
}

/// One likelihood over all datasets: rates shared, one `p_minus[i]` per dataset.
pub fn joint_fit_histograms(
    datasets: &[HistogramDataset],
    free: FreeMask,
    init: ChargeParams,
    opts: &SimplexOptions,
) -> Result<FitResult> {
    if datasets.len() < 2 {
        return Err(Error::domain("a joint fit needs at least two datasets"));
    }
    fit_sets(datasets, free, init, opts, |i| format!("p_minus[{i}]"))
}

type PairKey = [u64; 5];
type Pair = Rc<(PhotonDistribution, PhotonDistribution)>;

fn fit_sets(
    datasets: &[HistogramDataset],
    free: FreeMask,
    init: ChargeParams,
    opts: &SimplexOptions,
    p_name: impl Fn(usize) -> String,
) -> Result<FitResult> {
    if !free.any() {
        return Err(Error::domain("no free parameters"));
    }
    init.rates()?;
    if !(0.0..=1.0).contains(&init.p_minus) {
        return Err(Error::domain(format!("initial p_minus must lie in [0, 1], got {}", init.p_minus)));
    }
    let rate_init = [init.gamma_minus, init.gamma_zero, init.gamma_ion, init.gamma_rec];
    let rate_free = [free.gamma_minus, free.gamma_zero, free.gamma_ion, free.gamma_rec];
    let mut params = Vec::new();
    for k in 0..4 {
        if rate_free[k] && !(rate_init[k] > 0.0) {
            return Err(Error::domain(format!("free rate {} needs a positive initial guess", RATE_NAMES[k])));
        }
        params.push(Param::new(RATE_NAMES[k], rate_init[k], rate_free[k], Transform::Log));
    }
    let p0 = init.p_minus.clamp(1e-6, 1.0 - 1e-6);
    for i in 0..datasets.len() {
        let v = if free.p_minus { p0 } else { init.p_minus };
        params.push(Param::new(p_name(i), v, free.p_minus, Transform::Logit));
    }

    let mut diagnostics = Vec::new();
    for (i, d) in datasets.iter().enumerate() {
        if d.shots < MIN_RECOMMENDED_SHOTS {
            log::warn!("dataset {i} has only {} shots", d.shots);
            diagnostics.push(format!("dataset {i} has only {} shots (< {MIN_RECOMMENDED_SHOTS})", d.shots));
        }
    }
    let degenerate = datasets.iter().all(|d| d.occupied_bins() < 2);
    if degenerate {
        diagnostics.push("every histogram occupies a single bin; parameters are not identifiable".into());
    }

    let mut cache: HashMap<PairKey, Pair> = HashMap::new();
    let objective = |x: &[f64]| -> f64 {
        let Ok(rates) = RateSet::new(x[0], x[1], x[2], x[3]) else {
            return f64::INFINITY;
        };
        let mut total = 0.0;
        for (i, d) in datasets.iter().enumerate() {
            let key = [x[0].to_bits(), x[1].to_bits(), x[2].to_bits(), x[3].to_bits(), d.context.duration.to_bits()];
            let pair = match cache.get(&key) {
                Some(p) => p.clone(),
                None => match conditional_pair(&rates, d.context.duration) {
                    Ok(p) => {
                        if cache.len() >= CACHE_LIMIT {
                            cache.clear();
                        }
                        let p = Rc::new(p);
                        cache.insert(key, p.clone());
                        p
                    }
                    Err(_) => return f64::INFINITY,
                },
            };
            total += nll(d, &pair.0, &pair.1, x[4 + i]);
        }
        total
    };
    let mut result = run_fit(params, objective, ObjectiveKind::NegLogLikelihood, opts, FISHER_STEP);
    if degenerate {
        result.converged = false;
        result.standard_errors.clear();
    }
    diagnostics.append(&mut result.diagnostics);
    result.diagnostics = diagnostics;
    Ok(result)
}

fn nll(d: &HistogramDataset, m: &PhotonDistribution, z: &PhotonDistribution, p: f64) -> f64 {
    d.counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| {
            let prob = p * m.prob(n) + (1.0 - p) * z.prob(n);
            -(c as f64) * prob.max(PROB_FLOOR).ln()
        })
        .sum()
}
