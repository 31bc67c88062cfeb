use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use nvcharge::charge::{rates_at_power, Power, RateSet};
use nvcharge::config::{parse_config, parse_fit_spec, Config, FitSpec, HistogramSource, Override};
use nvcharge::fit::{
    fit_charge_histogram, fit_curve, joint_fit_histograms, ChargeParams, CurveData, CurveFitSpec, DatasetContext,
    FitResult, FreeMask, HistogramDataset, SimplexOptions,
};
use nvcharge::fixtures::{coherence_fixture, histogram_fixture, lifetime_fixture};
use nvcharge::optimize::{
    ac_sensitivity, log_space, optimize_with_table, speedup_curve, spin_readout_noise, CandidateTable, Strategy,
};
use nvcharge::photon::ChargeState;
use nvcharge::protocol::{estimate_protocol_stats, predict, ProtocolConfig, ProtocolPrediction, ProtocolStats};
use nvcharge::spin::{gaussian_irf, CoherenceModel, LifetimeModel};
use nvcharge::telegraph::derive_seed;
use nvcharge::units::{self, parse_quantity, Dimension};

use crate::manifest::{sha256_hex, RunManifest};
use crate::{Cli, Command, ProtocolArgs, Status, StrategyArg};

const FIXTURE_POWER_UW: f64 = 10.0;
const FIXTURE_WINDOW: f64 = 2e-3;
const FIXTURE_POPULATIONS: [f64; 2] = [0.733, 0.994];
const FIXTURE_IRF_SIGMA: f64 = 1e-9;
const IRF_WIDTH: f64 = 5.0;

impl ProtocolArgs {
    fn overrides(&self) -> Vec<Override> {
        let mut o = Vec::new();
        let text = |path: &str, v: &Option<String>, o: &mut Vec<Override>| {
            if let Some(v) = v {
                o.push(Override::new(path, Value::String(v.clone())));
            }
        };
        text("protocol.probe_power", &self.probe_power, &mut o);
        text("protocol.probe_duration", &self.probe_duration, &mut o);
        text("protocol.delay", &self.delay, &mut o);
        if let Some(t) = self.threshold {
            o.push(Override::new("protocol.threshold", t.into()));
        }
        if let Some(p) = self.prior {
            o.push(Override::new("protocol.prior_p_minus", p.into()));
        }
        o
    }
}

fn simulation_overrides(shots: Option<u64>, seed: Option<u64>) -> Vec<Override> {
    let mut o = Vec::new();
    if let Some(s) = shots {
        o.push(Override::new("simulation.shots", s.into()));
    }
    if let Some(s) = seed {
        o.push(Override::new("simulation.seed", s.into()));
    }
    o
}

fn load_config(path: Option<&Path>, overrides: &[Override]) -> Result<Config> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            Ok(parse_config(&text, overrides).with_context(|| p.display().to_string())?)
        }
        None => Ok(parse_config("", overrides).context("configuration")?),
    }
}

fn time(text: &str) -> Result<f64> {
    parse_quantity(text, Dimension::Time).with_context(|| format!("`{text}`"))
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    manifest: &'a RunManifest,
    result: T,
}

fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn json_text<T: Serialize>(manifest: &RunManifest, result: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Document { manifest, result })?;
    s.push('\n');
    Ok(s)
}

fn write_json<T: Serialize>(out: Option<&Path>, manifest: &RunManifest, result: T) -> Result<()> {
    write_bytes(out, json_text(manifest, result)?.as_bytes())
}

/// CSV stays plain data; a file output gets its manifest as `<file>.manifest.json`.
fn write_csv(out: Option<&Path>, manifest: &RunManifest, bytes: &[u8]) -> Result<()> {
    write_bytes(out, bytes)?;
    if let Some(p) = out {
        let mut side: OsString = p.as_os_str().to_owned();
        side.push(".manifest.json");
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        write_bytes(Some(Path::new(&side)), text.as_bytes())?;
    }
    Ok(())
}

pub fn run(cli: &Cli, argv: Vec<String>) -> Result<Status> {
    let mut overrides = cli.set.iter().map(|s| s.parse::<Override>()).collect::<Result<Vec<_>, _>>()?;
    match &cli.command {
        Command::Predict { protocol } => overrides.extend(protocol.overrides()),
        Command::Emulate { protocol, shots, seed, .. } => {
            overrides.extend(protocol.overrides());
            overrides.extend(simulation_overrides(*shots, *seed));
        }
        Command::GenFixtures { shots, seed, .. } => overrides.extend(simulation_overrides(*shots, *seed)),
        _ => {}
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let cfg_json = cfg.to_json()?;
    let config_path = cli.config.as_ref().map(|p| p.display().to_string());
    let manifest = |seed| RunManifest::new(argv.clone(), config_path.clone(), &cfg_json, seed);
    let out = cli.out.as_deref();

    match &cli.command {
        Command::Predict { .. } => {
            let prediction = predict(&cfg.protocol, &cfg.calibration)?;
            write_json(out, &manifest(None), PredictResult { protocol: cfg.protocol, prediction })?;
        }
        Command::Emulate { summary, .. } => {
            let m = manifest(Some(cfg.simulation.seed));
            emulate(&cfg, out, summary.as_deref(), &m)?;
        }
        Command::Fit { spec } => return fit(spec, out, &manifest),
        Command::Optimize { strategy, tau_o, t2 } => {
            let strategy = Strategy::from(*strategy);
            let table = build_table(&cfg, &[strategy])?;
            let t2 = t2.as_deref().map(time).transpose()?;
            let report = optimize_with_table(&table, strategy, time(tau_o)?, t2)?;
            write_json(out, &manifest(None), report)?;
        }
        Command::SpeedupCurve { tau_o, from, to, points, strategies } => {
            let grid: Vec<f64> = if !tau_o.is_empty() {
                tau_o.iter().map(|t| time(t)).collect::<Result<_>>()?
            } else if let (Some(a), Some(b), Some(n)) = (from, to, points) {
                let (a, b) = (time(a)?, time(b)?);
                if !(a > 0.0 && b > a) || *n < 2 {
                    bail!("`--from` must be > 0 and below `--to`, with at least 2 points");
                }
                log_space(a, b, *n)
            } else {
                log_space(10e-6, 1e-3, 21)
            };
            let strategies: Vec<Strategy> = if strategies.is_empty() {
                Strategy::ALL.to_vec()
            } else {
                strategies.iter().copied().map(Strategy::from).collect()
            };
            let table = build_table(&cfg, &strategies)?;
            let curve = speedup_curve(&table, &grid, &strategies)?;
            for b in &curve.break_even {
                match b.tau_o {
                    Some(t) => log::info!("{} breaks even at {}", b.strategy, units::format_quantity(t, Dimension::Time)),
                    None => log::info!("{} does not cross a speedup of 1 on this grid", b.strategy),
                }
            }
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write_csv(out, &manifest(None), &buf)?;
        }
        Command::Sensitivity { t2, tau_i, tau_r, sigma_r, snr, strategy, tau_o } => {
            let report = sensitivity(&cfg, time(t2)?, tau_i, tau_r, *sigma_r, *snr, *strategy, tau_o)?;
            write_json(out, &manifest(None), report)?;
        }
        Command::GenFixtures { out_dir, .. } => {
            gen_fixtures(&cfg, out_dir, &manifest(Some(cfg.simulation.seed)))?;
        }
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct PredictResult {
    protocol: ProtocolConfig,
    prediction: ProtocolPrediction,
}

#[derive(Serialize)]
struct EmulateSummary {
    protocol: ProtocolConfig,
    stats: ProtocolStats,
    prediction: ProtocolPrediction,
}

fn state(s: ChargeState) -> &'static str {
    match s {
        ChargeState::Negative => "negative",
        ChargeState::Neutral => "neutral",
    }
}

fn emulate(cfg: &Config, out: Option<&Path>, summary: Option<&Path>, manifest: &RunManifest) -> Result<()> {
    let (stats, outcomes) =
        estimate_protocol_stats(&cfg.protocol, &cfg.calibration, cfg.simulation.shots, cfg.simulation.seed)?;
    let prediction = predict(&cfg.protocol, &cfg.calibration)?;
    let mut csv = String::from("run,attempts,elapsed,success_state,heralded_state,threshold_state,trial_counter\n");
    for (i, o) in outcomes.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{:e},{},{},{},{}",
            o.attempts,
            o.elapsed,
            state(o.success_state),
            state(o.heralded_state),
            state(o.threshold_state),
            o.trial_counter
        )?;
    }
    write_csv(out, manifest, csv.as_bytes())?;
    log::info!(
        "fidelity {:.4} (predicted {:.4}), mean attempts {:.2} (predicted {:.2})",
        stats.fidelity,
        prediction.fidelity,
        stats.attempts_mean,
        prediction.avg_attempts
    );
    if let Some(p) = summary {
        write_json(Some(p), manifest, EmulateSummary { protocol: cfg.protocol, stats, prediction })?;
    }
    Ok(())
}

fn build_table(cfg: &Config, strategies: &[Strategy]) -> Result<CandidateTable> {
    for &s in strategies.iter().chain(&[Strategy::SsiPl]) {
        cfg.search_grid.validate(s).context("search_grid")?;
    }
    let mut table = CandidateTable::build(&cfg.calibration, &cfg.readout_models, &cfg.search_grid, &cfg.protocol)?;
    table.physical = cfg.physical;
    Ok(table)
}

#[derive(Serialize)]
struct SensitivityReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<Strategy>,
    #[serde(with = "units::time")]
    t2: f64,
    #[serde(with = "units::time")]
    tau_i: f64,
    #[serde(with = "units::time")]
    tau_r: f64,
    sigma_r: f64,
    /// T/√Hz
    eta_ac: f64,
    eta_ac_nt_per_rt_hz: f64,
}

#[allow(clippy::too_many_arguments)]
fn sensitivity(
    cfg: &Config,
    t2: f64,
    tau_i: &Option<String>,
    tau_r: &Option<String>,
    sigma_r: Option<f64>,
    snr: Option<f64>,
    strategy: Option<StrategyArg>,
    tau_o: &Option<String>,
) -> Result<SensitivityReport> {
    let (strategy, tau_i, tau_r, sigma_r) = match strategy {
        Some(s) => {
            let s = Strategy::from(s);
            let table = build_table(cfg, &[s])?;
            let tau_o = tau_o.as_deref().map(time).transpose()?.unwrap_or(t2);
            let r = optimize_with_table(&table, s, tau_o, Some(t2))?;
            let Some(sigma_r) = r.sigma_r else {
                bail!("the optimal {s} readout has no defined spin-readout noise");
            };
            (Some(s), r.tau_i, r.tau_r, sigma_r)
        }
        None => {
            let (Some(ti), Some(tr)) = (tau_i, tau_r) else {
                bail!("`--tau-i` and `--tau-r` are required unless `--strategy` is given");
            };
            let sigma_r = match (sigma_r, snr) {
                (Some(s), _) => s,
                (None, Some(snr)) => spin_readout_noise(snr)?,
                (None, None) => bail!("give `--sigma-r` or `--snr`"),
            };
            (None, time(ti)?, time(tr)?, sigma_r)
        }
    };
    let eta = ac_sensitivity(t2, tau_i, tau_r, sigma_r, &cfg.physical)?;
    Ok(SensitivityReport { strategy, t2, tau_i, tau_r, sigma_r, eta_ac: eta, eta_ac_nt_per_rt_hz: eta * 1e9 })
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct DatasetSummary {
    label: String,
    path: String,
    shots: u64,
    p_minus: Option<f64>,
    p_minus_se: Option<f64>,
}

#[derive(Serialize)]
struct FitDocument {
    kind: &'static str,
    inputs: Vec<InputRecord>,
    seed: u64,
    fit: FitResult,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    datasets: Vec<DatasetSummary>,
}

fn read_input(dir: &Path, rel: &str, inputs: &mut Vec<InputRecord>) -> Result<Vec<u8>> {
    let p = dir.join(rel);
    let bytes = fs::read(&p).with_context(|| format!("cannot read {}", p.display()))?;
    inputs.push(InputRecord { path: rel.to_string(), sha256: sha256_hex(&bytes) });
    Ok(bytes)
}

fn fit(spec_path: &Path, out: Option<&Path>, manifest: &dyn Fn(Option<u64>) -> RunManifest) -> Result<Status> {
    let text = fs::read(spec_path).with_context(|| format!("cannot read fit spec {}", spec_path.display()))?;
    let spec = parse_fit_spec(&String::from_utf8_lossy(&text)).with_context(|| spec_path.display().to_string())?;
    let dir = spec_path.parent().unwrap_or(Path::new("."));
    let mut inputs = vec![InputRecord { path: spec_path.display().to_string(), sha256: sha256_hex(&text) }];
    let doc = match spec {
        FitSpec::Histogram { datasets, free, init, seed } => {
            let mut data = Vec::with_capacity(datasets.len());
            for d in &datasets {
                let bytes = read_input(dir, &d.path, &mut inputs)?;
                let ctx = DatasetContext { power_uw: d.power_uw, duration: d.duration, label: d.label.clone() };
                data.push(HistogramDataset::from_csv_reader(bytes.as_slice(), ctx).with_context(|| d.path.clone())?);
            }
            let opts = SimplexOptions { seed, ..SimplexOptions::default() };
            let (fit, name): (FitResult, Box<dyn Fn(usize) -> String>) = if data.len() == 1 {
                (fit_charge_histogram(&data[0], free, init, &opts)?, Box::new(|_| "p_minus".to_string()))
            } else {
                (joint_fit_histograms(&data, free, init, &opts)?, Box::new(|i| format!("p_minus[{i}]")))
            };
            let summaries = datasets
                .iter()
                .zip(&data)
                .enumerate()
                .map(|(i, (src, d))| DatasetSummary {
                    label: src.label.clone(),
                    path: src.path.clone(),
                    shots: d.shots,
                    p_minus: fit.get(&name(i)),
                    p_minus_se: fit.error(&name(i)),
                })
                .collect();
            FitDocument { kind: "histogram", inputs, seed, fit, datasets: summaries }
        }
        FitSpec::Curve { data, spec, seed } => {
            let curves = data
                .iter()
                .map(|rel| {
                    let bytes = read_input(dir, rel, &mut inputs)?;
                    CurveData::from_csv_reader(bytes.as_slice()).with_context(|| rel.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = SimplexOptions { seed, ..SimplexOptions::default() };
            let fit = fit_curve(&spec, &curves, &opts)?;
            FitDocument { kind: "curve", inputs, seed, fit, datasets: Vec::new() }
        }
    };
    let converged = doc.fit.converged;
    write_json(out, &manifest(Some(doc.seed)), doc)?;
    Ok(if converged { Status::Ok } else { Status::NotConverged })
}

#[derive(Serialize)]
struct FixtureTruth {
    power_uw: f64,
    #[serde(with = "units::time")]
    histogram_window: f64,
    histogram_shots: u64,
    rates: ChargeParams,
    populations: [f64; 2],
    lifetime: LifetimeModel,
    #[serde(with = "units::time")]
    lifetime_irf_sigma: f64,
    hahn: CoherenceModel,
}

fn write_spec(dir: &Path, name: &str, spec: &FitSpec) -> Result<()> {
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    write_bytes(Some(&dir.join(name)), text.as_bytes())
}

fn gen_fixtures(cfg: &Config, dir: &PathBuf, manifest: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let seed = cfg.simulation.seed;
    let shots = cfg.simulation.shots;
    let rates: RateSet = rates_at_power(&cfg.calibration, Power::microwatts(FIXTURE_POWER_UW)?);

    let mut sources = Vec::new();
    for (i, (&p, tag)) in FIXTURE_POPULATIONS.iter().zip(["a", "b"]).enumerate() {
        let name = format!("histogram_{tag}.csv");
        let ctx = DatasetContext { power_uw: Some(FIXTURE_POWER_UW), duration: FIXTURE_WINDOW, label: tag.into() };
        let h = histogram_fixture(&rates, FIXTURE_WINDOW, p, shots, derive_seed(seed, i as u64), ctx)?;
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_bytes(Some(&dir.join(&name)), &buf)?;
        sources.push(HistogramSource {
            path: name,
            duration: FIXTURE_WINDOW,
            power_uw: Some(FIXTURE_POWER_UW),
            label: tag.into(),
        });
    }
    // Γ_rec barely shapes a 2 ms window, so it stays fixed.
    let free = FreeMask { gamma_minus: true, gamma_zero: true, gamma_ion: true, gamma_rec: false, p_minus: true };
    let init = ChargeParams {
        gamma_minus: rates.gamma_minus * 1.2,
        gamma_zero: rates.gamma_zero * 0.8,
        gamma_ion: rates.gamma_ion * 1.15,
        gamma_rec: rates.gamma_rec,
        p_minus: 0.6,
    };
    write_spec(dir, "fit_histogram.json", &FitSpec::Histogram { datasets: sources[..1].to_vec(), free, init, seed })?;
    write_spec(dir, "fit_joint.json", &FitSpec::Histogram { datasets: sources.clone(), free, init, seed })?;

    let lifetime = LifetimeModel {
        p0: 0.944,
        f_pi: 0.88,
        gamma0_opt: 1.0 / 12.50e-9,
        gamma1_opt: 1.0 / 7.48e-9,
        amplitude_before: 2000.0,
        amplitude_after: 1900.0,
        background: 5.0,
    };
    let step = 0.1e-9;
    let times: Vec<f64> = (0..400).map(|i| -5e-9 + i as f64 * step).collect();
    let irf = gaussian_irf(FIXTURE_IRF_SIGMA, step, IRF_WIDTH)?;
    let (before, after) = lifetime_fixture(&lifetime, &times, Some(&irf), derive_seed(seed, 2))?;
    for (name, c) in [("lifetime_before.csv", &before), ("lifetime_after.csv", &after)] {
        let mut buf = Vec::new();
        c.write_csv(&mut buf)?;
        write_bytes(Some(&dir.join(name)), &buf)?;
    }
    let lifetime_init =
        LifetimeModel { p0: 0.8, gamma0_opt: 1.0 / 11e-9, gamma1_opt: 1.0 / 8e-9, ..lifetime };
    write_spec(
        dir,
        "fit_lifetime.json",
        &FitSpec::Curve {
            data: vec!["lifetime_before.csv".into(), "lifetime_after.csv".into()],
            spec: CurveFitSpec::LifetimeJoint {
                init: lifetime_init,
                irf_sigma: Some(FIXTURE_IRF_SIGMA),
                fixed: vec!["f_pi".into()],
            },
            seed,
        },
    )?;

    let hahn = CoherenceModel::Hahn { offset: 0.02, amplitude: 0.1, t2: 852e-6, stretch: 2.85 };
    let taus: Vec<f64> = (0..60).map(|i| i as f64 * 30e-6).collect();
    let echo = coherence_fixture(&hahn, &taus, 3e-3, derive_seed(seed, 3))?;
    let mut buf = Vec::new();
    echo.write_csv(&mut buf)?;
    write_bytes(Some(&dir.join("hahn.csv")), &buf)?;
    write_spec(
        dir,
        "fit_hahn.json",
        &FitSpec::Curve {
            data: vec!["hahn.csv".into()],
            spec: CurveFitSpec::Coherence {
                init: CoherenceModel::Hahn { offset: 0.03, amplitude: 0.08, t2: 600e-6, stretch: 2.0 },
                fixed: Vec::new(),
            },
            seed,
        },
    )?;

    let truth = FixtureTruth {
        power_uw: FIXTURE_POWER_UW,
        histogram_window: FIXTURE_WINDOW,
        histogram_shots: shots,
        rates: ChargeParams::from_rates(&rates, FIXTURE_POPULATIONS[0]),
        populations: FIXTURE_POPULATIONS,
        lifetime,
        lifetime_irf_sigma: FIXTURE_IRF_SIGMA,
        hahn,
    };
    write_json(Some(&dir.join("truth.json")), manifest, truth)
}
