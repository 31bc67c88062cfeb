//! Nelder-Mead simplex minimization with seeded restarts.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Converged when `f_worst − f_best ≤ f_tol·|f_best| + f_abs`.
    pub f_tol: f64,
    pub f_abs: f64,
    /// ... and the largest vertex distance from the best vertex is below this.
    pub x_tol: f64,
    pub initial_step: f64,
    pub restarts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            f_tol: 1e-10,
            f_abs: 1e-12,
            x_tol: 1e-8,
            initial_step: 0.1,
            restarts: 3,
            max_evals: 20_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best objective after every iteration, across all restarts.
    pub trace: Vec<f64>,
}

/// Minimize `f` from `x0`; afterwards restart `restarts` times from the best
/// point with a randomly oriented simplex and keep the overall best.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut evaluations = 0;
    if n == 0 {
        let fx = f(x0);
        return SimplexResult { x: vec![], fx, converged: true, iterations: 0, evaluations: 1, trace: vec![fx] };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best_x = x0.to_vec();
    let mut best_f = f64::INFINITY;
    let mut converged = false;
    for round in 0..=opts.restarts {
        let steps: Vec<f64> = (0..n)
            .map(|_| {
                if round == 0 {
                    opts.initial_step
                } else {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * opts.initial_step * (0.5 + rng.random::<f64>())
                }
            })
            .collect();
        let run = single_run(&mut f, &best_x, &steps, opts, best_f, &mut trace);
        iterations += run.iterations;
        evaluations += run.evaluations;
        if run.fx <= best_f {
            converged = run.converged;
            best_f = run.fx;
            best_x = run.x;
        }
    }
    SimplexResult { x: best_x, fx: best_f, converged, iterations, evaluations, trace }
}

struct Run {
    x: Vec<f64>,
    fx: f64,
    converged: bool,
    iterations: usize,
    evaluations: usize,
}

fn single_run<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
    floor: f64,
    trace: &mut Vec<f64>,
) -> Run {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += steps[i];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    let mut iterations = 0;
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        trace.push(vals[0].min(floor));

        let spread = vals[n] - vals[0];
        let diameter = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol * vals[0].abs() + opts.f_abs && diameter < opts.x_tol {
            return Run { x: pts.swap_remove(0), fx: vals[0], converged: true, iterations, evaluations: evals };
        }
        if evals >= opts.max_evals {
            return Run { x: pts.swap_remove(0), fx: vals[0], converged: false, iterations, evaluations: evals };
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect() };
        let xr = along(-alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(-gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        let (best, rest) = pts.split_at_mut(1);
        for p in rest.iter_mut() {
            for (x, b) in p.iter_mut().zip(&best[0]) {
                *x = b + sigma * (*x - b);
            }
        }
        for i in 1..=n {
            vals[i] = eval(&pts[i], &mut evals);
        }
    }
}
