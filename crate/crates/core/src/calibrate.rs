//! Calibration of [`SeirParams`] to observed quarantined/recovered/deceased
//! series.
//!
//! The objective is the sum over the three series of squared residuals, each
//! series scaled by its maximum observed count so that deaths (two orders of
//! magnitude below the positives) still drive the fit. Minimization is a
//! bounded Levenberg–Marquardt with forward-difference Jacobians in unit-box
//! coordinates, restarted from a handful of jittered guesses.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ObservedSeries;
use crate::seir::{day_grid, Rk4, SeirError, SeirParams, SeirState, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("series is degenerate (constant or shorter than 2)")]
    DegenerateSeries,
    #[error("length mismatch: {pred} predictions vs {obs} observations")]
    LengthMismatch { pred: usize, obs: usize },
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("under-determined fit: {observations} observations for {free} free parameters")]
    Underdetermined { observations: usize, free: usize },
    #[error("no convergence after {} iterations (best objective {:e})", .best.iterations, .best.objective)]
    NoConvergence { best: Box<FitResult> },
    #[error("model evaluation failed at the initial guess: {0}")]
    Model(#[from] SeirError),
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], obs: &[f64]) -> Result<f64, FitError> {
    if pred.len() != obs.len() {
        return Err(FitError::LengthMismatch {
            pred: pred.len(),
            obs: obs.len(),
        });
    }
    if obs.len() < 2 {
        return Err(FitError::DegenerateSeries);
    }
    let m = obs.iter().sum::<f64>() / obs.len() as f64;
    let ss_tot: f64 = obs.iter().map(|o| (o - m) * (o - m)).sum();
    if ss_tot == 0.0 {
        return Err(FitError::DegenerateSeries);
    }
    let ss_res: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64, FitError> {
    if pred.len() != obs.len() || obs.is_empty() {
        return Err(FitError::LengthMismatch {
            pred: pred.len(),
            obs: obs.len(),
        });
    }
    let ss: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((ss / obs.len() as f64).sqrt())
}

/// Closed interval per rate coefficient. `lo == hi` pins the coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma_inv: [f64; 2],
    pub delta: [f64; 2],
    pub lambda0: [f64; 2],
    pub lambda1: [f64; 2],
    pub kappa0: [f64; 2],
    pub kappa1: [f64; 2],
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: [0.0, 1.0],
            beta: [0.0, 2.0],
            gamma_inv: [0.5, 30.0],
            delta: [0.0, 2.0],
            lambda0: [0.0, 1.0],
            lambda1: [0.0, 2.0],
            kappa0: [0.0, 1.0],
            kappa1: [0.0, 2.0],
        }
    }
}

impl ParamBounds {
    pub fn as_array(&self) -> [[f64; 2]; 8] {
        [
            self.alpha,
            self.beta,
            self.gamma_inv,
            self.delta,
            self.lambda0,
            self.lambda1,
            self.kappa0,
            self.kappa1,
        ]
    }

    pub fn contains(&self, p: &SeirParams) -> bool {
        self.as_array()
            .iter()
            .zip(p.rates())
            .all(|(b, v)| v >= b[0] && v <= b[1])
    }
}

/// How the initial state of a fitting window is built.
///
/// `Q`, `R`, `D` come from the window's first observation, `E = I = i0`,
/// `P = 0`, and `S` takes the remainder of the population. When `i0_bounds`
/// is set, `i0` is a free coordinate of the fit starting from the given value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    pub i0: f64,
    #[serde(default)]
    pub i0_bounds: Option<[f64; 2]>,
}

impl InitPolicy {
    pub fn fixed(i0: f64) -> Self {
        Self { i0, i0_bounds: None }
    }

    pub fn fitted(i0: f64, lower: f64, upper: f64) -> Self {
        Self {
            i0,
            i0_bounds: Some([lower, upper]),
        }
    }

    pub fn initial_state(obs: &ObservedSeries, n_pop: f64, i0: f64) -> SeirState {
        SeirState::with_susceptible_remainder(
            n_pop,
            0.0,
            i0,
            i0,
            obs.quarantined[0] as f64,
            obs.recovered[0] as f64,
            obs.deceased[0] as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    /// Relative half-width of the multi-start jitter around the guess.
    pub jitter: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Relative objective change treated as converged.
    pub tol: f64,
    /// RK4 step of the model evaluations.
    pub step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            jitter: 0.1,
            seed: 0x5eed,
            max_iter: 2000,
            tol: 1e-9,
            step: crate::seir::DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesR2 {
    pub quarantined: f64,
    pub recovered: f64,
    pub deceased: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SeirParams,
    pub i0: f64,
    pub init: SeirState,
    pub r2_by_series: SeriesR2,
    pub r2_avg: f64,
    pub r2_total: f64,
    pub rmse_total: f64,
    /// Final normalized sum of squares.
    pub objective: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning start.
    pub start: usize,
    /// Objective after each accepted iteration of the winning start.
    pub objective_trace: Vec<f64>,
}

/// Maps between the unit box of free coordinates and model parameters.
struct Layout {
    template: SeirParams,
    i0: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Index into `[rates..., i0]` of each free coordinate.
    free: Vec<usize>,
}

impl Layout {
    fn new(guess: &SeirParams, bounds: &ParamBounds, policy: &InitPolicy) -> Result<Self, FitError> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut free = Vec::new();
        let mut all: Vec<(&str, [f64; 2], f64)> = SeirParams::RATE_NAMES
            .iter()
            .zip(bounds.as_array())
            .zip(guess.rates())
            .map(|((n, b), g)| (*n, b, g))
            .collect();
        if let Some(b) = policy.i0_bounds {
            all.push(("i0", b, policy.i0));
        }
        for (k, (name, b, g)) in all.into_iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite()) || b[0] > b[1] {
                return Err(FitError::InfeasibleBounds(format!("{name}: [{}, {}]", b[0], b[1])));
            }
            if g < b[0] || g > b[1] {
                return Err(FitError::InfeasibleBounds(format!(
                    "guess {name} = {g} outside [{}, {}]",
                    b[0], b[1]
                )));
            }
            if b[1] > b[0] {
                lo.push(b[0]);
                hi.push(b[1]);
                free.push(k);
            }
        }
        if bounds.gamma_inv[0] <= 0.0 {
            return Err(FitError::InfeasibleBounds("gamma_inv lower bound must be > 0".into()));
        }
        Ok(Self {
            template: *guess,
            i0: policy.i0,
            lo,
            hi,
            free,
        })
    }

    fn dim(&self) -> usize {
        self.free.len()
    }

    fn to_unit(&self, params: &SeirParams, i0: f64) -> Vec<f64> {
        let rates = params.rates();
        self.free
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let v = if k < 8 { rates[k] } else { i0 };
                ((v - self.lo[j]) / (self.hi[j] - self.lo[j])).clamp(0.0, 1.0)
            })
            .collect()
    }

    fn from_unit(&self, u: &[f64]) -> (SeirParams, f64) {
        let mut rates = self.template.rates();
        let mut i0 = self.i0;
        for (j, &k) in self.free.iter().enumerate() {
            let v = self.lo[j] + u[j].clamp(0.0, 1.0) * (self.hi[j] - self.lo[j]);
            if k < 8 {
                rates[k] = v;
            } else {
                i0 = v;
            }
        }
        (self.template.with_rates(&rates), i0)
    }
}

struct Problem<'a> {
    obs: &'a ObservedSeries,
    layout: Layout,
    integrator: Rk4,
    grid: Vec<f64>,
    targets: [Vec<f64>; 3],
    scales: [f64; 3],
}

impl<'a> Problem<'a> {
    fn simulate(&self, params: &SeirParams, i0: f64) -> Result<Trajectory, SeirError> {
        let init = InitPolicy::initial_state(self.obs, params.n_pop, i0);
        self.integrator.integrate(params, &init, &self.grid)
    }

    fn residuals(&self, u: &[f64]) -> Option<DVector<f64>> {
        let (params, i0) = self.layout.from_unit(u);
        let traj = self.simulate(&params, i0).ok()?;
        let n = self.grid.len();
        let mut r = DVector::zeros(3 * n);
        for (k, s) in traj.states.iter().enumerate() {
            let model = [s.q, s.r, s.d];
            for j in 0..3 {
                r[j * n + k] = (model[j] - self.targets[j][k]) / self.scales[j];
            }
        }
        Some(r)
    }
}

struct StartOutcome {
    u: Vec<f64>,
    cost: f64,
    evals: usize,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Bounded Levenberg–Marquardt from `u0`. Coordinates pinned at a bound with
/// the gradient pointing outward are frozen for that iteration.
fn levenberg_marquardt(problem: &Problem, u0: Vec<f64>, opts: &FitOptions) -> Option<StartOutcome> {
    const FD_STEP: f64 = 1e-6;
    let p = u0.len();
    let mut evals = 0usize;
    let mut eval = |u: &[f64]| {
        evals += 1;
        problem.residuals(u)
    };
    let mut u = u0;
    let mut r = eval(&u)?;
    let mut cost = r.norm_squared();
    let mut trace = vec![cost];
    let mut mu = 1e-3;
    let mut small_steps = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), p);
        for j in 0..p {
            let mut up = u.clone();
            let h = if u[j] + FD_STEP <= 1.0 { FD_STEP } else { -FD_STEP };
            up[j] += h;
            let rp = match eval(&up) {
                Some(v) => v,
                None => continue,
            };
            jac.set_column(j, &((rp - &r) / h));
        }
        let grad = jac.transpose() * &r;
        let active: Vec<usize> = (0..p)
            .filter(|&j| !((u[j] <= 0.0 && grad[j] > 0.0) || (u[j] >= 1.0 && grad[j] < 0.0)))
            .collect();
        if active.is_empty() || active.iter().all(|&j| grad[j].abs() < 1e-15) {
            converged = true;
            break;
        }
        let ja = jac.select_columns(&active);
        let jtj = ja.transpose() * &ja;
        let ga = DVector::from_iterator(active.len(), active.iter().map(|&j| grad[j]));

        let mut accepted = None;
        while mu <= 1e12 {
            let mut a = jtj.clone();
            for k in 0..active.len() {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&ga)),
                None => match a.lu().solve(&(-&ga)) {
                    Some(s) => s,
                    None => {
                        mu *= 4.0;
                        continue;
                    }
                },
            };
            let mut trial = u.clone();
            for (k, &j) in active.iter().enumerate() {
                trial[j] = (trial[j] + step[k]).clamp(0.0, 1.0);
            }
            match eval(&trial) {
                Some(rt) if rt.norm_squared() < cost => {
                    accepted = Some((trial, rt));
                    mu = (mu / 3.0).max(1e-12);
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        let Some((trial, rt)) = accepted else {
            // no descent left at any damping: stationary within bounds
            converged = true;
            break;
        };
        let new_cost = rt.norm_squared();
        let rel = (cost - new_cost) / cost;
        u = trial;
        r = rt;
        cost = new_cost;
        trace.push(cost);
        if rel < opts.tol {
            small_steps += 1;
            if small_steps >= 3 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Some(StartOutcome {
        u,
        cost,
        evals,
        iterations,
        converged,
        trace,
    })
}

/// Fits the rate coefficients (and optionally `i0`) to `obs`.
///
/// The model clock starts at the window's first date. Starts are evaluated
/// in parallel and the winner is picked by `(objective, start index)`, so the
/// result does not depend on scheduling.
pub fn fit(
    obs: &ObservedSeries,
    guess: &SeirParams,
    bounds: &ParamBounds,
    init_policy: &InitPolicy,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let layout = Layout::new(guess, bounds, init_policy)?;
    let n = obs.len();
    if n < 2 || 3 * n < layout.dim() || n < layout.dim() {
        return Err(FitError::Underdetermined {
            observations: n,
            free: layout.dim(),
        });
    }
    let targets = [
        ObservedSeries::as_f64(&obs.quarantined),
        ObservedSeries::as_f64(&obs.recovered),
        ObservedSeries::as_f64(&obs.deceased),
    ];
    let scales = [0, 1, 2].map(|j| targets[j].iter().copied().fold(1.0, f64::max));
    let problem = Problem {
        obs,
        layout,
        integrator: Rk4::new(opts.step),
        grid: day_grid(n - 1),
        targets,
        scales,
    };
    problem.simulate(guess, init_policy.i0)?;

    let u_guess = problem.layout.to_unit(guess, init_policy.i0);
    let starts: Vec<Vec<f64>> = (0..opts.starts.max(1))
        .map(|s| {
            if s == 0 {
                return u_guess.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let (gp, gi0) = problem.layout.from_unit(&u_guess);
            let mut rates = gp.rates();
            for v in rates.iter_mut() {
                *v *= 1.0 + opts.jitter * rng.gen_range(-1.0..=1.0);
            }
            let i0 = gi0 * (1.0 + opts.jitter * rng.gen_range(-1.0..=1.0));
            problem.layout.to_unit(&gp.with_rates(&rates), i0)
        })
        .collect();

    let outcomes: Vec<Option<StartOutcome>> = starts
        .into_par_iter()
        .map(|u0| levenberg_marquardt(&problem, u0, opts))
        .collect();
    let n_evals: usize = outcomes.iter().flatten().map(|o| o.evals).sum();
    let (start, best) = outcomes
        .into_iter()
        .enumerate()
        .filter_map(|(k, o)| o.map(|o| (k, o)))
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)))
        .ok_or(FitError::Model(SeirError::NonFiniteState { t: 0.0 }))?;

    let (params, i0) = problem.layout.from_unit(&best.u);
    let traj = problem.simulate(&params, i0)?;
    let result = summarize(obs, &traj, params, i0, &best, n_evals, start)?;
    if best.converged {
        Ok(result)
    } else {
        Err(FitError::NoConvergence {
            best: Box::new(result),
        })
    }
}

fn summarize(
    obs: &ObservedSeries,
    traj: &Trajectory,
    params: SeirParams,
    i0: f64,
    best: &StartOutcome,
    n_evals: usize,
    start: usize,
) -> Result<FitResult, FitError> {
    let q = traj.series(|s| s.q);
    let r = traj.series(|s| s.r);
    let d = traj.series(|s| s.d);
    let tc = crate::seir::total_confirmed(traj);
    let r2 = SeriesR2 {
        quarantined: r_squared(&q, &ObservedSeries::as_f64(&obs.quarantined))?,
        recovered: r_squared(&r, &ObservedSeries::as_f64(&obs.recovered))?,
        deceased: r_squared(&d, &ObservedSeries::as_f64(&obs.deceased))?,
    };
    let total_obs = ObservedSeries::as_f64(&obs.total_confirmed);
    Ok(FitResult {
        params,
        i0,
        init: traj.states[0],
        r2_avg: (r2.quarantined + r2.recovered + r2.deceased) / 3.0,
        r2_by_series: r2,
        r2_total: r_squared(&tc, &total_obs)?,
        rmse_total: rmse(&tc, &total_obs)?,
        objective: best.cost,
        n_evals,
        iterations: best.iterations,
        converged: best.converged,
        start,
        objective_trace: best.trace.clone(),
    })
}

/// On-disk parameter file: one key per coefficient, plus an optional `i0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    #[serde(flatten)]
    pub params: SeirParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i0: Option<f64>,
}

impl ParamFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameter file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{italy_post_lockdown, italy_pre_lockdown};
    use approx::assert_relative_eq;
    use chrono::{Duration, NaiveDate};

    #[test]
    fn r_squared_examples() {
        let obs = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&obs, &obs).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0; 3], &obs).unwrap(), 0.0);
        // SS_res = 1, SS_tot = 2
        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &obs).unwrap(), 0.5);
        assert_eq!(r_squared(&[1.0, 1.0], &[5.0, 5.0]), Err(FitError::DegenerateSeries));
        assert_eq!(r_squared(&[1.0], &[5.0]), Err(FitError::DegenerateSeries));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[3.5, 0.5, -1.5], &[1.0, -2.0, -4.0]).unwrap(), 2.5);
        assert_eq!(rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), (25.0f64 / 2.0).sqrt());
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(FitError::LengthMismatch { .. })));
    }

    /// Noise-free observations generated by the model itself.
    pub(crate) fn synthetic(params: &SeirParams, i0: f64, q0: f64, r0: f64, d0: f64, days: usize) -> ObservedSeries {
        let init = SeirState::with_susceptible_remainder(params.n_pop, 0.0, i0, i0, q0, r0, d0);
        let traj = Rk4::default().integrate(params, &init, &day_grid(days)).unwrap();
        let start = NaiveDate::from_ymd_opt(2020, 3, 9).unwrap();
        // integer counts; rounding noise stays below 0.5 per point
        let q: Vec<u64> = traj.series(|s| s.q.round()).iter().map(|&v| v as u64).collect();
        let r: Vec<u64> = traj.series(|s| s.r.round()).iter().map(|&v| v as u64).collect();
        let d: Vec<u64> = traj.series(|s| s.d.round()).iter().map(|&v| v as u64).collect();
        ObservedSeries {
            dates: (0..=days).map(|k| start + Duration::days(k as i64)).collect(),
            total_confirmed: (0..=days).map(|k| q[k] + r[k] + d[k]).collect(),
            quarantined: q,
            recovered: r,
            deceased: d,
        }
    }

    #[test]
    fn generate_then_fit_recovers_parameters() {
        let truth = italy_post_lockdown();
        let obs = synthetic(&truth, 9000.0, 7985.0, 724.0, 463.0, 42);
        let rates = truth.rates();
        let perturbed: Vec<f64> = rates
            .iter()
            .enumerate()
            .map(|(k, v)| v * if k % 2 == 0 { 1.2 } else { 0.8 })
            .collect();
        let guess = truth.with_rates(&perturbed.try_into().unwrap());
        let bounds = ParamBounds {
            beta: [0.0, 3.0],
            lambda1: [0.0, 3.0],
            ..Default::default()
        };
        let res = fit(&obs, &guess, &bounds, &InitPolicy::fixed(9000.0), &FitOptions::default()).unwrap();
        assert!(res.r2_avg > 0.9999, "r2_avg = {}", res.r2_avg);
        // λ1 saturates the cure curve within a day and is weakly identified
        for (k, name) in SeirParams::RATE_NAMES.iter().enumerate() {
            if *name == "lambda1" {
                continue;
            }
            let rel = (res.params.rates()[k] - rates[k]).abs() / rates[k];
            assert!(rel < 0.01, "{name}: {} vs {} ({rel})", res.params.rates()[k], rates[k]);
        }
    }

    #[test]
    fn objective_never_increases_and_bounds_hold() {
        let truth = italy_pre_lockdown();
        let obs = synthetic(&truth, 221.0, 221.0, 1.0, 7.0, 13);
        let bounds = ParamBounds::default();
        let res = fit(&obs, &truth, &bounds, &InitPolicy::fitted(150.0, 1.0, 1e4), &FitOptions::default()).unwrap();
        assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(bounds.contains(&res.params));
        assert!(res.i0 >= 1.0 && res.i0 <= 1e4);
        assert!(res.r2_avg > 0.999);
    }

    #[test]
    fn deterministic() {
        let obs = synthetic(&italy_pre_lockdown(), 221.0, 221.0, 1.0, 7.0, 13);
        let mut guess = italy_pre_lockdown();
        guess.beta = 1.0;
        let opts = FitOptions::default();
        let a = fit(&obs, &guess, &ParamBounds::default(), &InitPolicy::fixed(221.0), &opts).unwrap();
        let b = fit(&obs, &guess, &ParamBounds::default(), &InitPolicy::fixed(221.0), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_and_underdetermined() {
        let obs = synthetic(&italy_pre_lockdown(), 221.0, 221.0, 1.0, 7.0, 13);
        let bad = ParamBounds {
            beta: [3.0, 1.0],
            ..Default::default()
        };
        assert!(matches!(
            fit(&obs, &italy_pre_lockdown(), &bad, &InitPolicy::fixed(221.0), &FitOptions::default()),
            Err(FitError::InfeasibleBounds(_))
        ));
        let outside = ParamBounds {
            beta: [0.0, 1.0],
            ..Default::default()
        };
        assert!(matches!(
            fit(&obs, &italy_pre_lockdown(), &outside, &InitPolicy::fixed(221.0), &FitOptions::default()),
            Err(FitError::InfeasibleBounds(_))
        ));
        let short = crate::data::slice_window(&obs, obs.dates[0], obs.dates[1]).unwrap();
        assert!(matches!(
            fit(&short, &italy_pre_lockdown(), &ParamBounds::default(), &InitPolicy::fixed(221.0), &FitOptions::default()),
            Err(FitError::Underdetermined { observations: 2, free: 8 })
        ));
    }

    #[test]
    fn iteration_cap_reports_best_so_far() {
        let obs = synthetic(&italy_pre_lockdown(), 221.0, 221.0, 1.0, 7.0, 13);
        let mut guess = italy_pre_lockdown();
        guess.beta = 0.6;
        let opts = FitOptions {
            max_iter: 1,
            starts: 1,
            ..Default::default()
        };
        match fit(&obs, &guess, &ParamBounds::default(), &InitPolicy::fixed(221.0), &opts) {
            Err(FitError::NoConvergence { best }) => {
                assert!(!best.converged);
                assert_eq!(best.iterations, 1);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn param_file_round_trip() {
        let pf = ParamFile {
            params: italy_post_lockdown(),
            i0: Some(221.0),
        };
        let text = pf.to_toml();
        assert!(text.contains("gamma_inv = 14.2091"));
        assert_eq!(ParamFile::from_toml(&text).unwrap(), pf);
        let bare = ParamFile::from_toml("alpha = 0.0\nbeta = 1.0\ngamma_inv = 2.0\ndelta = 0.5\nlambda0 = 0.1\nlambda1 = 0.1\nkappa0 = 0.01\nkappa1 = 0.01\n").unwrap();
        assert_eq!(bare.params.n_pop, crate::seir::DEFAULT_POPULATION);
        assert_eq!(bare.i0, None);
        assert_relative_eq!(bare.params.beta, 1.0);
    }
}
