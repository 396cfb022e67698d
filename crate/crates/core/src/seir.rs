//! Generalized SEIR model with protected and quarantined compartments.
//!
//! Seven states: susceptible `S`, insusceptible/protected `P`, exposed `E`,
//! infectious `I`, quarantined `Q`, recovered `R` and deceased `D`. The
//! population is closed, so the right-hand side always sums to zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default integration step in days.
pub const DEFAULT_STEP: f64 = 0.05;

/// Italy, ISTAT 1 Jan 2020.
pub const DEFAULT_POPULATION: f64 = 60_360_000.0;

/// Relative size of a negative compartment that is still treated as roundoff.
const NEGATIVE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeirError {
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("compartment {compartment} went negative ({value:e}) at t = {t}")]
    NegativeState {
        t: f64,
        compartment: &'static str,
        value: f64,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid initial state: {0}")]
    InvalidState(String),
    #[error("time grid must be strictly increasing and finite")]
    InvalidGrid,
}

/// Compartment populations at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SeirState {
    pub s: f64,
    pub p: f64,
    pub e: f64,
    pub i: f64,
    pub q: f64,
    pub r: f64,
    pub d: f64,
}

pub const COMPARTMENTS: [&str; 7] = ["s", "p", "e", "i", "q", "r", "d"];

impl SeirState {
    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            s: a[0],
            p: a[1],
            e: a[2],
            i: a[3],
            q: a[4],
            r: a[5],
            d: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.s, self.p, self.e, self.i, self.q, self.r, self.d]
    }

    pub fn total(&self) -> f64 {
        self.to_array().iter().sum()
    }

    /// Cumulative confirmed cases, `Q + R + D`.
    pub fn confirmed(&self) -> f64 {
        self.q + self.r + self.d
    }

    /// Builds an initial state with `S` absorbing whatever the other
    /// compartments leave of `n_pop`.
    pub fn with_susceptible_remainder(n_pop: f64, p: f64, e: f64, i: f64, q: f64, r: f64, d: f64) -> Self {
        let s = n_pop - (p + e + i + q + r + d);
        Self { s, p, e, i, q, r, d }
    }

    pub fn validate(&self, n_pop: f64) -> Result<(), SeirError> {
        for (name, v) in COMPARTMENTS.iter().zip(self.to_array()) {
            if !v.is_finite() || v < 0.0 {
                return Err(SeirError::InvalidState(format!("{name} = {v}")));
            }
        }
        let total = self.total();
        if (total - n_pop).abs() > 1e-6 * n_pop {
            return Err(SeirError::InvalidState(format!(
                "compartments sum to {total}, population is {n_pop}"
            )));
        }
        Ok(())
    }
}

/// Time derivative of a [`SeirState`], same layout.
pub type SeirStateDerivative = SeirState;

/// Rate parameters of one regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeirParams {
    /// Protection rate [1/day].
    pub alpha: f64,
    /// Infection rate [1/day].
    pub beta: f64,
    /// Average latent time [days].
    pub gamma_inv: f64,
    /// Quarantine rate [1/day].
    pub delta: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    #[serde(default = "default_population")]
    pub n_pop: f64,
}

fn default_population() -> f64 {
    DEFAULT_POPULATION
}

impl SeirParams {
    /// Names of the eight rate coefficients, in vector order.
    pub const RATE_NAMES: [&'static str; 8] = [
        "alpha", "beta", "gamma_inv", "delta", "lambda0", "lambda1", "kappa0", "kappa1",
    ];

    pub fn rates(&self) -> [f64; 8] {
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

    pub fn with_rates(&self, r: &[f64; 8]) -> Self {
        Self {
            alpha: r[0],
            beta: r[1],
            gamma_inv: r[2],
            delta: r[3],
            lambda0: r[4],
            lambda1: r[5],
            kappa0: r[6],
            kappa1: r[7],
            n_pop: self.n_pop,
        }
    }

    pub fn validate(&self) -> Result<(), SeirError> {
        for (name, v) in Self::RATE_NAMES.iter().zip(self.rates()) {
            if !v.is_finite() || v < 0.0 {
                return Err(SeirError::InvalidParams(format!("{name} = {v}")));
            }
        }
        if self.gamma_inv <= 0.0 {
            return Err(SeirError::InvalidParams("gamma_inv must be > 0".into()));
        }
        if !(self.n_pop.is_finite() && self.n_pop > 0.0) {
            return Err(SeirError::InvalidParams(format!("n_pop = {}", self.n_pop)));
        }
        Ok(())
    }
}

/// Time-dependent cure rate `λ(t) = λ0 (1 − e^{−λ1 t})`.
pub fn cure_rate(lambda0: f64, lambda1: f64, t: f64) -> f64 {
    // -expm1(-x) == 1 - e^{-x}, accurate near t = 0
    lambda0 * -(-lambda1 * t).exp_m1()
}

/// Time-dependent mortality rate `κ(t) = κ0 e^{−κ1 t}`.
pub fn mortality_rate(kappa0: f64, kappa1: f64, t: f64) -> f64 {
    kappa0 * (-kappa1 * t).exp()
}

/// Right-hand side of the ODE system at regime-local time `t`.
pub fn derivatives(state: &SeirState, params: &SeirParams, t: f64) -> SeirStateDerivative {
    let lambda = cure_rate(params.lambda0, params.lambda1, t);
    let kappa = mortality_rate(params.kappa0, params.kappa1, t);
    let gamma = 1.0 / params.gamma_inv;
    let infection = params.beta * state.s * state.i / params.n_pop;
    let protection = params.alpha * state.s;
    let onset = gamma * state.e;
    let isolation = params.delta * state.i;
    let cured = lambda * state.q;
    let died = kappa * state.q;
    SeirState {
        s: -protection - infection,
        p: protection,
        e: infection - onset,
        i: onset - isolation,
        q: isolation - cured - died,
        r: cured,
        d: died,
    }
}

/// States sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub states: Vec<SeirState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> Option<&SeirState> {
        self.states.last()
    }

    pub fn series<T>(&self, f: impl Fn(&SeirState) -> T) -> Vec<T> {
        self.states.iter().map(f).collect()
    }
}

/// Cumulative confirmed cases `Q + R + D` at each grid point.
pub fn total_confirmed(traj: &Trajectory) -> Vec<f64> {
    traj.series(SeirState::confirmed)
}

/// Fixed-step classical RK4 integrator.
#[derive(Debug, Clone, Copy)]
pub struct Rk4 {
    pub step: f64,
}

impl Default for Rk4 {
    fn default() -> Self {
        Self { step: DEFAULT_STEP }
    }
}

#[inline]
fn axpy(y: &[f64; 7], h: f64, k: &[f64; 7]) -> [f64; 7] {
    let mut out = *y;
    for (o, kk) in out.iter_mut().zip(k) {
        *o += h * kk;
    }
    out
}

impl Rk4 {
    pub fn new(step: f64) -> Self {
        Self { step }
    }

    fn rhs(params: &SeirParams, y: &[f64; 7], t: f64) -> [f64; 7] {
        derivatives(&SeirState::from_array(*y), params, t).to_array()
    }

    /// Advances `y` from `t0` to `t1` in `ceil((t1 - t0) / step)` equal substeps.
    fn advance(&self, params: &SeirParams, y: [f64; 7], t0: f64, t1: f64) -> [f64; 7] {
        let span = t1 - t0;
        let n = ((span / self.step) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let mut y = y;
        for k in 0..n {
            let t = t0 + k as f64 * h;
            let k1 = Self::rhs(params, &y, t);
            let k2 = Self::rhs(params, &axpy(&y, 0.5 * h, &k1), t + 0.5 * h);
            let k3 = Self::rhs(params, &axpy(&y, 0.5 * h, &k2), t + 0.5 * h);
            let k4 = Self::rhs(params, &axpy(&y, h, &k3), t + h);
            for j in 0..7 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        y
    }

    /// Integrates from `init` at `t_grid[0]` and samples every grid point.
    ///
    /// The rate laws see `t - t_grid[0]`, i.e. the clock starts at the first
    /// grid point.
    pub fn integrate(&self, params: &SeirParams, init: &SeirState, t_grid: &[f64]) -> Result<Trajectory, SeirError> {
        params.validate()?;
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(SeirError::InvalidParams(format!("step = {}", self.step)));
        }
        if t_grid.is_empty() || t_grid.iter().any(|t| !t.is_finite()) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SeirError::InvalidGrid);
        }
        let origin = t_grid[0];
        let mut states = Vec::with_capacity(t_grid.len());
        let mut y = init.to_array();
        states.push(check_state(y, origin, params.n_pop)?);
        for w in t_grid.windows(2) {
            y = self.advance(params, y, w[0] - origin, w[1] - origin);
            let s = check_state(y, w[1], params.n_pop)?;
            y = s.to_array();
            states.push(s);
        }
        Ok(Trajectory {
            t: t_grid.to_vec(),
            states,
        })
    }
}

/// Rejects NaN/Inf and genuine negatives; clamps roundoff-sized negatives to zero.
fn check_state(y: [f64; 7], t: f64, n_pop: f64) -> Result<SeirState, SeirError> {
    let mut out = y;
    for (j, v) in out.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(SeirError::NonFiniteState { t });
        }
        if *v < 0.0 {
            if *v < -NEGATIVE_CLAMP * n_pop {
                return Err(SeirError::NegativeState {
                    t,
                    compartment: COMPARTMENTS[j],
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(SeirState::from_array(out))
}

/// Integrates with the default RK4 step.
pub fn integrate(params: &SeirParams, init: &SeirState, t_grid: &[f64]) -> Result<Trajectory, SeirError> {
    Rk4::default().integrate(params, init, t_grid)
}

/// Integer-day grid `0, 1, ..., days`.
pub fn day_grid(days: usize) -> Vec<f64> {
    (0..=days).map(|d| d as f64).collect()
}
