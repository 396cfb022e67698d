//! Reference regimes and initial conditions for Italy, 24 Feb – 20 Apr 2020.
//!
//! The rate rows are the published fitted values; the cure and mortality
//! pairs are read as `(λ0, λ1)` and `(κ0, κ1)`.

use chrono::NaiveDate;

use crate::seir::{SeirParams, SeirState, DEFAULT_POPULATION};

/// Pre-lockdown regime (24 Feb – 8 Mar).
pub fn italy_pre_lockdown() -> SeirParams {
    SeirParams {
        alpha: 0.0,
        beta: 1.1801,
        gamma_inv: 2.182,
        delta: 0.5985,
        lambda0: 0.0437,
        lambda1: 0.1161,
        kappa0: 0.0162,
        kappa1: 0.0461,
        n_pop: DEFAULT_POPULATION,
    }
}

/// After-lockdown regime (9 Mar – 20 Apr).
pub fn italy_post_lockdown() -> SeirParams {
    SeirParams {
        alpha: 0.1098,
        beta: 2.0,
        gamma_inv: 14.2091,
        delta: 0.3750,
        lambda0: 0.0167,
        lambda1: 2.0,
        kappa0: 0.0240,
        kappa1: 0.0432,
        n_pop: DEFAULT_POPULATION,
    }
}

/// Initial infectious (and exposed) count on 24 Feb.
pub const ITALY_I0: f64 = 221.0;

pub fn italy_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 2, 24).unwrap()
}

pub fn italy_issuance() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 9).unwrap()
}

pub fn italy_horizon() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 4, 20).unwrap()
}

/// State on 24 Feb: Q, R, D from the first report, `E = I = i0`.
pub fn italy_init(i0: f64) -> SeirState {
    SeirState::with_susceptible_remainder(DEFAULT_POPULATION, 0.0, i0, i0, 221.0, 1.0, 7.0)
}
