//! Two-regime (pre/post intervention) simulations and the delay sweep.
//!
//! The post regime takes over at `t* = issuance + delay`, starting from the
//! pre-regime state at `t*`. Each regime runs on its own clock, so the cure
//! and mortality rate laws restart at zero on the switch day.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{r_squared, rmse, FitError};
use crate::data::{slice_window, DataError, ObservedSeries};
use crate::seir::{total_confirmed, Rk4, SeirError, SeirParams, SeirState, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Seir(#[from] SeirError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRegimeConfig {
    /// Date of `init`; day 0 of the output grid.
    pub start: NaiveDate,
    pub pre: SeirParams,
    pub post: SeirParams,
    pub issuance_day: NaiveDate,
    pub delay_days: u32,
    pub horizon_end: NaiveDate,
    pub init: SeirState,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_step() -> f64 {
    crate::seir::DEFAULT_STEP
}

impl TwoRegimeConfig {
    pub fn horizon_days(&self) -> i64 {
        (self.horizon_end - self.start).num_days()
    }

    /// Day index of the regime switch.
    pub fn switch_day(&self) -> i64 {
        (self.issuance_day - self.start).num_days() + self.delay_days as i64
    }

    pub fn with_delay(&self, delay_days: u32) -> Self {
        Self {
            delay_days,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.issuance_day < self.start {
            return Err(ScenarioError::InvalidConfig(format!(
                "issuance {} precedes start {}",
                self.issuance_day, self.start
            )));
        }
        if self.switch_day() > self.horizon_days() {
            return Err(ScenarioError::InvalidConfig(format!(
                "switch day {} + {} lies beyond horizon {}",
                self.issuance_day, self.delay_days, self.horizon_end
            )));
        }
        if self.horizon_days() < 1 {
            return Err(ScenarioError::InvalidConfig("horizon must follow start".into()));
        }
        self.pre.validate()?;
        self.post.validate()?;
        self.init.validate(self.pre.n_pop)?;
        Ok(())
    }
}

/// Integrates the two regimes on the integer-day grid `0..=horizon`.
pub fn simulate_two_regime(cfg: &TwoRegimeConfig) -> Result<Trajectory, ScenarioError> {
    cfg.validate()?;
    let rk = Rk4::new(cfg.step);
    let horizon = cfg.horizon_days() as usize;
    let switch = cfg.switch_day() as usize;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut at_switch = cfg.init;
    if switch > 0 {
        let grid: Vec<f64> = (0..=switch).map(|d| d as f64).collect();
        let pre = rk.integrate(&cfg.pre, &cfg.init, &grid)?;
        at_switch = *pre.last().expect("non-empty trajectory");
        states.extend(pre.states);
    }
    if horizon > switch {
        // local clock: the post regime's rate laws start at 0 on the switch day
        let grid: Vec<f64> = (0..=horizon - switch).map(|d| d as f64).collect();
        let post = rk.integrate(&cfg.post, &at_switch, &grid)?;
        let skip = usize::from(switch > 0);
        states.extend(post.states.into_iter().skip(skip));
    }
    Ok(Trajectory {
        t: (0..=horizon).map(|d| d as f64).collect(),
        states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySweepRow {
    pub delay_days: u32,
    pub r2: f64,
    pub rmse: f64,
}

/// Runs one two-regime simulation per delay and scores total confirmed
/// cases against `obs` over `start..=horizon_end`. Rows follow input order.
pub fn delay_sweep_with_trajectories(
    cfg_base: &TwoRegimeConfig,
    delays: &[u32],
    obs: &ObservedSeries,
) -> Result<Vec<(DelaySweepRow, Trajectory)>, ScenarioError> {
    let window = slice_window(obs, cfg_base.start, cfg_base.horizon_end)?;
    let observed = ObservedSeries::as_f64(&window.total_confirmed);
    delays
        .par_iter()
        .map(|&delay| {
            let traj = simulate_two_regime(&cfg_base.with_delay(delay))?;
            let tc = total_confirmed(&traj);
            let row = DelaySweepRow {
                delay_days: delay,
                r2: r_squared(&tc, &observed)?,
                rmse: rmse(&tc, &observed)?,
            };
            Ok((row, traj))
        })
        .collect()
}

pub fn delay_sweep(
    cfg_base: &TwoRegimeConfig,
    delays: &[u32],
    obs: &ObservedSeries,
) -> Result<Vec<DelaySweepRow>, ScenarioError> {
    Ok(delay_sweep_with_trajectories(cfg_base, delays, obs)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::*;
    use crate::seir::day_grid;
    use chrono::Duration;

    fn base(delay: u32) -> TwoRegimeConfig {
        TwoRegimeConfig {
            start: italy_start(),
            pre: italy_pre_lockdown(),
            post: italy_post_lockdown(),
            issuance_day: italy_issuance(),
            delay_days: delay,
            horizon_end: italy_horizon(),
            init: italy_init(ITALY_I0),
            step: crate::seir::DEFAULT_STEP,
        }
    }

    fn fake_obs(cfg: &TwoRegimeConfig) -> ObservedSeries {
        let traj = simulate_two_regime(cfg).unwrap();
        let q: Vec<u64> = traj.series(|s| s.q.round() as u64);
        let r: Vec<u64> = traj.series(|s| s.r.round() as u64);
        let d: Vec<u64> = traj.series(|s| s.d.round() as u64);
        let n = q.len();
        ObservedSeries {
            dates: (0..n).map(|k| cfg.start + Duration::days(k as i64)).collect(),
            total_confirmed: (0..n).map(|k| q[k] + r[k] + d[k]).collect(),
            quarantined: q,
            recovered: r,
            deceased: d,
        }
    }

    #[test]
    fn identical_regimes_make_delay_irrelevant() {
        let mut cfg = base(0);
        cfg.post = cfg.pre;
        let reference = simulate_two_regime(&cfg).unwrap();
        for delay in 1..=7 {
            let t = simulate_two_regime(&cfg.with_delay(delay)).unwrap();
            // the post clock restarts at the switch, so λ(t) and κ(t) differ
            // downstream of Q; S, E and I do not see them
            for (a, b) in t.states.iter().zip(&reference.states) {
                assert!((a.s - b.s).abs() <= 1e-9 * a.s.max(1.0));
                assert!((a.e - b.e).abs() <= 1e-9 * a.e.max(1.0));
                assert!((a.i - b.i).abs() <= 1e-9 * a.i.max(1.0));
            }
        }
    }

    #[test]
    fn identical_regimes_without_time_dependence_are_exact() {
        let mut cfg = base(0);
        cfg.pre.lambda1 = 0.0;
        cfg.pre.kappa1 = 0.0;
        cfg.post = cfg.pre;
        let reference = simulate_two_regime(&cfg).unwrap();
        for delay in 1..=7 {
            let t = simulate_two_regime(&cfg.with_delay(delay)).unwrap();
            for (a, b) in t.states.iter().zip(&reference.states) {
                for (x, y) in a.to_array().iter().zip(b.to_array()) {
                    assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn degenerate_switch_placement_matches_single_regime() {
        let mut cfg = base(0);
        cfg.post = cfg.pre;
        let horizon = cfg.horizon_days() as usize;
        let single = Rk4::default().integrate(&cfg.pre, &cfg.init, &day_grid(horizon)).unwrap();
        // switch on the horizon itself: pre regime throughout
        let late = (cfg.horizon_end - cfg.issuance_day).num_days() as u32;
        let t = simulate_two_regime(&cfg.with_delay(late)).unwrap();
        assert_eq!(t.states, single.states);
        // switch on day 0: post regime throughout
        cfg.issuance_day = cfg.start;
        let t0 = simulate_two_regime(&cfg.with_delay(0)).unwrap();
        assert_eq!(t0.states, single.states);
    }

    #[test]
    fn continuity_at_switch() {
        let cfg = base(3);
        let traj = simulate_two_regime(&cfg).unwrap();
        let switch = cfg.switch_day() as usize;
        let pre = Rk4::default()
            .integrate(&cfg.pre, &cfg.init, &day_grid(switch))
            .unwrap();
        assert_eq!(traj.states[switch], *pre.last().unwrap());
        assert_eq!(traj.len(), 57);
    }

    #[test]
    fn later_switch_means_more_cases() {
        let t0 = total_confirmed(&simulate_two_regime(&base(0)).unwrap());
        let t5 = total_confirmed(&simulate_two_regime(&base(5)).unwrap());
        assert!(t5.last().unwrap() > t0.last().unwrap());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = base(60);
        assert!(matches!(simulate_two_regime(&cfg), Err(ScenarioError::InvalidConfig(_))));
        cfg.delay_days = 0;
        cfg.issuance_day = cfg.start - Duration::days(1);
        assert!(matches!(simulate_two_regime(&cfg), Err(ScenarioError::InvalidConfig(_))));
    }

    #[test]
    fn sweep_rows_follow_input_order() {
        let cfg = base(5);
        let obs = fake_obs(&cfg);
        let delays = [3, 0, 5, 1];
        let rows = delay_sweep(&cfg, &delays, &obs).unwrap();
        assert_eq!(rows.iter().map(|r| r.delay_days).collect::<Vec<_>>(), delays);
        let best = rows.iter().find(|r| r.delay_days == 5).unwrap();
        assert!(best.r2 > 0.999999 && best.rmse < 1.0);
        assert!(rows.iter().all(|r| r.rmse >= 0.0));
    }

    #[test]
    fn sweep_with_identical_regimes_is_flat() {
        let mut cfg = base(0);
        cfg.pre.lambda1 = 0.0;
        cfg.pre.kappa1 = 0.0;
        cfg.post = cfg.pre;
        let obs = fake_obs(&base(5));
        let rows = delay_sweep(&cfg, &[0, 1, 2, 3], &obs).unwrap();
        for r in &rows[1..] {
            assert!((r.r2 - rows[0].r2).abs() < 1e-9);
            assert!((r.rmse - rows[0].rmse).abs() < 1e-6);
        }
    }
}
