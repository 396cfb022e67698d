//! Monte Carlo uncertainty quantification over the post-intervention regime.
//!
//! Six independent factors are perturbed: the post-regime `alpha`, `beta`,
//! `gamma_inv` and `delta`, the initial infectious count `i0`, and the
//! intervention offset `z` (days after issuance). Row `k` of a sample is drawn
//! from its own ChaCha stream keyed by `(seed, k)`, so samples do not depend on
//! how rows are scheduled across threads.

use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{simulate_two_regime, ScenarioError, TwoRegimeConfig};
use crate::seir::{SeirParams, SeirState};
use crate::stats::{self, Histogram};

pub const FACTOR_NAMES: [&str; 6] = ["alpha", "beta", "gamma_inv", "delta", "i0", "intervention_day"];
pub const N_FACTORS: usize = 6;
pub const DEFAULT_HISTOGRAM_BINS: usize = 100;
/// Largest tolerated fraction of failed rows in an ensemble.
pub const MAX_FAILURE_RATE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum UqError {
    #[error("empty support for factor `{0}`")]
    EmptySupport(&'static str),
    #[error("invalid distribution: {0}")]
    InvalidSpec(String),
    #[error("sample size must be at least 1")]
    EmptyRequest,
    #[error("{failed} of {n} ensemble rows failed (limit 0.1%)")]
    FailureRateExceeded { failed: usize, n: usize },
    #[error("no valid outputs to summarize")]
    EmptySample,
    #[error("horizon {horizon} outside {start}..={end}")]
    HorizonOutOfRange {
        horizon: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("sample file: {0}")]
    Io(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl From<csv::Error> for UqError {
    fn from(e: csv::Error) -> Self {
        UqError::Io(e.to_string())
    }
}

/// Relative half-widths used to build a spec around a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeWidths {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_inv: f64,
    pub delta: f64,
    pub i0: f64,
}

impl Default for RelativeWidths {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma_inv: 0.1,
            delta: 0.3,
            i0: 0.2,
        }
    }
}

/// Marginals of the six factors. Continuous factors are uniform on
/// `[lo, hi]`; `i0` and `intervention_offset` are discrete uniform on the
/// inclusive integer ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistributionSpec {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma_inv: [f64; 2],
    pub delta: [f64; 2],
    pub i0: [u64; 2],
    pub intervention_offset: [u32; 2],
}

impl InputDistributionSpec {
    /// Uniform boxes of relative half-width `w` around `post`, integers in
    /// `[ceil((1−w)·i0), floor((1+w)·i0)]`, offsets `0..=max_offset`.
    pub fn around(post: &SeirParams, i0: f64, widths: &RelativeWidths, max_offset: u32) -> Self {
        let band = |v: f64, w: f64| [v * (1.0 - w), v * (1.0 + w)];
        Self {
            alpha: band(post.alpha, widths.alpha),
            beta: band(post.beta, widths.beta),
            gamma_inv: band(post.gamma_inv, widths.gamma_inv),
            delta: band(post.delta, widths.delta),
            i0: [
                (i0 * (1.0 - widths.i0)).ceil().max(0.0) as u64,
                (i0 * (1.0 + widths.i0)).floor().max(0.0) as u64,
            ],
            intervention_offset: [0, max_offset],
        }
    }

    /// ±10% on α, β, γ⁻¹, ±30% on δ, ±20% on I₀, offsets 0..=7.
    pub fn standard(post: &SeirParams, i0: f64) -> Self {
        Self::around(post, i0, &RelativeWidths::default(), 7)
    }

    pub fn validate(&self) -> Result<(), UqError> {
        for (name, [lo, hi]) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma_inv", self.gamma_inv),
            ("delta", self.delta),
        ] {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(UqError::InvalidSpec(format!("{name} bounds not finite")));
            }
            if lo > hi {
                return Err(UqError::EmptySupport(name));
            }
            if lo < 0.0 {
                return Err(UqError::InvalidSpec(format!("{name} lower bound {lo} < 0")));
            }
        }
        if self.gamma_inv[0] <= 0.0 {
            return Err(UqError::InvalidSpec("gamma_inv must stay positive".into()));
        }
        if self.i0[0] > self.i0[1] {
            return Err(UqError::EmptySupport("i0"));
        }
        if self.intervention_offset[0] > self.intervention_offset[1] {
            return Err(UqError::EmptySupport("intervention_day"));
        }
        Ok(())
    }

    pub fn lower(&self) -> [f64; N_FACTORS] {
        [
            self.alpha[0],
            self.beta[0],
            self.gamma_inv[0],
            self.delta[0],
            self.i0[0] as f64,
            self.intervention_offset[0] as f64,
        ]
    }

    pub fn upper(&self) -> [f64; N_FACTORS] {
        [
            self.alpha[1],
            self.beta[1],
            self.gamma_inv[1],
            self.delta[1],
            self.i0[1] as f64,
            self.intervention_offset[1] as f64,
        ]
    }

    /// Whether factor `j` takes integer values only.
    pub fn is_discrete(j: usize) -> bool {
        j >= 4
    }

    /// One draw from the product measure.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> [f64; N_FACTORS] {
        let cont = |rng: &mut R, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.gen::<f64>();
        [
            cont(rng, self.alpha),
            cont(rng, self.beta),
            cont(rng, self.gamma_inv),
            cont(rng, self.delta),
            rng.gen_range(self.i0[0]..=self.i0[1]) as f64,
            rng.gen_range(self.intervention_offset[0]..=self.intervention_offset[1]) as f64,
        ]
    }

    pub fn contains(&self, row: &[f64; N_FACTORS]) -> bool {
        let lo = self.lower();
        let hi = self.upper();
        (0..N_FACTORS).all(|j| {
            row[j] >= lo[j] && row[j] <= hi[j] && (!Self::is_discrete(j) || row[j].fract() == 0.0)
        })
    }
}

/// Independent generator for row `row` of the sample keyed by `seed`.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSample {
    pub seed: u64,
    pub spec: InputDistributionSpec,
    pub rows: Vec<[f64; N_FACTORS]>,
}

impl InputSample {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

pub fn sample_inputs(spec: &InputDistributionSpec, n: usize, seed: u64) -> Result<InputSample, UqError> {
    spec.validate()?;
    if n == 0 {
        return Err(UqError::EmptyRequest);
    }
    let rows = (0..n as u64)
        .into_par_iter()
        .map(|k| spec.draw(&mut row_rng(seed, k)))
        .collect();
    Ok(InputSample {
        seed,
        spec: spec.clone(),
        rows,
    })
}

/// Model outputs aligned with an [`InputSample`]; failed rows carry `NaN` and
/// `ok = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    pub y: Vec<f64>,
    pub ok: Vec<bool>,
}

impl OutputSample {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.ok.iter().filter(|&&o| !o).count()
    }

    /// Outputs of the rows that succeeded.
    pub fn valid(&self) -> Vec<f64> {
        self.y.iter().zip(&self.ok).filter(|(_, &o)| o).map(|(&v, _)| v).collect()
    }
}

/// `base` with one sample row applied: post-regime α, β, γ⁻¹, δ, initial
/// infectious count and intervention offset. `E(0)` keeps the base `E/I`
/// ratio and `S(0)` absorbs the change so the population is unchanged.
pub fn apply_row(base: &TwoRegimeConfig, row: &[f64; N_FACTORS]) -> TwoRegimeConfig {
    let mut cfg = base.clone();
    cfg.post.alpha = row[0];
    cfg.post.beta = row[1];
    cfg.post.gamma_inv = row[2];
    cfg.post.delta = row[3];
    let i0 = row[4];
    let b = &base.init;
    let e0 = if b.i > 0.0 { i0 * b.e / b.i } else { b.e };
    cfg.init = SeirState::with_susceptible_remainder(b.total(), b.p, e0, i0, b.q, b.r, b.d);
    cfg.delay_days = row[5] as u32;
    cfg
}

/// Total confirmed cases on `horizon` for one row.
pub fn row_output(base: &TwoRegimeConfig, horizon: NaiveDate, row: &[f64; N_FACTORS]) -> Result<f64, ScenarioError> {
    let mut cfg = apply_row(base, row);
    cfg.horizon_end = horizon;
    let traj = simulate_two_regime(&cfg)?;
    let last = traj.last().expect("non-empty trajectory");
    Ok(last.confirmed())
}

fn check_horizon(base: &TwoRegimeConfig, horizon: NaiveDate) -> Result<(), UqError> {
    if horizon <= base.start || horizon > base.horizon_end {
        return Err(UqError::HorizonOutOfRange {
            horizon,
            start: base.start,
            end: base.horizon_end,
        });
    }
    Ok(())
}

/// Runs every row through [`simulate_two_regime`] in parallel and records
/// total confirmed cases on `horizon`.
pub fn evaluate_ensemble(samples: &InputSample, base: &TwoRegimeConfig, horizon: NaiveDate) -> Result<OutputSample, UqError> {
    check_horizon(base, horizon)?;
    let results: Vec<Option<f64>> = samples
        .rows
        .par_iter()
        .map(|row| {
            row_output(base, horizon, row)
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
        })
        .collect();
    let ok: Vec<bool> = results.iter().map(Option::is_some).collect();
    let y: Vec<f64> = results.iter().map(|r| r.unwrap_or(f64::NAN)).collect();
    let out = OutputSample { y, ok };
    let failed = out.failures();
    if failed as f64 > MAX_FAILURE_RATE * out.len() as f64 {
        return Err(UqError::FailureRateExceeded { failed, n: out.len() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileValue {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats {
    pub n: usize,
    /// Flagged rows left out of the summary.
    pub excluded: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub quantiles: Vec<QuantileValue>,
    /// `true` when every output is identical (including `n = 1`).
    pub degenerate: bool,
    pub histogram: Histogram,
}

pub fn empirical_stats(outputs: &OutputSample, quantiles: &[f64]) -> Result<EmpiricalStats, UqError> {
    empirical_stats_with_bins(outputs, quantiles, DEFAULT_HISTOGRAM_BINS)
}

pub fn empirical_stats_with_bins(outputs: &OutputSample, quantiles: &[f64], bins: usize) -> Result<EmpiricalStats, UqError> {
    let y = outputs.valid();
    if y.is_empty() {
        return Err(UqError::EmptySample);
    }
    let sorted = stats::sorted(&y);
    let sd = stats::variance(&y).sqrt();
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    Ok(EmpiricalStats {
        n: y.len(),
        excluded: outputs.len() - y.len(),
        mean: stats::mean(&y),
        sd,
        min,
        max,
        quantiles: quantiles
            .iter()
            .map(|&p| QuantileValue {
                p,
                value: stats::quantile_sorted(&sorted, p),
            })
            .collect(),
        degenerate: min == max,
        histogram: stats::histogram(&y, bins),
    })
}

/// Flat sample file contents: factor columns, output and validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub factors: Vec<String>,
    /// Column-major factor values.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub ok: Vec<bool>,
}

impl SampleTable {
    pub fn from_samples(inputs: &InputSample, outputs: &OutputSample) -> Self {
        Self {
            factors: FACTOR_NAMES.iter().map(|s| s.to_string()).collect(),
            x: (0..N_FACTORS).map(|j| inputs.column(j)).collect(),
            y: outputs.y.clone(),
            ok: outputs.ok.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Drops flagged rows.
    pub fn valid_only(&self) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&k| self.ok[k]).collect();
        Self {
            factors: self.factors.clone(),
            x: self.x.iter().map(|c| keep.iter().map(|&k| c[k]).collect()).collect(),
            y: keep.iter().map(|&k| self.y[k]).collect(),
            ok: vec![true; keep.len()],
        }
    }

    /// Header is the factor names followed by `y,ok`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), UqError> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.factors.iter().map(String::as_str).collect();
        header.extend(["y", "ok"]);
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec: Vec<String> = self.x.iter().map(|c| c[k].to_string()).collect();
            rec.push(self.y[k].to_string());
            rec.push(u8::from(self.ok[k]).to_string());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| UqError::Io(e.to_string()))?;
        Ok(())
    }

    /// Reads a sample file; every column except `y` and `ok` is a factor.
    /// A missing `ok` column means every row is valid.
    pub fn read_csv(text: &str) -> Result<Self, UqError> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let headers = rd.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| UqError::Io("missing column `y`".into()))?;
        let ok_col = headers.iter().position(|h| h == "ok");
        let factor_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != y_col && Some(c) != ok_col).collect();
        let mut t = SampleTable {
            factors: factor_cols.iter().map(|&c| headers[c].to_string()).collect(),
            x: vec![Vec::new(); factor_cols.len()],
            y: Vec::new(),
            ok: Vec::new(),
        };
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64, UqError> {
                rec[c]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| UqError::Io(format!("row {row}: `{}` is not a number", &rec[c])))
            };
            for (j, &c) in factor_cols.iter().enumerate() {
                t.x[j].push(num(c)?);
            }
            t.y.push(num(y_col)?);
            t.ok.push(match ok_col {
                Some(c) => rec[c].trim() != "0",
                None => true,
            });
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::*;

    fn base() -> TwoRegimeConfig {
        TwoRegimeConfig {
            start: italy_start(),
            pre: italy_pre_lockdown(),
            post: italy_post_lockdown(),
            issuance_day: italy_issuance(),
            delay_days: 0,
            horizon_end: italy_horizon(),
            init: italy_init(ITALY_I0),
            step: crate::seir::DEFAULT_STEP,
        }
    }

    fn spec() -> InputDistributionSpec {
        InputDistributionSpec::standard(&italy_post_lockdown(), ITALY_I0)
    }

    #[test]
    fn integer_support_for_i0() {
        let s = spec();
        // ceil(176.8) and floor(265.2)
        assert_eq!(s.i0, [177, 265]);
        assert_eq!(s.intervention_offset, [0, 7]);
        let s = InputDistributionSpec::standard(&italy_post_lockdown(), 10.0);
        assert_eq!(s.i0, [8, 12]);
    }

    #[test]
    fn degenerate_spec_gives_identical_rows() {
        let mut s = spec();
        s.alpha = [0.1; 2];
        s.beta = [2.0; 2];
        s.gamma_inv = [14.0; 2];
        s.delta = [0.4; 2];
        s.i0 = [221; 2];
        s.intervention_offset = [3; 2];
        let x = sample_inputs(&s, 50, 1).unwrap();
        assert!(x.rows.iter().all(|r| *r == [0.1, 2.0, 14.0, 0.4, 221.0, 3.0]));
    }

    #[test]
    fn empty_support_is_rejected() {
        let mut s = spec();
        s.delta = [0.5, 0.4];
        assert_eq!(sample_inputs(&s, 10, 0), Err(UqError::EmptySupport("delta")));
        let mut s = spec();
        s.i0 = [5, 4];
        assert_eq!(sample_inputs(&s, 10, 0), Err(UqError::EmptySupport("i0")));
        assert_eq!(sample_inputs(&spec(), 0, 0), Err(UqError::EmptyRequest));
    }

    #[test]
    fn intervention_day_frequencies() {
        let x = sample_inputs(&spec(), 100_000, 42).unwrap();
        let mut counts = [0usize; 8];
        for r in &x.rows {
            counts[r[5] as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 1e5;
            assert!((f - 0.125).abs() < 0.005, "frequency {f}");
        }
        assert!(x.rows.iter().all(|r| x.spec.contains(r)));
    }

    #[test]
    fn sampling_is_reproducible_and_row_keyed() {
        let a = sample_inputs(&spec(), 1000, 7).unwrap();
        let b = sample_inputs(&spec(), 1000, 7).unwrap();
        assert_eq!(a, b);
        // a prefix of a larger sample is the smaller sample
        let c = sample_inputs(&spec(), 10, 7).unwrap();
        assert_eq!(&a.rows[..10], &c.rows[..]);
        let d = sample_inputs(&spec(), 10, 8).unwrap();
        assert_ne!(c.rows, d.rows);
    }

    #[test]
    fn linear_function_mean_within_three_standard_errors() {
        let s = spec();
        let x = sample_inputs(&s, 20_000, 3).unwrap();
        let (lo, hi) = (s.lower(), s.upper());
        let w = [1.0, 2.0, -0.5, 3.0, 1e-3, 0.1];
        let f: Vec<f64> = x.rows.iter().map(|r| (0..6).map(|j| w[j] * r[j]).sum()).collect();
        let analytic: f64 = (0..6).map(|j| w[j] * 0.5 * (lo[j] + hi[j])).sum();
        let se = (stats::variance(&f) / f.len() as f64).sqrt();
        assert!((stats::mean(&f) - analytic).abs() < 3.0 * se);
    }

    #[test]
    fn single_baseline_row_matches_direct_run() {
        let b = base();
        let row = [b.post.alpha, b.post.beta, b.post.gamma_inv, b.post.delta, ITALY_I0, 4.0];
        let x = InputSample {
            seed: 0,
            spec: spec(),
            rows: vec![row],
        };
        let out = evaluate_ensemble(&x, &b, italy_horizon()).unwrap();
        let direct = simulate_two_regime(&b.with_delay(4)).unwrap();
        assert_eq!(out.y[0], direct.last().unwrap().confirmed());
        assert_eq!(out.ok, vec![true]);
    }

    #[test]
    fn later_intervention_gives_more_cases() {
        let b = base();
        let p = b.post;
        let mk = |z: f64| [p.alpha, p.beta, p.gamma_inv, p.delta, 221.0, z];
        let y0 = row_output(&b, italy_horizon(), &mk(0.0)).unwrap();
        let y7 = row_output(&b, italy_horizon(), &mk(7.0)).unwrap();
        assert!(y7 > y0);
    }

    #[test]
    fn ensemble_is_deterministic_and_half_samples_agree() {
        let b = base();
        let x = sample_inputs(&spec(), 2000, 11).unwrap();
        let y = evaluate_ensemble(&x, &b, italy_horizon()).unwrap();
        assert_eq!(y, evaluate_ensemble(&x, &b, italy_horizon()).unwrap());
        assert_eq!(y.failures(), 0);
        let full = empirical_stats(&y, &[0.5]).unwrap();
        let half = OutputSample {
            y: y.y[..1000].to_vec(),
            ok: y.ok[..1000].to_vec(),
        };
        let h = empirical_stats(&half, &[0.5]).unwrap();
        let se = full.sd / (1000f64).sqrt();
        assert!((h.mean - full.mean).abs() < 4.0 * se);
    }

    #[test]
    fn failures_are_flagged_and_counted() {
        let mut b = base();
        // an absurd infection rate overflows the state
        b.pre.beta = 1e9;
        let x = sample_inputs(&spec(), 4, 0).unwrap();
        assert_eq!(
            evaluate_ensemble(&x, &b, italy_horizon()),
            Err(UqError::FailureRateExceeded { failed: 4, n: 4 })
        );
        let late = italy_horizon() + chrono::Duration::days(1);
        assert!(matches!(
            evaluate_ensemble(&x, &base(), late),
            Err(UqError::HorizonOutOfRange { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let c = OutputSample {
            y: vec![5.0; 10],
            ok: vec![true; 10],
        };
        let s = empirical_stats(&c, &[0.025, 0.5, 0.975]).unwrap();
        assert_eq!((s.mean, s.sd), (5.0, 0.0));
        assert!(s.quantiles.iter().all(|q| q.value == 5.0));
        assert!(s.degenerate);

        let o = OutputSample {
            y: vec![1.0, 2.0, f64::NAN, 3.0, 4.0],
            ok: vec![true, true, false, true, true],
        };
        let s = empirical_stats(&o, &[0.5]).unwrap();
        assert_eq!(s.quantiles[0].value, 2.5);
        assert_eq!(s.excluded, 1);
        assert_eq!(s.histogram.counts.len(), DEFAULT_HISTOGRAM_BINS);
        assert_eq!(s.histogram.counts.iter().sum::<u64>(), 4);

        let none = OutputSample {
            y: vec![f64::NAN],
            ok: vec![false],
        };
        assert_eq!(empirical_stats(&none, &[0.5]), Err(UqError::EmptySample));
    }

    #[test]
    fn sample_table_round_trip() {
        let x = sample_inputs(&spec(), 20, 5).unwrap();
        let mut y = OutputSample {
            y: (0..20).map(|k| k as f64 * 1.5).collect(),
            ok: vec![true; 20],
        };
        y.ok[3] = false;
        y.y[3] = f64::NAN;
        let t = SampleTable::from_samples(&x, &y);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,beta,gamma_inv,delta,i0,intervention_day,y,ok\n"));
        let back = SampleTable::read_csv(&text).unwrap();
        assert_eq!(back.factors, t.factors);
        assert_eq!(back.x, t.x);
        assert_eq!(back.ok, t.ok);
        assert!(back.y[3].is_nan());
        assert_eq!(back.valid_only().len(), 19);
    }
}
