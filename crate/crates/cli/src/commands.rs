//! The five subcommands. Each `run_*` function does the computation and
//! returns structured results; the `cmd_*` wrappers also write the artifacts.

use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use episens::calibrate::{fit, r_squared, rmse, FitError, FitResult, InitPolicy, ParamFile};
use episens::data::{parse_national_csv, slice_window, ObservedSeries};
use episens::gsa::{
    given_data_indices, replicated_factorial, total_indices_from_ensemble, ConditionalCurve, FiniteChangeEnsemble,
    GivenDataIndices, SensitivityReport,
};
use episens::scenario::{delay_sweep_with_trajectories, simulate_two_regime, DelaySweepRow, TwoRegimeConfig};
use episens::seir::{total_confirmed, SeirParams, Trajectory, COMPARTMENTS};
use episens::uq::{
    empirical_stats_with_bins, evaluate_ensemble, row_output, sample_inputs, EmpiricalStats, InputDistributionSpec,
    InputSample, OutputSample, SampleTable, FACTOR_NAMES, N_FACTORS,
};
use serde::Serialize;

use crate::config::{GsaModel, LoadedConfig, RunConfig, VarianceSource};
use crate::output::{OutputDir, Table};
use crate::CliError;

/// Everything a command needs: the parsed config, the effective seed and
/// the output directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    /// `seed` and `out` override the config values when given.
    pub fn new(loaded: LoadedConfig, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(loaded.config.seed);
        let out = out.unwrap_or_else(|| match &loaded.config.out {
            Some(p) => loaded.resolve(p),
            None => PathBuf::from("out"),
        });
        Self { loaded, seed, out }
    }

    pub fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn output(&self, command: &str) -> Result<OutputDir, CliError> {
        OutputDir::create(&self.out, command, self.seed, &self.loaded.hash)
    }

    pub fn load_data(&self) -> Result<ObservedSeries, CliError> {
        let path = self.loaded.resolve(&self.config().data);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        parse_national_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize)]
pub struct WindowFit {
    pub window: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub observations: usize,
    pub result: FitResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOutcome {
    pub pre: WindowFit,
    pub post: WindowFit,
}

fn fit_error(window: &str, e: FitError) -> CliError {
    match e {
        FitError::NoConvergence { .. } | FitError::Model(_) => CliError::Numerical(format!("{window} fit: {e}")),
        _ => CliError::Input(format!("{window} fit: {e}")),
    }
}

fn fit_window(
    ctx: &Context,
    data: &ObservedSeries,
    name: &str,
    (start, end): (NaiveDate, NaiveDate),
    defaults: (&SeirParams, InitPolicy),
) -> Result<WindowFit, CliError> {
    let cfg = ctx.config();
    let obs = slice_window(data, start, end).map_err(|e| CliError::Input(format!("{name} window: {e}")))?;
    let w = match name {
        "pre" => cfg.fit.pre.as_ref(),
        _ => cfg.fit.post.as_ref(),
    };
    let (guess, bounds, policy) = match w {
        Some(w) => (w.guess, w.bounds, w.policy()),
        None => (*defaults.0, Default::default(), defaults.1),
    };
    let result = fit(&obs, &guess, &bounds, &policy, &cfg.fit.options(ctx.seed)).map_err(|e| fit_error(name, e))?;
    Ok(WindowFit {
        window: name.to_string(),
        start,
        end,
        observations: obs.len(),
        result,
    })
}

pub fn run_fit(ctx: &Context, data: &ObservedSeries) -> Result<FitOutcome, CliError> {
    let cfg = ctx.config();
    let w = cfg.windows;
    let pre = fit_window(
        ctx,
        data,
        "pre",
        (w.pre_start, w.pre_end),
        (&cfg.regimes.pre, InitPolicy::fixed(cfg.scenario.i0)),
    )?;
    let post = fit_window(
        ctx,
        data,
        "post",
        (w.post_start, w.post_end),
        (&cfg.regimes.post, InitPolicy::fitted(cfg.scenario.i0, 1.0, cfg.n_pop)),
    )?;
    Ok(FitOutcome { pre, post })
}

fn fit_trajectory_table(data: &ObservedSeries, wf: &WindowFit) -> Result<Vec<u8>, CliError> {
    let obs = slice_window(data, wf.start, wf.end).map_err(|e| CliError::Input(e.to_string()))?;
    let grid: Vec<f64> = (0..obs.len()).map(|d| d as f64).collect();
    let traj = episens::seir::integrate(&wf.result.params, &wf.result.init, &grid)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut t = Table::new(&["date", "q_model", "r_model", "d_model", "q_obs", "r_obs", "d_obs"]);
    for (k, s) in traj.states.iter().enumerate() {
        t.row([
            obs.dates[k].to_string(),
            fmt(s.q),
            fmt(s.r),
            fmt(s.d),
            obs.quarantined[k].to_string(),
            obs.recovered[k].to_string(),
            obs.deceased[k].to_string(),
        ]);
    }
    Ok(t.into_bytes())
}

pub fn cmd_fit(ctx: &Context) -> Result<FitOutcome, CliError> {
    let data = ctx.load_data()?;
    let mut out = ctx.output("fit")?;
    let outcome = match run_fit(ctx, &data) {
        Ok(o) => o,
        Err(e) => {
            out.write_json("fit_error.json", &serde_json::json!({ "error": e.to_string() }))?;
            return Err(e);
        }
    };
    for wf in [&outcome.pre, &outcome.post] {
        let file = ParamFile {
            params: wf.result.params,
            i0: Some(wf.result.i0),
        };
        out.write(&format!("params_{}.toml", wf.window), file.to_toml().as_bytes())?;
        out.write(&format!("fit_{}_trajectory.csv", wf.window), &fit_trajectory_table(&data, wf)?)?;
    }
    out.write_json("fit_diagnostics.json", &outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- scenarios

/// Regime coefficients from the config, or refitted when `from_fit` is set.
pub fn regimes(ctx: &Context, data: &ObservedSeries) -> Result<(SeirParams, SeirParams), CliError> {
    let cfg = ctx.config();
    if cfg.regimes.from_fit {
        let f = run_fit(ctx, data)?;
        Ok((f.pre.result.params, f.post.result.params))
    } else {
        Ok((cfg.regimes.pre, cfg.regimes.post))
    }
}

/// Two-regime configuration starting on the pre-window start with the
/// observed `Q`, `R`, `D` and `E = I = scenario.i0`.
pub fn base_scenario(ctx: &Context, data: &ObservedSeries, pre: SeirParams, post: SeirParams) -> Result<TwoRegimeConfig, CliError> {
    let cfg = ctx.config();
    let first = slice_window(data, cfg.windows.pre_start, cfg.windows.pre_start)
        .map_err(|e| CliError::Input(format!("scenario start: {e}")))?;
    Ok(TwoRegimeConfig {
        start: cfg.windows.pre_start,
        pre,
        post,
        issuance_day: cfg.windows.issuance,
        delay_days: cfg.scenario.delay,
        horizon_end: cfg.windows.post_end,
        init: InitPolicy::initial_state(&first, cfg.n_pop, cfg.scenario.i0),
        step: cfg.scenario.step,
    })
}

fn scenario_error(e: episens::scenario::ScenarioError) -> CliError {
    use episens::scenario::ScenarioError as S;
    match e {
        S::InvalidConfig(_) | S::Data(_) => CliError::Input(e.to_string()),
        S::Seir(_) | S::Metric(_) => CliError::Numerical(e.to_string()),
    }
}

fn trajectory_table(start: NaiveDate, traj: &Trajectory, obs: Option<&ObservedSeries>) -> Vec<u8> {
    let mut header = vec!["date", "day"];
    header.extend(COMPARTMENTS);
    header.extend(["total", "observed_total"]);
    let mut t = Table::new(&header);
    let total = total_confirmed(traj);
    for (k, s) in traj.states.iter().enumerate() {
        let date = start + Duration::days(k as i64);
        let observed = obs
            .and_then(|o| o.index_of(date).map(|i| o.total_confirmed[i].to_string()))
            .unwrap_or_default();
        let mut row = vec![date.to_string(), k.to_string()];
        row.extend(s.to_array().iter().map(|&v| fmt(v)));
        row.extend([fmt(total[k]), observed]);
        t.row(row);
    }
    t.into_bytes()
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastSummary {
    pub delay_days: u32,
    pub switch_date: NaiveDate,
    pub horizon: NaiveDate,
    pub total_at_horizon: f64,
    pub observed_at_horizon: Option<u64>,
    pub r2: f64,
    pub rmse: f64,
}

pub fn cmd_forecast(ctx: &Context) -> Result<ForecastSummary, CliError> {
    let data = ctx.load_data()?;
    let (pre, post) = regimes(ctx, &data)?;
    let base = base_scenario(ctx, &data, pre, post)?;
    let traj = simulate_two_regime(&base).map_err(scenario_error)?;
    let total = total_confirmed(&traj);
    let window = slice_window(&data, base.start, base.horizon_end).map_err(|e| CliError::Input(e.to_string()))?;
    let observed = ObservedSeries::as_f64(&window.total_confirmed);
    let metric = |e: FitError| CliError::Numerical(e.to_string());
    let summary = ForecastSummary {
        delay_days: base.delay_days,
        switch_date: base.start + Duration::days(base.switch_day()),
        horizon: base.horizon_end,
        total_at_horizon: total[total.len() - 1],
        observed_at_horizon: window.total_confirmed.last().copied(),
        r2: r_squared(&total, &observed).map_err(metric)?,
        rmse: rmse(&total, &observed).map_err(metric)?,
    };
    let mut out = ctx.output("forecast")?;
    out.write("forecast_trajectory.csv", &trajectory_table(base.start, &traj, Some(&data)))?;
    out.write_json("forecast_summary.json", &summary)?;
    Ok(summary)
}

pub fn run_delay_sweep(ctx: &Context, data: &ObservedSeries) -> Result<Vec<(DelaySweepRow, Trajectory)>, CliError> {
    let (pre, post) = regimes(ctx, data)?;
    let base = base_scenario(ctx, data, pre, post)?;
    delay_sweep_with_trajectories(&base, &ctx.config().scenario.delays, data).map_err(scenario_error)
}

pub fn cmd_delay_sweep(ctx: &Context) -> Result<Vec<DelaySweepRow>, CliError> {
    let data = ctx.load_data()?;
    let rows = run_delay_sweep(ctx, &data)?;
    let cfg = ctx.config();
    let mut out = ctx.output("delay-sweep")?;
    let mut t = Table::new(&["delay_days", "switch_date", "r2", "rmse"]);
    for (row, _) in &rows {
        let switch = cfg.windows.issuance + Duration::days(row.delay_days as i64);
        t.row([row.delay_days.to_string(), switch.to_string(), fmt(row.r2), fmt(row.rmse)]);
    }
    out.write("delay_sweep.csv", &t.into_bytes())?;
    for (row, traj) in &rows {
        out.write(
            &format!("trajectory_delay_{}.csv", row.delay_days),
            &trajectory_table(cfg.windows.pre_start, traj, Some(&data)),
        )?;
    }
    Ok(rows.into_iter().map(|(r, _)| r).collect())
}

// ---------------------------------------------------------------- uq

#[derive(Debug, Clone)]
pub struct UqOutcome {
    pub spec: InputDistributionSpec,
    pub inputs: InputSample,
    pub outputs: OutputSample,
    pub stats: EmpiricalStats,
}

fn uq_error(e: episens::uq::UqError) -> CliError {
    use episens::uq::UqError as U;
    match e {
        U::FailureRateExceeded { .. } | U::EmptySample | U::Scenario(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Input(e.to_string()),
    }
}

/// Draws `n` rows, evaluates the two-regime model on each and summarizes.
pub fn run_uq(ctx: &Context, data: &ObservedSeries, n: usize) -> Result<UqOutcome, CliError> {
    let cfg = ctx.config();
    let (pre, post) = regimes(ctx, data)?;
    let base = base_scenario(ctx, data, pre, post)?;
    let spec = cfg.uq_spec(&post);
    let inputs = sample_inputs(&spec, n, ctx.seed).map_err(uq_error)?;
    let outputs = evaluate_ensemble(&inputs, &base, cfg.horizon()).map_err(uq_error)?;
    let stats = empirical_stats_with_bins(&outputs, &cfg.uq.quantiles, cfg.uq.histogram_bins).map_err(uq_error)?;
    Ok(UqOutcome {
        spec,
        inputs,
        outputs,
        stats,
    })
}

#[derive(Serialize)]
struct SampleMeta<'a> {
    seed: u64,
    n: usize,
    horizon: NaiveDate,
    spec: &'a InputDistributionSpec,
    factors: [&'static str; N_FACTORS],
    failures: usize,
}

pub fn cmd_uq(ctx: &Context) -> Result<UqOutcome, CliError> {
    let data = ctx.load_data()?;
    let o = run_uq(ctx, &data, ctx.config().uq.n)?;
    let mut out = ctx.output("uq")?;
    let mut buf = Vec::new();
    SampleTable::from_samples(&o.inputs, &o.outputs)
        .write_csv(&mut buf)
        .map_err(uq_error)?;
    out.write("uq_sample.csv", &buf)?;
    out.write_json(
        "uq_sample_info.json",
        &SampleMeta {
            seed: ctx.seed,
            n: o.inputs.len(),
            horizon: ctx.config().horizon(),
            spec: &o.spec,
            factors: FACTOR_NAMES,
            failures: o.outputs.failures(),
        },
    )?;
    out.write_json("uq_stats.json", &o.stats)?;
    let h = &o.stats.histogram;
    let mut t = Table::new(&["lower", "upper", "count"]);
    for (k, c) in h.counts.iter().enumerate() {
        t.row([fmt(h.edges[k]), fmt(h.edges[k + 1]), c.to_string()]);
    }
    out.write("uq_histogram.csv", &t.into_bytes())?;
    Ok(o)
}

// ---------------------------------------------------------------- gsa

#[derive(Debug, Clone)]
pub struct GsaOutcome {
    pub report: SensitivityReport,
    pub given: GivenDataIndices,
    pub ensemble: Option<FiniteChangeEnsemble>,
    /// The given-data sample the indices were computed from.
    pub table: SampleTable,
}

fn gsa_error(e: episens::gsa::GsaError) -> CliError {
    use episens::gsa::GsaError as G;
    match e {
        G::DegenerateVariance(_) | G::ZeroDelta(_) | G::Model(_) => CliError::Numerical(e.to_string()),
        _ => CliError::Input(e.to_string()),
    }
}

/// Model seen by the sensitivity analysis: a function of the six factors.
pub struct GsaModelFn {
    kind: GsaModel,
    base: TwoRegimeConfig,
    horizon: NaiveDate,
    lo: [f64; N_FACTORS],
    hi: [f64; N_FACTORS],
}

impl GsaModelFn {
    pub fn eval(&self, x: &[f64]) -> Result<f64, String> {
        let row: [f64; N_FACTORS] = x.try_into().map_err(|_| format!("expected {N_FACTORS} factors"))?;
        match self.kind {
            GsaModel::Seir => row_output(&self.base, self.horizon, &row).map_err(|e| e.to_string()),
            GsaModel::Additive => Ok((0..N_FACTORS)
                .filter(|&j| self.hi[j] > self.lo[j])
                .map(|j| (row[j] - self.lo[j]) / (self.hi[j] - self.lo[j]))
                .sum()),
        }
    }
}

/// Given-data table: read from `gsa.sample` or generated afresh with `n`
/// rows (the same rows `uq` draws for this seed).
fn given_data_table(ctx: &Context, spec: &InputDistributionSpec, model: &GsaModelFn, n: usize) -> Result<SampleTable, CliError> {
    if let Some(p) = &ctx.config().gsa.sample {
        let path = ctx.loaded.resolve(p);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        return Ok(SampleTable::read_csv(&text).map_err(uq_error)?.valid_only());
    }
    let inputs = sample_inputs(spec, n, ctx.seed).map_err(uq_error)?;
    let y: Vec<Result<f64, String>> = {
        use rayon::prelude::*;
        inputs.rows.par_iter().map(|r| model.eval(r)).collect()
    };
    let mut outputs = OutputSample {
        y: Vec::with_capacity(n),
        ok: Vec::with_capacity(n),
    };
    for v in y {
        outputs.ok.push(v.is_ok());
        outputs.y.push(v.unwrap_or(f64::NAN));
    }
    let failed = outputs.failures();
    if failed as f64 > episens::uq::MAX_FAILURE_RATE * n as f64 {
        return Err(CliError::Numerical(format!("{failed} of {n} model runs failed")));
    }
    Ok(SampleTable::from_samples(&inputs, &outputs).valid_only())
}

pub fn run_gsa(ctx: &Context, data: &ObservedSeries) -> Result<GsaOutcome, CliError> {
    let cfg = ctx.config();
    let (pre, post) = regimes(ctx, data)?;
    let base = base_scenario(ctx, data, pre, post)?;
    let spec = cfg.uq_spec(&post);
    let model = GsaModelFn {
        kind: cfg.gsa.model,
        base,
        horizon: cfg.horizon(),
        lo: spec.lower(),
        hi: spec.upper(),
    };
    let table = given_data_table(ctx, &spec, &model, cfg.gsa.n_samples)?;
    let given = given_data_indices(&table.factors, &table.x, &table.y, cfg.gsa.bins).map_err(gsa_error)?;

    let pairs = cfg.gsa.pairs(N_FACTORS);
    let ensemble = if pairs > 0 {
        if table.factors.iter().map(String::as_str).ne(FACTOR_NAMES) {
            return Err(CliError::Input(format!(
                "finite-change analysis needs the factors {FACTOR_NAMES:?}, sample has {:?}",
                table.factors
            )));
        }
        let ens = replicated_factorial(
            |x: &[f64]| model.eval(x),
            |rng| spec.draw(rng).to_vec(),
            pairs,
            ctx.seed.wrapping_add(1),
        )
        .map_err(gsa_error)?;
        let v = match cfg.gsa.variance {
            VarianceSource::Sample => given.output_variance,
            VarianceSource::Pooled => ens.pooled_variance(),
        };
        let t = total_indices_from_ensemble(&ens, v).map_err(gsa_error)?;
        Some((ens, t))
    } else {
        None
    };
    let report = SensitivityReport::new(
        table.factors.clone(),
        &given,
        table.len(),
        cfg.gsa.bins,
        ensemble.as_ref().map(|(e, t)| (e, t.clone())),
    );
    Ok(GsaOutcome {
        report,
        given,
        ensemble: ensemble.map(|(e, _)| e),
        table,
    })
}

fn curve_table(c: &ConditionalCurve) -> Vec<u8> {
    let mut t = Table::new(&["center", "lower", "upper", "mean", "median", "population"]);
    for k in 0..c.centers.len() {
        t.row([
            fmt(c.centers[k]),
            fmt(c.lower[k]),
            fmt(c.upper[k]),
            fmt(c.means[k]),
            fmt(c.medians[k]),
            c.populations[k].to_string(),
        ]);
    }
    t.into_bytes()
}

pub fn cmd_gsa(ctx: &Context) -> Result<GsaOutcome, CliError> {
    let data = ctx.load_data()?;
    let o = run_gsa(ctx, &data)?;
    let mut out = ctx.output("gsa")?;
    out.write_json("gsa_report.json", &o.report)?;
    let names = &o.report.factors;
    let mut t = Table::new(&["subset", "order", "mean_abs"]);
    for bar in &o.report.interaction_means {
        let label: Vec<&str> = bar.subset.iter().map(|&i| names[i].as_str()).collect();
        t.row([label.join("+"), bar.order().to_string(), fmt(bar.mean_abs)]);
    }
    out.write("gsa_interaction_spectrum.csv", &t.into_bytes())?;
    if let Some(ens) = &o.ensemble {
        let mut t = Table::new(&["factor_i", "factor_j", "mean_newton_ratio"]);
        for (i, j, r) in ens.mean_newton_ratios() {
            t.row([names[i].clone(), names[j].clone(), r.map(fmt).unwrap_or_default()]);
        }
        out.write("gsa_newton_ratios.csv", &t.into_bytes())?;
    }
    for c in &o.given.curves {
        out.write(&format!("gsa_curve_{}.csv", c.factor), &curve_table(c))?;
    }
    Ok(o)
}
