//! TOML run configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use episens::calibrate::{FitOptions, InitPolicy, ParamBounds};
use episens::seir::{SeirParams, DEFAULT_POPULATION, DEFAULT_STEP};
use episens::uq::{InputDistributionSpec, RelativeWidths};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// National-trend CSV, relative to the config file.
    pub data: PathBuf,
    #[serde(default = "default_pop")]
    pub n_pop: f64,
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file; `--out` overrides.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub windows: Windows,
    #[serde(default)]
    pub fit: FitSection,
    pub regimes: Regimes,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub uq: UqSection,
    #[serde(default)]
    pub gsa: GsaSection,
}

fn default_pop() -> f64 {
    DEFAULT_POPULATION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    pub pre_start: NaiveDate,
    pub pre_end: NaiveDate,
    pub post_start: NaiveDate,
    pub post_end: NaiveDate,
    /// Calendar day the intervention is announced.
    pub issuance: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub starts: usize,
    pub jitter: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub step: f64,
    pub pre: Option<FitWindow>,
    pub post: Option<FitWindow>,
}

impl Default for FitSection {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            starts: o.starts,
            jitter: o.jitter,
            max_iter: o.max_iter,
            tol: o.tol,
            step: o.step,
            pre: None,
            post: None,
        }
    }
}

impl FitSection {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            starts: self.starts,
            jitter: self.jitter,
            seed,
            max_iter: self.max_iter,
            tol: self.tol,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub guess: SeirParams,
    #[serde(default = "default_bounds")]
    pub bounds: ParamBounds,
    pub i0: f64,
    /// When present, `i0` is fitted within these bounds.
    #[serde(default)]
    pub i0_bounds: Option<[f64; 2]>,
}

fn default_bounds() -> ParamBounds {
    ParamBounds::default()
}

impl FitWindow {
    pub fn policy(&self) -> InitPolicy {
        InitPolicy {
            i0: self.i0,
            i0_bounds: self.i0_bounds,
        }
    }
}

/// Regime coefficients used by forecasts, sweeps, UQ and GSA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regimes {
    pub pre: SeirParams,
    pub post: SeirParams,
    /// Replace the coefficients above with fits of the two windows.
    #[serde(default)]
    pub from_fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Initial infectious (and exposed) count on the pre-window start.
    pub i0: f64,
    /// Delay used by `forecast`.
    pub delay: u32,
    pub delays: Vec<u32>,
    pub step: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            i0: episens::presets::ITALY_I0,
            delay: 0,
            delays: (0..=5).collect(),
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqSection {
    pub n: usize,
    /// Output day; defaults to the end of the post window.
    pub horizon: Option<NaiveDate>,
    pub widths: RelativeWidths,
    pub max_offset: u32,
    /// Explicit marginals; overrides `widths` and `max_offset`.
    pub ranges: Option<InputDistributionSpec>,
    pub quantiles: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for UqSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            horizon: None,
            widths: RelativeWidths::default(),
            max_offset: 7,
            ranges: None,
            quantiles: vec![0.025, 0.5, 0.975],
            histogram_bins: episens::uq::DEFAULT_HISTOGRAM_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplicateUnit {
    /// `replicates` counts endpoint pairs.
    Pairs,
    /// `replicates` counts model evaluations (pairs × 2^d).
    Evaluations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceSource {
    /// Variance of the given-data sample.
    Sample,
    /// Variance of all finite-change vertex outputs.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GsaModel {
    Seir,
    /// Sum of the factors rescaled to `[0, 1]`; for checking the pipeline.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsaSection {
    pub bins: usize,
    /// Given-data sample size when no `sample` file is supplied.
    pub n_samples: usize,
    /// Existing sample CSV (as written by `uq`), relative to the config file.
    pub sample: Option<PathBuf>,
    /// Finite-change replicates; 0 skips the finite-change part.
    pub replicates: usize,
    pub replicate_unit: ReplicateUnit,
    pub variance: VarianceSource,
    pub model: GsaModel,
}

impl Default for GsaSection {
    fn default() -> Self {
        Self {
            bins: episens::gsa::DEFAULT_BINS,
            n_samples: 100_000,
            sample: None,
            replicates: 20_000,
            replicate_unit: ReplicateUnit::Pairs,
            variance: VarianceSource::Sample,
            model: GsaModel::Seir,
        }
    }
}

impl GsaSection {
    pub fn pairs(&self, n_factors: usize) -> usize {
        match self.replicate_unit {
            ReplicateUnit::Pairs => self.replicates,
            ReplicateUnit::Evaluations => self.replicates >> n_factors,
        }
    }
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub dir: PathBuf,
    /// Hex SHA-256 of the raw config bytes.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let config = Self::parse(text)?;
        use sha2::{Digest, Sha256};
        Ok(Self {
            config,
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            hash: hex::encode(Sha256::digest(&raw)),
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        c.apply_population();
        c.validate()?;
        Ok(c)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }
}

impl RunConfig {
    fn apply_population(&mut self) {
        let n = self.n_pop;
        self.regimes.pre.n_pop = n;
        self.regimes.post.n_pop = n;
        for w in [&mut self.fit.pre, &mut self.fit.post].into_iter().flatten() {
            w.guess.n_pop = n;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let w = &self.windows;
        let bad = |m: &str| Err(CliError::Input(format!("config: {m}")));
        if !(w.pre_start <= w.pre_end && w.pre_end < w.post_start && w.post_start <= w.post_end) {
            return bad("windows must be ordered pre_start <= pre_end < post_start <= post_end");
        }
        if w.issuance < w.pre_start || w.issuance > w.post_end {
            return bad("issuance must fall inside the data windows");
        }
        if !(self.n_pop > 0.0) {
            return bad("n_pop must be positive");
        }
        if self.uq.n == 0 || self.gsa.n_samples == 0 || self.gsa.bins == 0 || self.uq.histogram_bins == 0 {
            return bad("sample sizes and bin counts must be at least 1");
        }
        if self.scenario.delays.is_empty() {
            return bad("scenario.delays must not be empty");
        }
        if self.uq.quantiles.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("uq.quantiles must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn horizon(&self) -> NaiveDate {
        self.uq.horizon.unwrap_or(self.windows.post_end)
    }

    pub fn uq_spec(&self, post: &SeirParams) -> InputDistributionSpec {
        match &self.uq.ranges {
            Some(r) => r.clone(),
            None => InputDistributionSpec::around(post, self.scenario.i0, &self.uq.widths, self.uq.max_offset),
        }
    }
}
