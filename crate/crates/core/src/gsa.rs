//! Global sensitivity analysis.
//!
//! Two families of estimators live here:
//!
//! * finite-change decompositions over replicated two-level full-factorial
//!   designs: every output change between two input points splits exactly
//!   into `2^d − 1` subset effects `φ_z`, from which total indices, Newton
//!   ratios and interaction spectra follow;
//! * given-data estimators that only need one input/output sample:
//!   first-order indices, the Kuiper-distance measure and conditional
//!   regression curves, all computed by binning one factor at a time.
//!
//! Subsets of factors are encoded as bitmasks: bit `i` set means factor `i`
//! takes its `x_to` value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;
use crate::uq::row_rng;

pub const MAX_FACTORS: usize = 20;
pub const DEFAULT_BINS: usize = 50;
/// Smallest replicate count accepted by [`total_indices_from_ensemble`].
pub const MIN_REPLICATES_FOR_TOTALS: usize = 30;
/// Given-data estimators need at least this many points per requested bin.
pub const MIN_POINTS_PER_BIN: usize = 10;
/// Points per bin below which estimates are noticeably biased.
pub const RECOMMENDED_POINTS_PER_BIN: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GsaError {
    #[error("{0} factors exceed the limit of {MAX_FACTORS}")]
    TooManyFactors(usize),
    #[error("endpoint dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("factor {0} has a zero shift")]
    ZeroDelta(usize),
    #[error("{got} replicates, at least {need} required")]
    TooFewReplicates { got: usize, need: usize },
    #[error("output variance {0} is not positive")]
    DegenerateVariance(f64),
    #[error("{n} samples for {m} bins: need at least {need} (recommended {recommended})")]
    TooFewSamples {
        n: usize,
        m: usize,
        need: usize,
        recommended: usize,
    },
    #[error("x and y lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

/// Exact decomposition of `g(x_to) − g(x_from)` into subset effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteChange {
    pub x_from: Vec<f64>,
    pub x_to: Vec<f64>,
    /// `g` at every vertex of the box spanned by the endpoints, by mask.
    pub vertices: Vec<f64>,
    /// `φ_z` by mask; entry 0 is unused and set to zero.
    pub effects: Vec<f64>,
}

impl FiniteChange {
    pub fn n_factors(&self) -> usize {
        self.x_from.len()
    }

    pub fn y_from(&self) -> f64 {
        self.vertices[0]
    }

    pub fn y_to(&self) -> f64 {
        self.vertices[self.vertices.len() - 1]
    }

    pub fn delta_y(&self) -> f64 {
        self.y_to() - self.y_from()
    }

    pub fn delta_x(&self, i: usize) -> f64 {
        self.x_to[i] - self.x_from[i]
    }

    /// First-order effect `φ_i`.
    pub fn first_order(&self, i: usize) -> f64 {
        self.effects[1 << i]
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.effects[(1 << i) | (1 << j)]
    }

    /// `|Σ_z φ_z − Δy| / |Δy|`.
    pub fn identity_residual(&self) -> f64 {
        let sum: f64 = self.effects[1..].iter().sum();
        let dy = self.delta_y();
        let err = (sum - dy).abs();
        if dy == 0.0 {
            err
        } else {
            err / dy.abs()
        }
    }
}

/// Möbius transform over the subset lattice: turns vertex values into
/// `φ_z = Σ_{s ⊆ z} (−1)^{|z|−|s|} g(s)`.
fn mobius(vertices: &[f64], d: usize) -> Vec<f64> {
    let mut phi = vertices.to_vec();
    for i in 0..d {
        let bit = 1usize << i;
        for mask in 0..phi.len() {
            if mask & bit != 0 {
                phi[mask] -= phi[mask ^ bit];
            }
        }
    }
    phi[0] = 0.0;
    phi
}

fn vertex(x_from: &[f64], x_to: &[f64], mask: usize) -> Vec<f64> {
    (0..x_from.len())
        .map(|j| if mask & (1 << j) != 0 { x_to[j] } else { x_from[j] })
        .collect()
}

/// Evaluates `g` once on each of the `2^d` vertices and decomposes the change.
pub fn finite_change_decomposition<G, E>(g: G, x_from: &[f64], x_to: &[f64]) -> Result<FiniteChange, GsaError>
where
    G: Fn(&[f64]) -> Result<f64, E>,
    E: std::fmt::Display,
{
    let d = x_from.len();
    if x_to.len() != d {
        return Err(GsaError::DimensionMismatch(d, x_to.len()));
    }
    if d > MAX_FACTORS {
        return Err(GsaError::TooManyFactors(d));
    }
    let vertices = (0..1usize << d)
        .map(|mask| g(&vertex(x_from, x_to, mask)).map_err(|e| GsaError::Model(e.to_string())))
        .collect::<Result<Vec<f64>, _>>()?;
    let effects = mobius(&vertices, d);
    Ok(FiniteChange {
        x_from: x_from.to_vec(),
        x_to: x_to.to_vec(),
        vertices,
        effects,
    })
}

/// `φ_ij / (Δx_i Δx_j)`.
pub fn newton_ratio(phi_ij: f64, dx_i: f64, dx_j: f64, (i, j): (usize, usize)) -> Result<f64, GsaError> {
    if dx_i == 0.0 {
        return Err(GsaError::ZeroDelta(i));
    }
    if dx_j == 0.0 {
        return Err(GsaError::ZeroDelta(j));
    }
    Ok(phi_ij / (dx_i * dx_j))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRatio {
    pub i: usize,
    pub j: usize,
    pub ratio: f64,
}

/// Second-order Newton ratios of one decomposition, pairs in `(i, j)` order.
pub fn newton_ratios(fc: &FiniteChange) -> Result<Vec<PairRatio>, GsaError> {
    let d = fc.n_factors();
    let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            let ratio = newton_ratio(fc.pair(i, j), fc.delta_x(i), fc.delta_x(j), (i, j))?;
            out.push(PairRatio { i, j, ratio });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteChangeEnsemble {
    pub n_factors: usize,
    pub seed: u64,
    pub replicates: Vec<FiniteChange>,
}

impl FiniteChangeEnsemble {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    pub fn max_identity_residual(&self) -> f64 {
        self.replicates
            .iter()
            .map(FiniteChange::identity_residual)
            .fold(0.0, f64::max)
    }

    /// Variance of all vertex outputs. Each vertex is marginally a draw from
    /// the input measure, so this estimates `V[Y]` when no separate sample
    /// is available.
    pub fn pooled_variance(&self) -> f64 {
        let all: Vec<f64> = self.replicates.iter().flat_map(|r| r.vertices.iter().copied()).collect();
        stats::variance(&all)
    }

    /// Average Newton ratio per pair over replicates where both shifts are
    /// non-zero; `None` when no replicate qualifies.
    pub fn mean_newton_ratios(&self) -> Vec<(usize, usize, Option<f64>)> {
        let d = self.n_factors;
        let mut out = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                let r: Vec<f64> = self
                    .replicates
                    .iter()
                    .filter_map(|fc| newton_ratio(fc.pair(i, j), fc.delta_x(i), fc.delta_x(j), (i, j)).ok())
                    .collect();
                out.push((i, j, (!r.is_empty()).then(|| stats::mean(&r))));
            }
        }
        out
    }

    /// Ensemble restricted to the replicates at `idx` (bootstrap resamples).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            n_factors: self.n_factors,
            seed: self.seed,
            replicates: idx.iter().map(|&k| self.replicates[k].clone()).collect(),
        }
    }
}

/// Draws `n_replicates` independent endpoint pairs (replicate `k` uses its
/// own stream of `seed`) and decomposes each. Replicates run in parallel;
/// the result does not depend on the thread count.
pub fn replicated_factorial<G, E, S>(g: G, sampler: S, n_replicates: usize, seed: u64) -> Result<FiniteChangeEnsemble, GsaError>
where
    G: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: std::fmt::Display,
    S: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    if n_replicates == 0 {
        return Err(GsaError::TooFewReplicates { got: 0, need: 1 });
    }
    let replicates = (0..n_replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = row_rng(seed, k);
            let a = sampler(&mut rng);
            let b = sampler(&mut rng);
            finite_change_decomposition(&g, &a, &b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FiniteChangeEnsemble {
        n_factors: replicates[0].n_factors(),
        seed,
        replicates,
    })
}

/// `T̂_i = mean_k (φ_i^k)² / (2 V_Y)`.
pub fn total_indices_from_ensemble(ens: &FiniteChangeEnsemble, output_variance: f64) -> Result<Vec<f64>, GsaError> {
    if ens.len() < MIN_REPLICATES_FOR_TOTALS {
        return Err(GsaError::TooFewReplicates {
            got: ens.len(),
            need: MIN_REPLICATES_FOR_TOTALS,
        });
    }
    if !(output_variance > 0.0 && output_variance.is_finite()) {
        return Err(GsaError::DegenerateVariance(output_variance));
    }
    Ok((0..ens.n_factors)
        .map(|i| {
            let sq: Vec<f64> = ens.replicates.iter().map(|r| r.first_order(i).powi(2)).collect();
            (stats::mean(&sq) / (2.0 * output_variance)).max(0.0)
        })
        .collect())
}

pub fn mean_dimension(t_indices: &[f64]) -> f64 {
    t_indices.iter().sum()
}

/// Share of variance not explained by first-order effects, `1 − Σ S_i`.
pub fn interaction_fraction(s_indices: &[f64]) -> f64 {
    1.0 - s_indices.iter().sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBar {
    /// Factor indices in increasing order.
    pub subset: Vec<usize>,
    pub mean_abs: f64,
}

impl SpectrumBar {
    pub fn order(&self) -> usize {
        self.subset.len()
    }
}

fn mask_members(mask: usize, d: usize) -> Vec<usize> {
    (0..d).filter(|&i| mask & (1 << i) != 0).collect()
}

/// Mean `|φ_z|` for every non-empty subset, ordered by size and then
/// lexicographically.
pub fn interaction_spectrum(ens: &FiniteChangeEnsemble) -> Vec<SpectrumBar> {
    let d = ens.n_factors;
    let n = ens.len().max(1) as f64;
    let mut bars: Vec<SpectrumBar> = (1..1usize << d)
        .map(|mask| SpectrumBar {
            subset: mask_members(mask, d),
            mean_abs: ens.replicates.iter().map(|r| r.effects[mask].abs()).sum::<f64>() / n,
        })
        .collect();
    bars.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| a.subset.cmp(&b.subset)));
    bars
}

/// Partition of sample indices into bins of increasing `x`.
///
/// Factors with at most `m` distinct values get one bin per value. Otherwise
/// the sorted sample is cut into `m` equal-count bins, each cut moved
/// forward past any run of tied values so that a value never straddles two
/// bins.
pub fn bin_partition(x: &[f64], m: usize) -> Vec<Vec<usize>> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut distinct = 0;
    for k in 0..n {
        if k == 0 || x[idx[k]] != x[idx[k - 1]] {
            distinct += 1;
        }
    }
    let mut cuts = Vec::new();
    if distinct <= m {
        for k in 1..n {
            if x[idx[k]] != x[idx[k - 1]] {
                cuts.push(k);
            }
        }
    } else {
        let mut last = 0;
        for b in 1..m {
            let mut c = (b * n / m).max(last);
            while c < n && c > 0 && x[idx[c]] == x[idx[c - 1]] {
                c += 1;
            }
            if c > last && c < n {
                cuts.push(c);
                last = c;
            }
        }
    }
    let mut bins = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for c in cuts.into_iter().chain(std::iter::once(n)) {
        if c > start {
            bins.push(idx[start..c].to_vec());
        }
        start = c;
    }
    bins
}

fn check_given_data(x: &[f64], y: &[f64], m: usize) -> Result<(), GsaError> {
    if x.len() != y.len() {
        return Err(GsaError::LengthMismatch(x.len(), y.len()));
    }
    let need = MIN_POINTS_PER_BIN * m.max(1);
    if x.len() < need {
        return Err(GsaError::TooFewSamples {
            n: x.len(),
            m,
            need,
            recommended: RECOMMENDED_POINTS_PER_BIN * m.max(1),
        });
    }
    Ok(())
}

/// Variance of bin-conditional means over the total variance, bins weighted
/// by their probability. Zero for a constant output.
pub fn first_order_given_data(x: &[f64], y: &[f64], m: usize) -> Result<f64, GsaError> {
    check_given_data(x, y, m)?;
    let n = y.len() as f64;
    let my = stats::mean(y);
    let total: f64 = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    if total == 0.0 {
        return Ok(0.0);
    }
    let between: f64 = bin_partition(x, m)
        .iter()
        .map(|bin| {
            let mb = bin.iter().map(|&k| y[k]).sum::<f64>() / bin.len() as f64;
            bin.len() as f64 / n * (mb - my).powi(2)
        })
        .sum();
    Ok(between / total)
}

/// `Σ_m p_m [sup(F_m − F) + sup(F − F_m)]` with suprema over the pooled `y`.
pub fn kuiper_beta(x: &[f64], y: &[f64], m: usize) -> Result<f64, GsaError> {
    check_given_data(x, y, m)?;
    let n = y.len();
    let ys = stats::sorted(y);
    // distinct pooled values and the marginal CDF at each
    let mut support = Vec::new();
    let mut cdf = Vec::new();
    for k in 0..n {
        if k + 1 == n || ys[k + 1] != ys[k] {
            support.push(ys[k]);
            cdf.push((k + 1) as f64 / n as f64);
        }
    }
    let beta = bin_partition(x, m)
        .iter()
        .map(|bin| {
            let yb = stats::sorted(&bin.iter().map(|&k| y[k]).collect::<Vec<_>>());
            let nb = yb.len() as f64;
            let (mut up, mut down) = (0.0f64, 0.0f64);
            let mut p = 0;
            for (v, f) in support.iter().zip(&cdf) {
                while p < yb.len() && yb[p] <= *v {
                    p += 1;
                }
                let fb = p as f64 / nb;
                up = up.max(fb - f);
                down = down.max(f - fb);
            }
            nb / n as f64 * (up + down)
        })
        .sum();
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCurve {
    pub factor: String,
    /// Mean factor value within each bin.
    pub centers: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub means: Vec<f64>,
    pub medians: Vec<f64>,
    pub populations: Vec<usize>,
    /// Sign of the Spearman correlation between bin means and centers.
    pub direction: i8,
}

impl ConditionalCurve {
    pub fn with_factor(mut self, name: &str) -> Self {
        self.factor = name.to_string();
        self
    }
}

pub fn conditional_regression(x: &[f64], y: &[f64], m: usize) -> Result<ConditionalCurve, GsaError> {
    check_given_data(x, y, m)?;
    let mut c = ConditionalCurve {
        factor: String::new(),
        centers: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        means: Vec::new(),
        medians: Vec::new(),
        populations: Vec::new(),
        direction: 0,
    };
    for bin in bin_partition(x, m) {
        let xb: Vec<f64> = bin.iter().map(|&k| x[k]).collect();
        let yb: Vec<f64> = bin.iter().map(|&k| y[k]).collect();
        c.centers.push(stats::mean(&xb));
        c.lower.push(xb.iter().copied().fold(f64::INFINITY, f64::min));
        c.upper.push(xb.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        c.means.push(stats::mean(&yb));
        c.medians.push(stats::median(&yb));
        c.populations.push(bin.len());
    }
    let rho = stats::spearman(&c.centers, &c.means);
    c.direction = if rho > 0.0 {
        1
    } else if rho < 0.0 {
        -1
    } else {
        0
    };
    Ok(c)
}

/// 1-based ranks, 1 = largest value; ties keep input order.
pub fn rank_descending(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; v.len()];
    for (r, &i) in idx.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// `b` bootstrap index sets of size `n`, resample `r` drawn from stream `r`.
pub fn bootstrap_indices(n: usize, b: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..b as u64)
        .map(|r| {
            let mut rng = row_rng(seed, r);
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect()
}

/// Given-data estimates for every factor column, computed in parallel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GivenDataIndices {
    pub first_order: Vec<f64>,
    pub kuiper: Vec<f64>,
    pub curves: Vec<ConditionalCurve>,
    pub output_variance: f64,
}

pub fn given_data_indices(names: &[String], x: &[Vec<f64>], y: &[f64], m: usize) -> Result<GivenDataIndices, GsaError> {
    let per_factor = x
        .par_iter()
        .zip(names)
        .map(|(col, name)| {
            Ok((
                first_order_given_data(col, y, m)?,
                kuiper_beta(col, y, m)?,
                conditional_regression(col, y, m)?.with_factor(name),
            ))
        })
        .collect::<Result<Vec<_>, GsaError>>()?;
    let mut out = GivenDataIndices {
        first_order: Vec::new(),
        kuiper: Vec::new(),
        curves: Vec::new(),
        output_variance: stats::variance(y),
    };
    for (s, k, c) in per_factor {
        out.first_order.push(s);
        out.kuiper.push(k);
        out.curves.push(c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub factors: Vec<String>,
    pub first_order: Vec<f64>,
    pub kuiper: Vec<f64>,
    /// Present when a finite-change ensemble was evaluated.
    pub total: Option<Vec<f64>>,
    pub rank_first_order: Vec<usize>,
    pub rank_kuiper: Vec<usize>,
    pub rank_total: Option<Vec<usize>>,
    pub mean_dimension: Option<f64>,
    pub interaction_fraction: f64,
    pub output_variance: f64,
    pub n_samples: usize,
    pub m_bins: usize,
    pub n_replicates: Option<usize>,
    pub interaction_means: Vec<SpectrumBar>,
}

impl SensitivityReport {
    pub fn new(
        factors: Vec<String>,
        given: &GivenDataIndices,
        n_samples: usize,
        m_bins: usize,
        ensemble: Option<(&FiniteChangeEnsemble, Vec<f64>)>,
    ) -> Self {
        let (total, n_replicates, spectrum) = match ensemble {
            Some((ens, t)) => (Some(t), Some(ens.len()), interaction_spectrum(ens)),
            None => (None, None, Vec::new()),
        };
        Self {
            rank_first_order: rank_descending(&given.first_order),
            rank_kuiper: rank_descending(&given.kuiper),
            rank_total: total.as_deref().map(rank_descending),
            mean_dimension: total.as_deref().map(mean_dimension),
            interaction_fraction: interaction_fraction(&given.first_order),
            factors,
            first_order: given.first_order.clone(),
            kuiper: given.kuiper.clone(),
            total,
            output_variance: given.output_variance,
            n_samples,
            m_bins,
            n_replicates,
            interaction_means: spectrum,
        }
    }
}
