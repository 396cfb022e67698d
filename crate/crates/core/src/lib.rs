//! Generalized SEIR epidemic modelling with calibration, Monte Carlo
//! uncertainty quantification and global sensitivity analysis.

pub mod calibrate;
pub mod data;
pub mod gsa;
pub mod presets;
pub mod scenario;
pub mod seir;
pub mod stats;
pub mod uq;

pub use calibrate::{fit, r_squared, rmse, FitError, FitOptions, FitResult, InitPolicy, ParamBounds};
pub use data::{parse_national_csv, slice_window, DataError, ObservedSeries};
pub use scenario::{delay_sweep, simulate_two_regime, DelaySweepRow, TwoRegimeConfig};
pub use seir::{
    cure_rate, derivatives, integrate, mortality_rate, total_confirmed, Rk4, SeirError, SeirParams, SeirState,
    Trajectory,
};
pub use uq::{
    empirical_stats, evaluate_ensemble, sample_inputs, EmpiricalStats, InputDistributionSpec, InputSample, OutputSample,
    SampleTable, UqError,
};
pub use gsa::{
    conditional_regression, finite_change_decomposition, first_order_given_data, interaction_spectrum, kuiper_beta,
    mean_dimension, newton_ratios, replicated_factorial, total_indices_from_ensemble, ConditionalCurve,
    FiniteChangeEnsemble, GsaError, SensitivityReport,
};
