//! Filtering and simulation smoothing for the latent monthly series.
//!
//! Three smoother variants share one mean-correction sampling scheme
//! (simulate an auxiliary path, smooth data and auxiliary observations,
//! combine) and draw identical paths given the same noise:
//!
//! * [`SmootherVariant::Companion`]: the full companion-form state, the
//!   slow reference;
//! * [`SmootherVariant::Adaptive`]: the compact quarterly-window state with
//!   adaptive ragged-edge augmentation, filtered multivariate;
//! * [`SmootherVariant::AdaptiveUnivariate`]: the same compact state
//!   filtered element by element, the fast path used inside the sampler.

mod blas;
mod engine;
mod system;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;

pub use engine::{SmootherNoise, UniRun};
pub use system::{
    AugWindow, BuildInputs, ConditionalModel, ModelKind, ObsElem, PeriodModel, SparseRow,
    Transition,
};

use crate::core_model::{FsvState, MixedFrequencyDataset, VarParameters};
use crate::error::{MfbvarError, Result};

/// Smoother configuration: initial state scale and the relative tolerance
/// for declaring a scalar innovation variance singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherSettings {
    pub kappa: f64,
    pub singular_tol: f64,
}

impl Default for SmootherSettings {
    fn default() -> Self {
        Self { kappa: 100.0, singular_tol: 1e-12 }
    }
}

/// Which simulation smoother to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherVariant {
    Companion,
    Adaptive,
    AdaptiveUnivariate,
}

impl SmootherVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            SmootherVariant::Companion => "companion",
            SmootherVariant::Adaptive => "adaptive",
            SmootherVariant::AdaptiveUnivariate => "adaptive-univariate",
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            SmootherVariant::Companion => ModelKind::Companion,
            _ => ModelKind::Compact,
        }
    }

    fn univariate(&self) -> bool {
        matches!(self, SmootherVariant::AdaptiveUnivariate)
    }
}

impl std::str::FromStr for SmootherVariant {
    type Err = MfbvarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "companion" => Ok(SmootherVariant::Companion),
            "adaptive" => Ok(SmootherVariant::Adaptive),
            "adaptive-univariate" => Ok(SmootherVariant::AdaptiveUnivariate),
            other => Err(MfbvarError::Validation(format!("unknown smoother variant '{other}'"))),
        }
    }
}

/// Filter pass summary: log-likelihood plus per-period predicted and
/// filtered moments.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub log_likelihood: f64,
    pub predicted_mean: Vec<DVector<f64>>,
    pub predicted_cov: Vec<DMatrix<f64>>,
    pub filtered_mean: Vec<DVector<f64>>,
}

/// Smoothed state means.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub smoothed_mean: Vec<DVector<f64>>,
}

/// One simulation-smoother draw: the sampled state path and the implied
/// full latent monthly panel.
#[derive(Debug, Clone)]
pub struct StateDraw {
    pub states: Vec<DVector<f64>>,
    /// `T x n` latent path: observed monthly values are carried over from
    /// the data, everything latent comes from the sampled states.
    pub latent: DMatrix<f64>,
}

/// Volatility levels and factor contributions from an FSV state:
/// `(exp(idio_logvol), factors * loadings')`, both `(T-p) x n`.
pub fn fsv_levels(state: &FsvState) -> (DMatrix<f64>, DMatrix<f64>) {
    let idio_vol = state.idio_logvol.map(|h| h.exp());
    let factor_comp = &state.factors * state.loadings.transpose();
    (idio_vol, factor_comp)
}

/// Builds the conditional model for one variant.
pub fn build_model(
    params: &VarParameters,
    data: &MixedFrequencyDataset,
    idio_vol: &DMatrix<f64>,
    factor_comp: &DMatrix<f64>,
    settings: &SmootherSettings,
    kind: ModelKind,
) -> Result<ConditionalModel> {
    let inputs = BuildInputs {
        params,
        data,
        idio_vol,
        factor_comp,
        kappa: settings.kappa,
        singular_tol: settings.singular_tol,
    };
    match kind {
        ModelKind::Compact => system::build_compact_model(&inputs),
        ModelKind::Companion => system::build_companion_model(&inputs),
    }
}

/// Per-period augmentation windows implied by a dataset's ragged edge:
/// a monthly variable joins the state at its first missing period and
/// stays through the sample end, accumulating one lag per period.
pub fn adaptive_augment(
    data: &MixedFrequencyDataset,
    lags: usize,
) -> Result<Vec<Vec<AugWindow>>> {
    let l = lags.max(4);
    let t0 = l;
    let t_len = data.len();
    if t_len <= t0 {
        return Err(MfbvarError::Validation("sample shorter than the lag window".into()));
    }
    let n_m = data.n_monthly();
    let mut first_missing = vec![t_len; n_m];
    for (t, pat) in data.observation_patterns.iter().enumerate() {
        let mut iter = pat.monthly.iter().copied().peekable();
        for i in 0..n_m {
            if iter.peek() == Some(&i) {
                iter.next();
            } else if first_missing[i] == t_len {
                first_missing[i] = t;
            }
        }
    }
    Ok(system::adaptive_plan(&first_missing, t0, t_len, data.n_quarterly() * (l + 1)))
}

/// Reference multivariate Kalman filter (stacked observation vector, dense
/// innovation covariance). The oracle implementation used for equivalence
/// testing.
pub fn kalman_filter_reference(model: &ConditionalModel) -> Result<FilterOutput> {
    let data = model.data_stream();
    let streams: [&[Vec<f64>]; 1] = [&data];
    let run = engine::mv_filter(model, &streams, true, true)?;
    Ok(FilterOutput {
        log_likelihood: run.loglik[0],
        predicted_mean: run.pred_a.into_iter().next().unwrap(),
        predicted_cov: run.pred_p.unwrap_or_default(),
        filtered_mean: run.filt_a.into_iter().next().unwrap(),
    })
}

/// Multivariate smoother on the reference filter pass (oracle).
pub fn multivariate_smoother(model: &ConditionalModel) -> Result<SmootherOutput> {
    let data = model.data_stream();
    let streams: [&[Vec<f64>]; 1] = [&data];
    let run = engine::mv_filter(model, &streams, false, false)?;
    Ok(SmootherOutput { smoothed_mean: engine::mv_smooth(model, &run, 0) })
}

/// Univariate (sequential) filter: processes observation elements one at a
/// time, storing the per-element gain, innovation and variance needed by
/// the smoothing pass.
pub fn univariate_filter(model: &ConditionalModel) -> Result<(FilterOutput, UniRun)> {
    univariate_filter_opts(model, false)
}

/// As [`univariate_filter`], optionally capturing per-element state means
/// and covariances for inspection.
pub fn univariate_filter_opts(
    model: &ConditionalModel,
    traced: bool,
) -> Result<(FilterOutput, UniRun)> {
    let data = model.data_stream();
    let streams: [&[Vec<f64>]; 1] = [&data];
    let run = engine::uni_filter(model, &streams, true, traced)?;
    let out = FilterOutput {
        log_likelihood: run.loglik[0],
        predicted_mean: run.pred_a[0].clone(),
        predicted_cov: run.pred_p.clone().unwrap_or_default(),
        filtered_mean: run.filt_a[0].clone(),
    };
    Ok((out, run))
}

/// Backward smoothing over a stored univariate filter pass.
pub fn univariate_smoother(model: &ConditionalModel, run: &UniRun) -> Result<SmootherOutput> {
    Ok(SmootherOutput { smoothed_mean: engine::uni_smooth(model, run, 0) })
}

/// Draws the latent monthly path conditional on everything else, using the
/// given variant and a keyed random stream.
pub fn simulation_smoother(
    params: &VarParameters,
    fsv: &FsvState,
    data: &MixedFrequencyDataset,
    settings: &SmootherSettings,
    variant: SmootherVariant,
    rng: &mut ChaCha12Rng,
) -> Result<StateDraw> {
    let (idio_vol, factor_comp) = fsv_levels(fsv);
    let model = build_model(params, data, &idio_vol, &factor_comp, settings, variant.kind())?;
    let noise =
        SmootherNoise::generate(model.n_vars(), model.lag_window, model.horizon(), rng);
    simulation_smoother_with_noise(&model, data, &noise, variant.univariate())
}

/// Deterministic simulation-smoother draw from pre-generated noise; used by
/// the cross-variant equivalence gate and the benchmark harness.
pub fn simulation_smoother_with_noise(
    model: &ConditionalModel,
    data: &MixedFrequencyDataset,
    noise: &SmootherNoise,
    univariate: bool,
) -> Result<StateDraw> {
    let states = engine::sample_states(model, noise, univariate)?;
    let latent = extract_latent(model, &states, data)?;
    Ok(StateDraw { states, latent })
}

/// Maps a sampled state path back to the full `T x n` latent panel.
/// Observed monthly values are taken from the data; latent quarterly values
/// (including the presample window) and missing monthly values come from
/// the states.
pub fn extract_latent(
    model: &ConditionalModel,
    states: &[DVector<f64>],
    data: &MixedFrequencyDataset,
) -> Result<DMatrix<f64>> {
    let t_len = model.n_periods;
    let n_m = model.n_monthly;
    let n_q = model.n_quarterly;
    let n = n_m + n_q;
    let l = model.lag_window;
    let t0 = model.t0;
    let mut x = DMatrix::from_element(t_len, n, f64::NAN);

    for t in 0..t_len {
        for &i in &data.observation_patterns[t].monthly {
            x[(t, i)] = data.monthly[(t, i)];
        }
    }

    match model.kind {
        ModelKind::Compact => {
            for lag in 0..=l {
                for j in 0..n_q {
                    x[(t0 - lag, n_m + j)] = states[0][lag * n_q + j];
                }
            }
            for tau in 1..model.horizon() {
                for j in 0..n_q {
                    x[(t0 + tau, n_m + j)] = states[tau][j];
                }
            }
            for (tau, windows) in model.aug.iter().enumerate() {
                for w in windows {
                    let t = t0 + tau;
                    if x[(t, w.series)].is_nan() {
                        x[(t, w.series)] = states[tau][w.offset];
                    }
                }
            }
        }
        ModelKind::Companion => {
            for lag in 0..=l {
                for v in 0..n {
                    if x[(t0 - lag, v)].is_nan() {
                        x[(t0 - lag, v)] = states[0][lag * n + v];
                    }
                }
            }
            for tau in 1..model.horizon() {
                for v in 0..n {
                    if x[(t0 + tau, v)].is_nan() {
                        x[(t0 + tau, v)] = states[tau][v];
                    }
                }
            }
        }
    }

    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        let (row, col) = (bad % t_len, bad / t_len);
        return Err(MfbvarError::Numerical(format!(
            "latent extraction left a hole at period {row}, series {col}"
        )));
    }
    Ok(x)
}

/// Largest absolute violation of the observation constraints by a latent
/// panel: observed monthly values and triangular-aggregated quarterly
/// values must be reproduced exactly.
pub fn observation_error(x: &DMatrix<f64>, data: &MixedFrequencyDataset) -> f64 {
    let n_m = data.n_monthly();
    let mut worst = 0.0f64;
    for t in 0..data.len() {
        let pat = &data.observation_patterns[t];
        for &i in &pat.monthly {
            worst = worst.max((x[(t, i)] - data.monthly[(t, i)]).abs());
        }
        if t >= 4 {
            for &j in &pat.quarterly {
                let window: Vec<f64> = (0..5).rev().map(|k| x[(t - k, n_m + j)]).collect();
                let agg = crate::core_model::aggregate_quarterly(&window).unwrap();
                worst = worst.max((agg - data.quarterly[(t, j)]).abs());
            }
        }
    }
    worst
}
