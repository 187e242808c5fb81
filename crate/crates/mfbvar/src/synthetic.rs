//! Simulation of mixed-frequency datasets from known parameters.
//!
//! Used by the benchmark harness (which times smoother variants on
//! synthetic systems), by recovery tests, and as a convenient way to
//! produce example data for the CLI.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::core_model::{
    aggregate_quarterly, FsvState, MixedFrequencyDataset, VarParameters,
};
use crate::error::Result;
use crate::fsv::SvParams;

/// Draws a stationary VAR with moderate own-lag persistence; coefficients
/// are rescaled until the companion spectral radius drops below 0.9.
pub fn stable_var(
    n_m: usize,
    n_q: usize,
    p: usize,
    rng: &mut ChaCha12Rng,
) -> VarParameters {
    let n = n_m + n_q;
    let cross = 0.15 / (n as f64).sqrt();
    let mut lags: Vec<DMatrix<f64>> = (0..p)
        .map(|l| {
            let decay = 1.0 / ((l + 1) * (l + 1)) as f64;
            DMatrix::from_fn(n, n, |i, j| {
                let base: f64 = rng.sample(StandardNormal);
                let own = if i == j && l == 0 { 0.35 } else { 0.0 };
                own + base * cross * decay
            })
        })
        .collect();
    let intercept = DVector::from_fn(n, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
    loop {
        let params = VarParameters::new(n_m, n_q, intercept.clone(), lags.clone()).unwrap();
        let comp = crate::core_model::build_companion(&params, &DMatrix::identity(n, n)).unwrap();
        let radius = comp
            .transition
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0f64, f64::max);
        if radius < 0.9 {
            return params;
        }
        for m in lags.iter_mut() {
            *m *= 0.8;
        }
    }
}

/// Simulates a factor stochastic volatility state over the effective
/// sample: AR(1) log-volatility paths, factor draws, and loadings.
pub fn random_fsv(
    n: usize,
    r: usize,
    t_eff: usize,
    loading_scale: f64,
    rng: &mut ChaCha12Rng,
) -> FsvState {
    let idio_params: Vec<SvParams> = (0..n)
        .map(|_| SvParams {
            mu: -0.3 + 0.2 * rng.sample::<f64, _>(StandardNormal),
            phi: 0.95,
            sigma: 0.2,
        })
        .collect();
    let factor_params: Vec<SvParams> =
        (0..r).map(|_| SvParams { mu: 0.0, phi: 0.95, sigma: 0.3 }).collect();

    let mut idio_logvol = DMatrix::zeros(t_eff, n);
    for i in 0..n {
        let p = &idio_params[i];
        let mut h = p.mu
            + p.sigma / (1.0 - p.phi * p.phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
        for t in 0..t_eff {
            idio_logvol[(t, i)] = h;
            h = p.mu + p.phi * (h - p.mu) + p.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut factor_logvol = DMatrix::zeros(t_eff, r);
    for j in 0..r {
        let p = &factor_params[j];
        let mut h =
            p.sigma / (1.0 - p.phi * p.phi).sqrt() * rng.sample::<f64, _>(StandardNormal);
        for t in 0..t_eff {
            factor_logvol[(t, j)] = h;
            h = p.phi * h + p.sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let loadings = DMatrix::from_fn(n, r, |_, _| {
        loading_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let factors = DMatrix::from_fn(t_eff, r, |t, j| {
        (factor_logvol[(t, j)] / 2.0).exp() * rng.sample::<f64, _>(StandardNormal)
    });
    FsvState { loadings, factors, idio_logvol, factor_logvol, idio_params, factor_params }
}

/// End-of-sample missingness: how many trailing monthly values each series
/// is missing, and how many recent quarter-end observations are hidden.
#[derive(Debug, Clone, Default)]
pub struct RaggedSpec {
    pub monthly_tail_missing: Vec<usize>,
    pub quarterly_tail_hidden: usize,
}

impl RaggedSpec {
    pub fn balanced(n_m: usize) -> Self {
        Self { monthly_tail_missing: vec![0; n_m], quarterly_tail_hidden: 0 }
    }

    /// A publication-calendar-like pattern: a third of the series missing
    /// one month, a sixth missing two, GDP one quarter behind.
    pub fn typical(n_m: usize) -> Self {
        let monthly_tail_missing =
            (0..n_m).map(|i| if i % 6 == 5 { 2 } else { usize::from(i % 3 == 2) }).collect();
        Self { monthly_tail_missing, quarterly_tail_hidden: 1 }
    }
}

/// Simulates a dataset of `t_len` monthly periods from the model. Returns
/// the dataset (with the ragged edge applied and quarterly values masked
/// off quarter-ends and before `first_quarterly_obs`) and the full latent
/// path.
pub fn simulate_dataset(
    params: &VarParameters,
    fsv: &FsvState,
    t_len: usize,
    quarter_phase: usize,
    first_quarterly_obs: usize,
    ragged: &RaggedSpec,
    rng: &mut ChaCha12Rng,
) -> Result<(MixedFrequencyDataset, DMatrix<f64>)> {
    let n_m = params.n_monthly;
    let n_q = params.n_quarterly;
    let n = params.n_vars();
    let p = params.lags();
    assert_eq!(fsv.len(), t_len - p, "volatility paths must cover the effective sample");

    let mut x = DMatrix::zeros(t_len, n);
    for t in 0..p {
        for v in 0..n {
            x[(t, v)] = 0.5 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let r = fsv.n_factors();
    for t in p..t_len {
        let tv = t - p;
        for i in 0..n {
            let mut v = params.intercept[i];
            for l in 1..=p {
                for j in 0..n {
                    v += params.coef(i, j, l) * x[(t - l, j)];
                }
            }
            for j in 0..r {
                v += fsv.loadings[(i, j)] * fsv.factors[(tv, j)];
            }
            v += (fsv.idio_logvol[(tv, i)] / 2.0).exp() * rng.sample::<f64, _>(StandardNormal);
            x[(t, i)] = v;
        }
    }

    let mut monthly = DMatrix::from_element(t_len, n_m, f64::NAN);
    for i in 0..n_m {
        let missing = ragged.monthly_tail_missing.get(i).copied().unwrap_or(0);
        let last = t_len.saturating_sub(missing);
        for t in 0..last {
            monthly[(t, i)] = x[(t, i)];
        }
    }
    let mut quarterly = DMatrix::from_element(t_len, n_q, f64::NAN);
    let mut quarter_ends: Vec<usize> = (0..t_len)
        .filter(|t| t % 3 == quarter_phase && *t >= first_quarterly_obs && *t >= 4)
        .collect();
    let visible = quarter_ends.len().saturating_sub(ragged.quarterly_tail_hidden);
    quarter_ends.truncate(visible);
    for &t in &quarter_ends {
        for j in 0..n_q {
            let window: Vec<f64> = (0..5).rev().map(|k| x[(t - k, n_m + j)]).collect();
            quarterly[(t, j)] = aggregate_quarterly(&window)?;
        }
    }
    let dataset = MixedFrequencyDataset::from_values(monthly, quarterly, quarter_phase)?;
    Ok((dataset, x))
}
