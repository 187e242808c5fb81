//! Factor stochastic volatility block.
//!
//! The VAR innovation is decomposed as `u_t = Lambda f_t + nu_t` with
//! independent AR(1) log-volatility chains for the factors and the
//! idiosyncratic terms, so `Sigma_t = Lambda Omega^f_t Lambda' + Omega^nu_t`.
//! Log-volatility paths are drawn exactly via the Kim-Shephard mixture
//! representation using the 10-component approximation of Omori et al.
//! (2007), and the chain hyperparameters are drawn with a base sweep plus
//! one ancillarity-sufficiency interweaving move.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::core_model::{cholesky_with_jitter, FsvState};
use crate::error::{MfbvarError, Result};
use crate::priors::FsvPriorConfig;
use crate::rng::StreamFactory;

/// Offset added inside `log(residual^2 + OFFSET)` to guard against log(0).
/// Small enough that the implied floor on the transformed observations sits
/// far below any volatility level the priors can reach; a larger guard
/// creates a quasi-absorbing low-volatility regime.
pub const LOGVOL_OFFSET: f64 = 1e-12;

const OMORI_PROBS: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
const OMORI_MEANS: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384,
    -14.65000,
];
const OMORI_VARS: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// Ten-component normal mixture approximating the log chi-squared(1)
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTable {
    pub probs: [f64; 10],
    pub means: [f64; 10],
    pub vars: [f64; 10],
}

impl Default for MixtureTable {
    fn default() -> Self {
        Self { probs: OMORI_PROBS, means: OMORI_MEANS, vars: OMORI_VARS }
    }
}

impl MixtureTable {
    pub fn mean(&self) -> f64 {
        self.probs.iter().zip(self.means.iter()).map(|(p, m)| p * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs
            .iter()
            .zip(self.means.iter())
            .zip(self.vars.iter())
            .map(|((p, m), v)| p * (v + m * m))
            .sum::<f64>()
            - mean * mean
    }
}

/// AR(1) log-volatility parameters for one chain. Factor chains carry
/// `mu = 0` (the level is fixed for identification).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    pub mu: f64,
    pub phi: f64,
    pub sigma: f64,
}

impl SvParams {
    pub fn validate(&self) -> Result<()> {
        if self.phi.abs() >= 1.0 {
            return Err(MfbvarError::Validation(format!("|phi| must be < 1, got {}", self.phi)));
        }
        if self.sigma <= 0.0 {
            return Err(MfbvarError::Validation(format!("sigma must be > 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Innovation covariance at volatility-path index `t`, together with its
/// lower Cholesky factor.
pub fn sigma_t(state: &FsvState, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = state.n_series();
    let r = state.n_factors();
    if t >= state.len() {
        return Err(MfbvarError::Validation(format!(
            "period {t} out of range (path length {})",
            state.len()
        )));
    }
    let mut sigma = DMatrix::zeros(n, n);
    for j in 0..r {
        let wf = state.factor_logvol[(t, j)].exp();
        if !wf.is_finite() {
            return Err(MfbvarError::Numerical("factor volatility not finite".into()));
        }
        let col = state.loadings.column(j);
        for a in 0..n {
            for b in 0..n {
                sigma[(a, b)] += wf * col[a] * col[b];
            }
        }
    }
    for i in 0..n {
        let wv = state.idio_logvol[(t, i)].exp();
        if !wv.is_finite() {
            return Err(MfbvarError::Numerical("idiosyncratic volatility not finite".into()));
        }
        sigma[(i, i)] += wv;
    }
    let chol = cholesky_with_jitter(&sigma, 1e-10)?;
    Ok((sigma, chol))
}

fn draw_factor_at(
    loadings: &DMatrix<f64>,
    resid_row: &DVector<f64>,
    idio_var: &DVector<f64>,
    factor_var: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = loadings.ncols();
    let n = loadings.nrows();
    let mut precision = DMatrix::zeros(r, r);
    let mut rhs = DVector::zeros(r);
    for i in 0..n {
        let w = 1.0 / idio_var[i];
        let li = loadings.row(i);
        for a in 0..r {
            rhs[a] += w * li[a] * resid_row[i];
            for b in a..r {
                precision[(a, b)] += w * li[a] * li[b];
            }
        }
    }
    for a in 0..r {
        precision[(a, a)] += 1.0 / factor_var[a];
        for b in 0..a {
            precision[(a, b)] = precision[(b, a)];
        }
    }
    let chol = nalgebra::Cholesky::new(precision)
        .ok_or_else(|| MfbvarError::Cholesky("factor posterior precision not PD".into()))?;
    let mean = chol.solve(&rhs);
    // mean + L^{-T} z draws from N(mean, Q^{-1}).
    let scaled = chol
        .l()
        .tr_solve_lower_triangular(noise)
        .ok_or_else(|| MfbvarError::Cholesky("triangular solve failed".into()))?;
    Ok(mean + scaled)
}

/// Draws the factor path. Periods are conditionally independent; each one
/// is a small Gaussian posterior with precision
/// `Lambda' (Omega^nu_t)^{-1} Lambda + (Omega^f_t)^{-1}`.
pub fn draw_factors(
    loadings: &DMatrix<f64>,
    resid: &DMatrix<f64>,
    idio_vol: &DMatrix<f64>,
    factor_vol: &DMatrix<f64>,
    streams: &StreamFactory,
) -> Result<DMatrix<f64>> {
    let t_len = resid.nrows();
    let r = loadings.ncols();
    if r == 0 {
        return Ok(DMatrix::zeros(t_len, 0));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            let mut rng = streams.rng(t as u64);
            let noise = DVector::from_fn(r, |_, _| rng.sample(StandardNormal));
            let resid_row = resid.row(t).transpose();
            let iv = idio_vol.row(t).transpose();
            let fv = factor_vol.row(t).transpose();
            let f = draw_factor_at(loadings, &resid_row, &iv, &fv, &noise)?;
            Ok(f.iter().copied().collect())
        })
        .collect();
    let mut out = DMatrix::zeros(t_len, r);
    for (t, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            out[(t, j)] = v;
        }
    }
    Ok(out)
}

fn draw_loading_row(
    factors: &DMatrix<f64>,
    resid_col: &DVector<f64>,
    idio_var_col: &DVector<f64>,
    prior_var: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = factors.ncols();
    let t_len = factors.nrows();
    let mut precision = DMatrix::from_diagonal_element(r, r, 1.0 / prior_var);
    let mut rhs = DVector::zeros(r);
    for t in 0..t_len {
        let w = 1.0 / idio_var_col[t];
        let ft = factors.row(t);
        for a in 0..r {
            rhs[a] += w * ft[a] * resid_col[t];
            for b in a..r {
                precision[(a, b)] += w * ft[a] * ft[b];
            }
        }
    }
    for a in 0..r {
        for b in 0..a {
            precision[(a, b)] = precision[(b, a)];
        }
    }
    let chol = nalgebra::Cholesky::new(precision)
        .ok_or_else(|| MfbvarError::Cholesky("loading posterior precision not PD".into()))?;
    let mean = chol.solve(&rhs);
    let scaled = chol
        .l()
        .tr_solve_lower_triangular(noise)
        .ok_or_else(|| MfbvarError::Cholesky("triangular solve failed".into()))?;
    Ok(mean + scaled)
}

/// Draws the loading matrix row by row from independent heteroskedastic
/// regression posteriors with a `N(0, prior_var)` prior on each element.
pub fn draw_loadings(
    factors: &DMatrix<f64>,
    resid: &DMatrix<f64>,
    idio_vol: &DMatrix<f64>,
    prior_var: f64,
    streams: &StreamFactory,
) -> Result<DMatrix<f64>> {
    let n = resid.ncols();
    let r = factors.ncols();
    if r == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.rng(i as u64);
            let noise = DVector::from_fn(r, |_, _| rng.sample(StandardNormal));
            let resid_col = DVector::from_fn(resid.nrows(), |t, _| resid[(t, i)]);
            let var_col = DVector::from_fn(idio_vol.nrows(), |t, _| idio_vol[(t, i)]);
            let row = draw_loading_row(factors, &resid_col, &var_col, prior_var, &noise)?;
            Ok(row.iter().copied().collect())
        })
        .collect();
    let mut out = DMatrix::zeros(n, r);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

/// Conditional categorical probabilities of the mixture indicators for one
/// observation, in log space.
fn indicator_log_probs(ystar: f64, h: f64, table: &MixtureTable) -> [f64; 10] {
    let mut out = [0.0; 10];
    for k in 0..10 {
        let z = ystar - h - table.means[k];
        out[k] = table.probs[k].ln() - 0.5 * table.vars[k].ln() - 0.5 * z * z / table.vars[k];
    }
    out
}

/// Draws the mixture indicator path for one chain given the transformed
/// observations `ystar = log(resid^2 + offset)` and the current
/// log-volatility path.
pub fn sample_mixture_indicators(
    ystar: &[f64],
    logvol: &[f64],
    table: &MixtureTable,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    debug_assert_eq!(ystar.len(), logvol.len());
    ystar
        .iter()
        .zip(logvol.iter())
        .map(|(&y, &h)| {
            let logp = indicator_log_probs(y, h, table);
            let maxv = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weights = [0.0; 10];
            let mut total = 0.0;
            for k in 0..10 {
                weights[k] = (logp[k] - maxv).exp();
                total += weights[k];
            }
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for k in 0..10 {
                acc += weights[k];
                if u <= acc {
                    return k;
                }
            }
            9
        })
        .collect()
}

/// Forward filter for the conditionally Gaussian log-volatility chain.
/// Returns filtered means and variances.
fn forward_filter(
    indicators: &[usize],
    ystar: &[f64],
    params: &SvParams,
    table: &MixtureTable,
) -> (Vec<f64>, Vec<f64>) {
    let t_len = ystar.len();
    let mut m_filt = vec![0.0; t_len];
    let mut p_filt = vec![0.0; t_len];
    let phi = params.phi;
    let sig2 = params.sigma * params.sigma;
    let mut m_pred = params.mu;
    let mut p_pred = sig2 / (1.0 - phi * phi);
    for t in 0..t_len {
        let k = indicators[t];
        let f = p_pred + table.vars[k];
        let gain = p_pred / f;
        let v = ystar[t] - table.means[k] - m_pred;
        m_filt[t] = m_pred + gain * v;
        p_filt[t] = p_pred * (1.0 - gain);
        if t + 1 < t_len {
            m_pred = params.mu + phi * (m_filt[t] - params.mu);
            p_pred = phi * phi * p_filt[t] + sig2;
        }
    }
    (m_filt, p_filt)
}

fn backward_sample(
    m_filt: &[f64],
    p_filt: &[f64],
    params: &SvParams,
    noise: &[f64],
) -> Vec<f64> {
    let t_len = m_filt.len();
    let mut path = vec![0.0; t_len];
    let phi = params.phi;
    let sig2 = params.sigma * params.sigma;
    let last = t_len - 1;
    path[last] = m_filt[last] + p_filt[last].max(0.0).sqrt() * noise[last];
    for t in (0..last).rev() {
        let denom = phi * phi * p_filt[t] + sig2;
        let (mean, var) = if denom > 0.0 {
            let gain = p_filt[t] * phi / denom;
            let resid = path[t + 1] - params.mu - phi * (m_filt[t] - params.mu);
            (m_filt[t] + gain * resid, p_filt[t] - gain * phi * p_filt[t])
        } else {
            (m_filt[t], 0.0)
        };
        path[t] = mean + var.max(0.0).sqrt() * noise[t];
    }
    path
}

/// Exact forward-filtering backward-sampling draw of one AR(1)
/// log-volatility path given its mixture indicators.
pub fn draw_logvol_path(
    indicators: &[usize],
    ystar: &[f64],
    params: &SvParams,
    table: &MixtureTable,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    if params.phi.abs() >= 1.0 {
        return Err(MfbvarError::Validation(format!("|phi| must be < 1, got {}", params.phi)));
    }
    if indicators.len() != ystar.len() || ystar.is_empty() {
        return Err(MfbvarError::Dimension("indicator/observation length mismatch".into()));
    }
    let noise: Vec<f64> = (0..ystar.len()).map(|_| rng.sample(StandardNormal)).collect();
    let (m_filt, p_filt) = forward_filter(indicators, ystar, params, table);
    Ok(backward_sample(&m_filt, &p_filt, params, &noise))
}

fn beta_log_density(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Log target for the persistence parameter under the centered chain,
/// including the stationary initial condition. Constant terms dropped.
fn phi_log_target(path: &[f64], mu: f64, sigma: f64, phi: f64, priors: &FsvPriorConfig) -> f64 {
    let x = (phi + 1.0) / 2.0;
    let mut out = beta_log_density(x, priors.phi_beta_a, priors.phi_beta_b);
    if path.is_empty() {
        return out;
    }
    let sig2 = sigma * sigma;
    out += 0.5 * (1.0 - phi * phi).ln();
    out -= (1.0 - phi * phi) * (path[0] - mu).powi(2) / (2.0 * sig2);
    for t in 1..path.len() {
        let resid = path[t] - mu - phi * (path[t - 1] - mu);
        out -= resid * resid / (2.0 * sig2);
    }
    out
}

/// One Metropolis step on phi. Returns the new value and whether the
/// proposal was accepted.
fn phi_step(
    path: &[f64],
    mu: f64,
    sigma: f64,
    phi_cur: f64,
    priors: &FsvPriorConfig,
    proposal: f64,
    log_u: f64,
) -> (f64, bool) {
    if proposal.abs() >= 1.0 {
        return (phi_cur, false);
    }
    let cur = phi_log_target(path, mu, sigma, phi_cur, priors);
    let prop = phi_log_target(path, mu, sigma, proposal, priors);
    if log_u < prop - cur {
        (proposal, true)
    } else {
        (phi_cur, false)
    }
}

/// Conjugate draw of the level under the centered parameterization.
fn draw_mu_centered(
    path: &[f64],
    phi: f64,
    sigma: f64,
    priors: &FsvPriorConfig,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let mut precision = 1.0 / priors.mu_var;
    let mut rhs = priors.mu_mean / priors.mu_var;
    if !path.is_empty() {
        let sig2 = sigma * sigma;
        precision += (1.0 - phi * phi) / sig2;
        rhs += (1.0 - phi * phi) * path[0] / sig2;
        let one_minus = 1.0 - phi;
        for t in 1..path.len() {
            let obs = path[t] - phi * path[t - 1];
            precision += one_minus * one_minus / sig2;
            rhs += one_minus * obs / sig2;
        }
    }
    let var = 1.0 / precision;
    let z: f64 = rng.sample(StandardNormal);
    rhs * var + var.sqrt() * z
}

/// Data needed to update one volatility chain's hyperparameters.
pub struct SvChainData<'a> {
    /// Current log-volatility path.
    pub path: &'a [f64],
    /// Transformed observations `log(resid^2 + offset)`.
    pub ystar: &'a [f64],
    /// Current mixture indicators.
    pub indicators: &'a [usize],
    /// False for factor chains, whose level is fixed at zero.
    pub has_level: bool,
}

/// Outcome of a hyperparameter update.
pub struct SvParamsDraw {
    pub params: SvParams,
    /// Path re-expressed after the interweaving move.
    pub path: Vec<f64>,
    pub phi_accepted: bool,
}

/// Draws `(mu, phi, sigma)` for one chain: conjugate level and Metropolis
/// persistence step under the centered parameterization, then a joint
/// draw of `(mu, sigma)` from the non-centered (standardized-path)
/// parameterization, which moves the path as well. An empty path samples
/// from the prior.
pub fn draw_sv_params(
    chain: &SvChainData,
    current: SvParams,
    priors: &FsvPriorConfig,
    table: &MixtureTable,
    rng: &mut ChaCha12Rng,
) -> Result<SvParamsDraw> {
    let mut params = current;
    params.validate()?;

    // Centered sweep.
    if chain.has_level {
        params.mu = draw_mu_centered(chain.path, params.phi, params.sigma, priors, rng);
    }
    let proposal = params.phi + 0.1 * rng.sample::<f64, _>(StandardNormal);
    let log_u = rng.random::<f64>().ln();
    let (phi, accepted) =
        phi_step(chain.path, params.mu, params.sigma, params.phi, priors, proposal, log_u);
    params.phi = phi;

    // Non-centered interweaving move: with htilde = (h - mu)/sigma held
    // fixed, (mu, sigma) are regression coefficients in the mixture
    // observation equation and get a joint Gaussian draw.
    let sigma_old = params.sigma.max(1e-12);
    let htilde: Vec<f64> = if chain.has_level {
        chain.path.iter().map(|h| (h - params.mu) / sigma_old).collect()
    } else {
        chain.path.iter().map(|h| h / sigma_old).collect()
    };

    let (mu_new, mut sigma_new) = if chain.has_level {
        let mut q00 = 1.0 / priors.mu_var;
        let mut q01 = 0.0;
        let mut q11 = 1.0 / priors.sigma_sq_scale;
        let mut b0 = priors.mu_mean / priors.mu_var;
        let mut b1 = 0.0;
        for t in 0..htilde.len() {
            let k = chain.indicators[t];
            let w = 1.0 / table.vars[k];
            let y = chain.ystar[t] - table.means[k];
            q00 += w;
            q01 += w * htilde[t];
            q11 += w * htilde[t] * htilde[t];
            b0 += w * y;
            b1 += w * y * htilde[t];
        }
        let det = q00 * q11 - q01 * q01;
        if det <= 0.0 {
            return Err(MfbvarError::Numerical("interweaving precision not PD".into()));
        }
        // Mean via 2x2 solve, draw via the Cholesky factor of the precision.
        let mean0 = (q11 * b0 - q01 * b1) / det;
        let mean1 = (q00 * b1 - q01 * b0) / det;
        let l00 = q00.sqrt();
        let l10 = q01 / l00;
        let l11 = (q11 - l10 * l10).sqrt();
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        // Solve L' e = z.
        let e1 = z1 / l11;
        let e0 = (z0 - l10 * e1) / l00;
        (mean0 + e0, mean1 + e1)
    } else {
        let mut q = 1.0 / priors.sigma_sq_scale;
        let mut b = 0.0;
        for t in 0..htilde.len() {
            let k = chain.indicators[t];
            let w = 1.0 / table.vars[k];
            let y = chain.ystar[t] - table.means[k];
            q += w * htilde[t] * htilde[t];
            b += w * y * htilde[t];
        }
        let z: f64 = rng.sample(StandardNormal);
        (0.0, b / q + z / q.sqrt())
    };

    // (sigma, htilde) -> (-sigma, -htilde) leaves the path invariant.
    let flip = sigma_new < 0.0;
    if flip {
        sigma_new = -sigma_new;
    }
    sigma_new = sigma_new.max(1e-12);

    let path: Vec<f64> = htilde
        .iter()
        .map(|ht| {
            let ht = if flip { -ht } else { *ht };
            if chain.has_level {
                mu_new + sigma_new * ht
            } else {
                sigma_new * ht
            }
        })
        .collect();

    params.mu = if chain.has_level { mu_new } else { 0.0 };
    params.sigma = sigma_new;
    params.validate()?;
    Ok(SvParamsDraw { params, path, phi_accepted: accepted })
}
