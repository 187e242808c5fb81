//! Post-processing of posterior draws: mixing diagnostics, sign
//! identification of the factor loadings and implied GDP volatility.

use nalgebra::DMatrix;

use crate::core_model::AGGREGATION_WEIGHTS;
use crate::error::{MfbvarError, Result};
use crate::store::ChainStore;

/// Inefficiency-factor summary for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct IfGroupSummary {
    pub group: String,
    pub n_params: usize,
    pub min: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    /// Fraction of parameters with an inefficiency factor strictly above 20.
    pub share_above_20: f64,
}

/// Summary table across groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IfSummary {
    pub groups: Vec<IfGroupSummary>,
}

/// Inefficiency factor `1 + 2 sum_j rho_j` of one chain of draws.
///
/// Autocorrelations are accumulated until the first lag drops below 0.01
/// (that lag is still included) or until `len/50` lags, whichever comes
/// first; the estimate is floored at zero. An i.i.d. chain scores close to
/// one, persistent chains score higher.
pub fn inefficiency_factor(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 50 {
        return Err(MfbvarError::Validation(format!(
            "need at least 50 draws for an inefficiency factor, got {n}"
        )));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let gamma0 = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        return Err(MfbvarError::Validation(
            "chain has zero variance; inefficiency factor undefined".into(),
        ));
    }
    let max_lag = (n / 50).max(1);
    let mut acc = 0.0;
    for j in 1..=max_lag {
        let mut g = 0.0;
        for t in 0..n - j {
            g += (chain[t] - mean) * (chain[t + j] - mean);
        }
        let rho = g / n as f64 / gamma0;
        acc += rho;
        if rho < 0.01 {
            break;
        }
    }
    Ok((1.0 + 2.0 * acc).max(0.0))
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn summarize_group(group: &str, ifs: &[f64]) -> IfGroupSummary {
    let mut sorted = ifs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let above = sorted.iter().filter(|v| **v > 20.0).count();
    IfGroupSummary {
        group: group.to_string(),
        n_params: sorted.len(),
        min: sorted[0],
        p50: quantile_sorted(&sorted, 0.50),
        p75: quantile_sorted(&sorted, 0.75),
        p95: quantile_sorted(&sorted, 0.95),
        p99: quantile_sorted(&sorted, 0.99),
        max: *sorted.last().unwrap(),
        share_above_20: above as f64 / sorted.len() as f64,
    }
}

/// Parameter groups reported by [`summarize_if`], mirroring the usual
/// chain-summary layout.
pub const IF_GROUPS: [&str; 8] = [
    "latent monthly GDP",
    "regression parameters",
    "latent factor",
    "factor loadings",
    "latent log-volatilities",
    "means of log-volatilities",
    "AR parameters for log-volatilities",
    "innovation variances for log-volatilities",
];

/// Computes inefficiency factors for every stored parameter and summarizes
/// them by group. Parameters with (numerically) constant chains are
/// skipped. When the store holds no latent draws the latent-GDP group is
/// omitted.
pub fn summarize_if(store: &ChainStore, groups: &[&str]) -> Result<IfSummary> {
    let n_draws = store.len();
    if n_draws == 0 {
        return Err(MfbvarError::Validation("chain store is empty".into()));
    }
    if n_draws < 50 {
        return Err(MfbvarError::Validation(format!(
            "need at least 50 retained draws for inefficiency factors, got {n_draws}"
        )));
    }
    let mut out = IfSummary::default();
    for &group in groups {
        let chains: Vec<Vec<f64>> = match group {
            "latent monthly GDP" => {
                if !store.has_latent() {
                    continue;
                }
                let n_m = store.meta.n_monthly;
                let mut chains = Vec::new();
                for q in 0..store.meta.n_quarterly {
                    for t in 0..store.meta.n_periods {
                        chains.push(
                            store.draws.iter().map(|d| d.latent[(t, n_m + q)]).collect(),
                        );
                    }
                }
                chains
            }
            "regression parameters" => param_chains(store, |d| &d.pi),
            "latent factor" => param_chains(store, |d| &d.factors),
            "factor loadings" => param_chains(store, |d| &d.loadings),
            "latent log-volatilities" => {
                let mut chains = param_chains(store, |d| &d.idio_logvol);
                chains.extend(param_chains(store, |d| &d.factor_logvol));
                chains
            }
            "means of log-volatilities" => (0..store.meta.n_vars())
                .map(|i| store.draws.iter().map(|d| d.idio_sv[i].mu).collect())
                .collect(),
            "AR parameters for log-volatilities" => {
                let n = store.meta.n_vars();
                let r = store.meta.n_factors;
                let mut chains: Vec<Vec<f64>> = (0..n)
                    .map(|i| store.draws.iter().map(|d| d.idio_sv[i].phi).collect())
                    .collect();
                chains.extend(
                    (0..r).map(|j| {
                        store.draws.iter().map(|d| d.factor_sv[j].phi).collect::<Vec<f64>>()
                    }),
                );
                chains
            }
            "innovation variances for log-volatilities" => {
                let n = store.meta.n_vars();
                let r = store.meta.n_factors;
                let mut chains: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        store.draws.iter().map(|d| d.idio_sv[i].sigma.powi(2)).collect()
                    })
                    .collect();
                chains.extend((0..r).map(|j| {
                    store
                        .draws
                        .iter()
                        .map(|d| d.factor_sv[j].sigma.powi(2))
                        .collect::<Vec<f64>>()
                }));
                chains
            }
            other => {
                return Err(MfbvarError::Validation(format!("unknown parameter group '{other}'")))
            }
        };
        let mut ifs = Vec::with_capacity(chains.len());
        for chain in &chains {
            match inefficiency_factor(chain) {
                Ok(v) => ifs.push(v),
                Err(MfbvarError::Validation(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        if !ifs.is_empty() {
            out.groups.push(summarize_group(group, &ifs));
        }
    }
    Ok(out)
}

fn param_chains<F>(store: &ChainStore, select: F) -> Vec<Vec<f64>>
where
    F: Fn(&crate::store::Draw) -> &DMatrix<f64>,
{
    let first = select(&store.draws[0]);
    let (rows, cols) = first.shape();
    let mut chains = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        for r in 0..rows {
            chains.push(store.draws.iter().map(|d| select(d)[(r, c)]).collect());
        }
    }
    chains
}

/// Post-hoc maximin sign normalization of one factor's loading draws.
///
/// The coordinate whose smallest absolute draw across the chain is largest
/// anchors the sign: every iteration where that loading is negative has its
/// loading vector and factor path flipped. Returns the anchor index.
pub fn identify_sign_maximin(
    loadings: &mut DMatrix<f64>,
    factors: &mut DMatrix<f64>,
) -> Result<usize> {
    let n_draws = loadings.nrows();
    let n_series = loadings.ncols();
    if n_draws == 0 || n_series == 0 {
        return Err(MfbvarError::Validation("no loading draws to normalize".into()));
    }
    if factors.nrows() != n_draws {
        return Err(MfbvarError::Dimension(
            "loading and factor draws disagree on chain length".into(),
        ));
    }
    let mut anchor = 0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n_series {
        let min_abs =
            (0..n_draws).map(|g| loadings[(g, i)].abs()).fold(f64::INFINITY, f64::min);
        if min_abs > best {
            best = min_abs;
            anchor = i;
        }
    }
    for g in 0..n_draws {
        let v = loadings[(g, anchor)];
        if v < 0.0 {
            for i in 0..n_series {
                loadings[(g, i)] = -loadings[(g, i)];
            }
            for t in 0..factors.ncols() {
                factors[(g, t)] = -factors[(g, t)];
            }
        } else if v == 0.0 {
            log::warn!("maximin sign identification: anchor loading is zero at draw {g}");
        }
    }
    Ok(anchor)
}

/// How monthly variances are mapped to the quarterly scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuarterlyAggregation {
    /// Squared triangular weights applied to variances (independence
    /// approximation).
    #[default]
    SquaredWeights,
    /// Plain triangular weights applied to standard deviations.
    PlainWeights,
}

/// Implied GDP volatility paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GdpVolatility {
    /// Monthly conditional standard deviation, one entry per period.
    pub monthly_sd: Vec<f64>,
    /// Quarterly standard deviation at each period with a full five-month
    /// window (entries for earlier periods are NaN).
    pub quarterly_sd: Vec<f64>,
}

/// Conditional variance path of the GDP innovation,
/// `lambda^2 * omega^f_t + omega^nu_t`, and its aggregation to the
/// quarterly scale.
pub fn gdp_volatility(
    loading: f64,
    factor_vol: &[f64],
    idio_vol: &[f64],
    mode: QuarterlyAggregation,
) -> Result<GdpVolatility> {
    if factor_vol.len() != idio_vol.len() {
        return Err(MfbvarError::Dimension("volatility paths must be aligned".into()));
    }
    if factor_vol.iter().chain(idio_vol.iter()).any(|v| *v < 0.0) {
        return Err(MfbvarError::Validation("volatility inputs must be nonnegative".into()));
    }
    let t_len = factor_vol.len();
    let monthly_var: Vec<f64> =
        (0..t_len).map(|t| loading * loading * factor_vol[t] + idio_vol[t]).collect();
    let mut quarterly_sd = vec![f64::NAN; t_len];
    for t in 4..t_len {
        let mut v = 0.0;
        for (k, w) in AGGREGATION_WEIGHTS.iter().enumerate() {
            match mode {
                QuarterlyAggregation::SquaredWeights => v += w * w * monthly_var[t - k],
                QuarterlyAggregation::PlainWeights => v += w * monthly_var[t - k].sqrt(),
            }
        }
        quarterly_sd[t] = match mode {
            QuarterlyAggregation::SquaredWeights => v.sqrt(),
            QuarterlyAggregation::PlainWeights => v,
        };
    }
    Ok(GdpVolatility {
        monthly_sd: monthly_var.iter().map(|v| v.sqrt()).collect(),
        quarterly_sd,
    })
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic, with the usual
/// finite-sample correction).
pub fn ks_two_sample_pvalue(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    xb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (xa.len(), xb.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xa[i].min(xb[j]);
        while i < n && xa[i] <= x {
            i += 1;
        }
        while j < m && xb[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    // Kolmogorov survival function.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}
