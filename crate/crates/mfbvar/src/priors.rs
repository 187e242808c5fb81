//! Minnesota prior for the regression parameters and hyperpriors for the
//! factor stochastic volatility block.

use nalgebra::{DMatrix, DVector};

use crate::core_model::MixedFrequencyDataset;
use crate::error::{MfbvarError, Result};

/// Minnesota shrinkage settings.
///
/// The prior mean of every coefficient is zero. The prior standard
/// deviation of the coefficient on variable `j` at lag `l` in equation `i`
/// is `lambda1 / l^lambda3` on the own lag and
/// `lambda1 * lambda2 / l^lambda3 * s_i / s_j` across variables, where the
/// scales `s` are residual standard deviations from univariate AR fits.
#[derive(Debug, Clone, PartialEq)]
pub struct MinnesotaConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Per-series scale measures, length `n`.
    pub scales: Vec<f64>,
    /// Intercept prior standard deviation is `intercept_scale * s_i`.
    pub intercept_scale: f64,
}

impl MinnesotaConfig {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, scales: Vec<f64>) -> Result<Self> {
        if lambda1 <= 0.0 || lambda2 <= 0.0 {
            return Err(MfbvarError::Validation("lambda1 and lambda2 must be positive".into()));
        }
        if lambda3 < 0.0 {
            return Err(MfbvarError::Validation("lambda3 must be nonnegative".into()));
        }
        if scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(MfbvarError::Validation("scale measures must be positive".into()));
        }
        Ok(Self { lambda1, lambda2, lambda3, scales, intercept_scale: 10.0 })
    }

    /// Default hyperparameters; the overall tightness drops to 0.1 for
    /// models with more than 100 variables.
    pub fn default_for(n_vars: usize, scales: Vec<f64>) -> Result<Self> {
        let lambda1 = if n_vars > 100 { 0.1 } else { 0.2 };
        Self::new(lambda1, 0.5, 2.0, scales)
    }
}

/// Hyperpriors for the FSV block: level `mu ~ N(mu_mean, mu_var)`,
/// persistence `(phi+1)/2 ~ Beta(a, b)`, innovation variance
/// `sigma^2 ~ scale * chi^2(1)` and loadings `N(0, loading_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FsvPriorConfig {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub phi_beta_a: f64,
    pub phi_beta_b: f64,
    pub sigma_sq_scale: f64,
    pub loading_var: f64,
}

impl Default for FsvPriorConfig {
    fn default() -> Self {
        Self {
            mu_mean: 0.0,
            mu_var: 10.0,
            phi_beta_a: 10.0,
            phi_beta_b: 3.0,
            sigma_sq_scale: 1.0,
            loading_var: 1.0,
        }
    }
}

impl FsvPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu_var <= 0.0 || self.sigma_sq_scale <= 0.0 || self.loading_var <= 0.0 {
            return Err(MfbvarError::Validation("prior variances must be positive".into()));
        }
        if self.phi_beta_a <= 0.0 || self.phi_beta_b <= 0.0 {
            return Err(MfbvarError::Validation("Beta parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Prior standard deviation of the lag-`l` coefficient on variable `j` in
/// equation `i` (indices 0-based, lag 1-based).
pub fn minnesota_sd(i: usize, j: usize, l: usize, cfg: &MinnesotaConfig) -> Result<f64> {
    if l == 0 {
        return Err(MfbvarError::Validation("lag must be at least 1".into()));
    }
    let decay = (l as f64).powf(cfg.lambda3);
    if i == j {
        Ok(cfg.lambda1 / decay)
    } else {
        Ok(cfg.lambda1 * cfg.lambda2 / decay * cfg.scales[i] / cfg.scales[j])
    }
}

/// Diagonal of prior variances for equation `i` in the regressor ordering
/// `(1, x_{t-1}, ..., x_{t-p})`, as a length `n*p + 1` vector.
pub fn build_prior_diagonal(i: usize, p: usize, cfg: &MinnesotaConfig) -> Result<DVector<f64>> {
    let n = cfg.scales.len();
    let mut d = DVector::zeros(n * p + 1);
    let intercept_sd = cfg.intercept_scale * cfg.scales[i];
    d[0] = intercept_sd * intercept_sd;
    for l in 1..=p {
        for j in 0..n {
            let sd = minnesota_sd(i, j, l, cfg)?;
            d[1 + (l - 1) * n + j] = sd * sd;
        }
    }
    if d.iter().any(|v| *v <= f64::MIN_POSITIVE) {
        log::warn!("prior diagonal for equation {i} is numerically degenerate (dogmatic prior)");
    }
    Ok(d)
}

/// Residual standard deviation from an AR(4) least-squares fit with
/// intercept; falls back to the sample standard deviation when the series
/// is too short for a stable fit.
pub fn ar4_residual_sd(values: &[f64]) -> Result<f64> {
    let order = 4usize;
    let n = values.len();
    if n < 8 {
        return Err(MfbvarError::Validation(format!(
            "need at least 8 observations for a scale estimate, got {n}"
        )));
    }
    let fallback = sample_sd(values)?;
    if n < 20 {
        return Ok(fallback);
    }
    let rows = n - order;
    let cols = order + 1;
    let mut x = DMatrix::zeros(rows, cols);
    let mut y = DVector::zeros(rows);
    for t in 0..rows {
        x[(t, 0)] = 1.0;
        for l in 1..=order {
            x[(t, l)] = values[t + order - l];
        }
        y[t] = values[t + order];
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    // Ridge fallback keeps near-constant series from breaking the solve.
    let solution = xtx
        .clone()
        .try_inverse()
        .or_else(|| (xtx + DMatrix::identity(cols, cols) * 1e-8).try_inverse())
        .map(|inv| inv * xty);
    let beta = match solution {
        Some(b) => b,
        None => return Ok(fallback),
    };
    let resid = y - x * beta;
    let dof = rows.saturating_sub(cols).max(1);
    let sd = (resid.norm_squared() / dof as f64).sqrt();
    if sd > 0.0 && sd.is_finite() {
        Ok(sd)
    } else {
        Ok(fallback)
    }
}

fn sample_sd(values: &[f64]) -> Result<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd > 0.0 && sd.is_finite() {
        Ok(sd)
    } else {
        Err(MfbvarError::Validation("series has zero variance; cannot set a scale".into()))
    }
}

/// Scale measures for every series of a dataset: AR(4) residual standard
/// deviations on the observed balanced interior, monthly block first;
/// quarterly series use their observed quarterly values.
pub fn scale_measures(data: &MixedFrequencyDataset) -> Result<Vec<f64>> {
    let mut scales = Vec::with_capacity(data.n_vars());
    for i in 0..data.n_monthly() {
        let vals: Vec<f64> = (0..=data.balanced_end)
            .map(|t| data.monthly[(t, i)])
            .filter(|v| v.is_finite())
            .collect();
        scales.push(ar4_residual_sd(&vals)?);
    }
    for j in 0..data.n_quarterly() {
        let vals: Vec<f64> = (0..data.len())
            .filter_map(|t| {
                let v = data.quarterly[(t, j)];
                v.is_finite().then_some(v)
            })
            .collect();
        scales.push(ar4_residual_sd(&vals)?);
    }
    Ok(scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(scales: Vec<f64>) -> MinnesotaConfig {
        MinnesotaConfig::new(0.2, 0.5, 2.0, scales).unwrap()
    }

    #[test]
    fn own_lag_sd() {
        let c = cfg(vec![1.0, 1.0]);
        assert_relative_eq!(minnesota_sd(0, 0, 1, &c).unwrap(), 0.2, epsilon = 1e-15);
        assert_relative_eq!(minnesota_sd(1, 1, 2, &c).unwrap(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn cross_lag_sd() {
        let c = cfg(vec![1.0, 1.0]);
        assert_relative_eq!(minnesota_sd(0, 1, 2, &c).unwrap(), 0.025, epsilon = 1e-15);
        // lambda2 = 1 restores the own-lag value when scales match.
        let mut c1 = cfg(vec![1.0, 1.0]);
        c1.lambda2 = 1.0;
        assert_relative_eq!(
            minnesota_sd(0, 1, 1, &c1).unwrap(),
            minnesota_sd(0, 0, 1, &c1).unwrap(),
            epsilon = 1e-15
        );
        assert!(minnesota_sd(0, 1, 0, &c).is_err());
    }

    #[test]
    fn scale_ratio_enters_cross_terms() {
        let c = cfg(vec![2.0, 0.5]);
        // s_0 / s_1 = 4.
        assert_relative_eq!(
            minnesota_sd(0, 1, 1, &c).unwrap(),
            0.2 * 0.5 * 4.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn prior_diagonal_layout() {
        let c = cfg(vec![1.5]);
        let d = build_prior_diagonal(0, 1, &c).unwrap();
        assert_eq!(d.len(), 2);
        assert_relative_eq!(d[0], (10.0 * 1.5) * (10.0 * 1.5), epsilon = 1e-12);
        assert_relative_eq!(d[1], 0.04, epsilon = 1e-15);

        let c2 = cfg(vec![1.0, 2.0]);
        let d2 = build_prior_diagonal(0, 2, &c2).unwrap();
        assert_eq!(d2.len(), 5);
        // Cross term scaled by (s_0/s_1)^2.
        let sd = minnesota_sd(0, 1, 1, &c2).unwrap();
        assert_relative_eq!(d2[2], sd * sd, epsilon = 1e-15);
        assert_relative_eq!(d2[2], (0.2 * 0.5 * 0.5f64).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn ar4_scale_behaviour() {
        // White noise: residual sd close to the innovation sd.
        let mut state = 123u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0 * 1.732
        };
        let noise: Vec<f64> = (0..400).map(|_| next()).collect();
        let sd = ar4_residual_sd(&noise).unwrap();
        assert!((sd - 1.0).abs() < 0.15, "sd {sd}");
        // Constant series has no scale.
        assert!(ar4_residual_sd(&vec![1.0; 100]).is_err());
    }

    proptest! {
        #[test]
        fn sd_nonincreasing_in_lag(l in 1usize..12, lambda3 in 0.0f64..3.0) {
            let mut c = cfg(vec![1.0, 1.0]);
            c.lambda3 = lambda3;
            let a = minnesota_sd(0, 1, l, &c).unwrap();
            let b = minnesota_sd(0, 1, l + 1, &c).unwrap();
            prop_assert!(b <= a + 1e-15);
        }

        #[test]
        fn own_dominates_cross_at_equal_scales(l in 1usize..12, lambda2 in 0.05f64..1.0) {
            let mut c = cfg(vec![1.0, 1.0]);
            c.lambda2 = lambda2;
            let own = minnesota_sd(0, 0, l, &c).unwrap();
            let cross = minnesota_sd(0, 1, l, &c).unwrap();
            prop_assert!(cross <= own + 1e-15);
        }

        #[test]
        fn diagonal_positive(p in 1usize..8) {
            let c = cfg(vec![0.7, 1.3, 2.1]);
            for i in 0..3 {
                let d = build_prior_diagonal(i, p, &c).unwrap();
                prop_assert_eq!(d.len(), 3 * p + 1);
                prop_assert!(d.iter().all(|v| *v > 0.0));
            }
        }
    }
}
