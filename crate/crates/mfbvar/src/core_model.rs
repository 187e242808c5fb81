//! Domain types for the mixed-frequency VAR and constructors for its
//! state-space representations.
//!
//! Variables are ordered monthly-first: `x_t = (x_{m,t}', x_{q,t}')'` with
//! `n = n_m + n_q`. The compact form keeps only the quarterly lag window
//! `(x_{q,t}, ..., x_{q,t-p})` in the state (newest first) and treats lagged
//! monthly observations as exogenous regressors.

use nalgebra::{DMatrix, DVector};

use crate::error::{MfbvarError, Result};

/// Triangular aggregation weights mapping five latent monthly growth rates
/// (newest first) to one observed quarterly growth rate.
pub const AGGREGATION_WEIGHTS: [f64; 5] = [
    1.0 / 9.0,
    2.0 / 9.0,
    3.0 / 9.0,
    2.0 / 9.0,
    1.0 / 9.0,
];

/// VAR regression parameters: intercept and lag coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct VarParameters {
    pub n_monthly: usize,
    pub n_quarterly: usize,
    /// Intercept, length `n = n_monthly + n_quarterly`.
    pub intercept: DVector<f64>,
    /// Lag coefficient matrices, one `n x n` matrix per lag, lag 1 first.
    pub lag_coefficients: Vec<DMatrix<f64>>,
}

impl VarParameters {
    pub fn new(
        n_monthly: usize,
        n_quarterly: usize,
        intercept: DVector<f64>,
        lag_coefficients: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = n_monthly + n_quarterly;
        if n == 0 {
            return Err(MfbvarError::Validation("model has no variables".into()));
        }
        if lag_coefficients.is_empty() {
            return Err(MfbvarError::Validation("p must be at least 1".into()));
        }
        if intercept.len() != n {
            return Err(MfbvarError::Dimension(format!(
                "intercept has length {}, expected {}",
                intercept.len(),
                n
            )));
        }
        for (l, pi) in lag_coefficients.iter().enumerate() {
            if pi.nrows() != n || pi.ncols() != n {
                return Err(MfbvarError::Dimension(format!(
                    "lag {} coefficient matrix is {}x{}, expected {}x{}",
                    l + 1,
                    pi.nrows(),
                    pi.ncols(),
                    n,
                    n
                )));
            }
            if pi.iter().any(|v| !v.is_finite()) {
                return Err(MfbvarError::Validation(format!(
                    "lag {} coefficient matrix contains non-finite entries",
                    l + 1
                )));
            }
        }
        if intercept.iter().any(|v| !v.is_finite()) {
            return Err(MfbvarError::Validation("intercept contains non-finite entries".into()));
        }
        Ok(Self { n_monthly, n_quarterly, intercept, lag_coefficients })
    }

    /// Zero-coefficient parameters (prior mean).
    pub fn zeros(n_monthly: usize, n_quarterly: usize, p: usize) -> Self {
        let n = n_monthly + n_quarterly;
        Self {
            n_monthly,
            n_quarterly,
            intercept: DVector::zeros(n),
            lag_coefficients: vec![DMatrix::zeros(n, n); p],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_monthly + self.n_quarterly
    }

    pub fn lags(&self) -> usize {
        self.lag_coefficients.len()
    }

    /// Coefficient of equation `i` on variable `j` at lag `l` (1-based lag).
    pub fn coef(&self, i: usize, j: usize, l: usize) -> f64 {
        self.lag_coefficients[l - 1][(i, j)]
    }

    /// `n_m x p*n_q` block: lagged quarterly variables in the monthly
    /// equations, lag-major ordering `(lag 1 block, ..., lag p block)`.
    pub fn pi_mq(&self) -> DMatrix<f64> {
        self.block(0, self.n_monthly, self.n_monthly, self.n_quarterly)
    }

    /// `n_m x p*n_m` block: lagged monthly variables in the monthly equations.
    pub fn pi_mm(&self) -> DMatrix<f64> {
        self.block(0, self.n_monthly, 0, self.n_monthly)
    }

    /// `n_q x p*n_m` block: lagged monthly variables in the quarterly equations.
    pub fn pi_qm(&self) -> DMatrix<f64> {
        self.block(self.n_monthly, self.n_quarterly, 0, self.n_monthly)
    }

    /// `n_q x p*n_q` block: lagged quarterly variables in the quarterly equations.
    pub fn pi_qq(&self) -> DMatrix<f64> {
        self.block(self.n_monthly, self.n_quarterly, self.n_monthly, self.n_quarterly)
    }

    fn block(&self, row0: usize, nrows: usize, col0: usize, ncols: usize) -> DMatrix<f64> {
        let p = self.lags();
        let mut out = DMatrix::zeros(nrows, ncols * p);
        for (l, pi) in self.lag_coefficients.iter().enumerate() {
            out.view_mut((0, l * ncols), (nrows, ncols))
                .copy_from(&pi.view((row0, col0), (nrows, ncols)));
        }
        out
    }
}

/// Factor stochastic volatility state: loadings, factor path,
/// log-volatility paths and the AR(1) hyperparameters of each chain.
///
/// Paths are indexed over the effective sample (the periods for which the
/// VAR equation can be evaluated, i.e. after the first `p` presample
/// months).
#[derive(Debug, Clone, PartialEq)]
pub struct FsvState {
    /// `n x r` factor loadings.
    pub loadings: DMatrix<f64>,
    /// `T_eff x r` factor path.
    pub factors: DMatrix<f64>,
    /// `T_eff x n` idiosyncratic log-volatilities.
    pub idio_logvol: DMatrix<f64>,
    /// `T_eff x r` factor log-volatilities.
    pub factor_logvol: DMatrix<f64>,
    /// Per-series SV parameters (mu, phi, sigma).
    pub idio_params: Vec<crate::fsv::SvParams>,
    /// Per-factor SV parameters; the level is fixed at zero for
    /// identification, so `mu` is zero for every entry.
    pub factor_params: Vec<crate::fsv::SvParams>,
}

impl FsvState {
    pub fn n_series(&self) -> usize {
        self.idio_logvol.ncols()
    }

    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn len(&self) -> usize {
        self.idio_logvol.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let n = self.n_series();
        let r = self.n_factors();
        if self.loadings.nrows() != n {
            return Err(MfbvarError::Dimension("loadings row count != n".into()));
        }
        if self.factors.nrows() != t || self.factors.ncols() != r {
            return Err(MfbvarError::Dimension("factor path shape mismatch".into()));
        }
        if self.factor_logvol.nrows() != t || self.factor_logvol.ncols() != r {
            return Err(MfbvarError::Dimension("factor log-volatility shape mismatch".into()));
        }
        if self.idio_params.len() != n || self.factor_params.len() != r {
            return Err(MfbvarError::Dimension("SV parameter count mismatch".into()));
        }
        for p in self.idio_params.iter().chain(self.factor_params.iter()) {
            if p.phi.abs() >= 1.0 {
                return Err(MfbvarError::Validation(format!("|phi| >= 1: {}", p.phi)));
            }
            if p.sigma <= 0.0 {
                return Err(MfbvarError::Validation(format!("sigma <= 0: {}", p.sigma)));
            }
        }
        for p in &self.factor_params {
            if p.mu != 0.0 {
                return Err(MfbvarError::Validation(
                    "factor log-volatility level must be fixed at zero".into(),
                ));
            }
        }
        if self.idio_logvol.iter().any(|v| !v.is_finite())
            || self.factor_logvol.iter().any(|v| !v.is_finite())
        {
            return Err(MfbvarError::Validation("log-volatility path not finite".into()));
        }
        Ok(())
    }
}

/// Which variables are observed in one period: indices into the monthly
/// block and into the quarterly block. Indices are sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservationPattern {
    pub monthly: Vec<usize>,
    pub quarterly: Vec<usize>,
}

impl ObservationPattern {
    pub fn n_observed(&self) -> usize {
        self.monthly.len() + self.quarterly.len()
    }
}

/// Monthly-grid dataset with per-period observation patterns.
///
/// Quarterly values sit on the rows of their end-of-quarter months; all
/// other quarterly entries are missing by construction. `NaN` marks a
/// missing value in the value matrices, and `observation_patterns` is the
/// authoritative mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFrequencyDataset {
    /// `T x n_m` monthly values, NaN where unobserved.
    pub monthly: DMatrix<f64>,
    /// `T x n_q` quarterly values, NaN where unobserved.
    pub quarterly: DMatrix<f64>,
    /// Per-period observed indices.
    pub observation_patterns: Vec<ObservationPattern>,
    /// Month index (0-based, `t % 3 == quarter_phase`) of end-of-quarter rows.
    pub quarter_phase: usize,
    /// Last period (inclusive) such that all monthly values up to and
    /// including it are observed.
    pub balanced_end: usize,
    /// Optional series names, monthly block first.
    pub series_ids: Vec<String>,
}

impl MixedFrequencyDataset {
    /// Builds a dataset from value matrices, deriving patterns from NaNs.
    pub fn from_values(
        monthly: DMatrix<f64>,
        quarterly: DMatrix<f64>,
        quarter_phase: usize,
    ) -> Result<Self> {
        if quarter_phase > 2 {
            return Err(MfbvarError::Validation(format!(
                "quarter phase must be in 0..=2, got {quarter_phase}"
            )));
        }
        let t_len = monthly.nrows();
        if quarterly.nrows() != t_len {
            return Err(MfbvarError::Dimension(
                "monthly and quarterly value matrices disagree on T".into(),
            ));
        }
        let mut patterns = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let monthly_obs: Vec<usize> =
                (0..monthly.ncols()).filter(|&i| monthly[(t, i)].is_finite()).collect();
            let quarterly_obs: Vec<usize> =
                (0..quarterly.ncols()).filter(|&j| quarterly[(t, j)].is_finite()).collect();
            if !quarterly_obs.is_empty() && t % 3 != quarter_phase {
                return Err(MfbvarError::Validation(format!(
                    "quarterly value observed at period {t}, which is not an end-of-quarter month"
                )));
            }
            patterns.push(ObservationPattern { monthly: monthly_obs, quarterly: quarterly_obs });
        }
        let balanced_end = balanced_end_from_patterns(&patterns, monthly.ncols());
        let n = monthly.ncols() + quarterly.ncols();
        Ok(Self {
            monthly,
            quarterly,
            observation_patterns: patterns,
            quarter_phase,
            balanced_end,
            series_ids: (0..n).map(|i| format!("v{i}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.monthly.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_monthly(&self) -> usize {
        self.monthly.ncols()
    }

    pub fn n_quarterly(&self) -> usize {
        self.quarterly.ncols()
    }

    pub fn n_vars(&self) -> usize {
        self.n_monthly() + self.n_quarterly()
    }

    pub fn is_quarter_end(&self, t: usize) -> bool {
        t % 3 == self.quarter_phase
    }

    /// Stacked observed vector at period `t`: observed monthly values
    /// followed by observed quarterly values.
    pub fn observed_at(&self, t: usize) -> DVector<f64> {
        let pat = &self.observation_patterns[t];
        let mut out = DVector::zeros(pat.n_observed());
        for (k, &i) in pat.monthly.iter().enumerate() {
            out[k] = self.monthly[(t, i)];
        }
        for (k, &j) in pat.quarterly.iter().enumerate() {
            out[pat.monthly.len() + k] = self.quarterly[(t, j)];
        }
        out
    }
}

fn balanced_end_from_patterns(patterns: &[ObservationPattern], n_monthly: usize) -> usize {
    let mut balanced_end = 0;
    for (t, pat) in patterns.iter().enumerate() {
        if pat.monthly.len() == n_monthly {
            balanced_end = t;
        } else {
            break;
        }
    }
    balanced_end
}

/// Companion (stacked VAR(1)) representation of a VAR(p): transition matrix
/// `np x np`, stacked intercept and the map placing the innovation in the
/// first `n` state rows.
#[derive(Debug, Clone)]
pub struct CompanionForm {
    pub transition: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// `np x n`: columns load the period innovation into the top block.
    pub innovation_map: DMatrix<f64>,
}

/// Stacks a VAR(p) into VAR(1) form. The top block rows hold
/// `(Pi_1, ..., Pi_p)`; identity blocks sit on the subdiagonal.
pub fn build_companion(params: &VarParameters, innovation_cov: &DMatrix<f64>) -> Result<CompanionForm> {
    let n = params.n_vars();
    let p = params.lags();
    if innovation_cov.nrows() != n || innovation_cov.ncols() != n {
        return Err(MfbvarError::Dimension(format!(
            "innovation covariance is {}x{}, expected {}x{}",
            innovation_cov.nrows(),
            innovation_cov.ncols(),
            n,
            n
        )));
    }
    let dim = n * p;
    let mut transition = DMatrix::zeros(dim, dim);
    for (l, pi) in params.lag_coefficients.iter().enumerate() {
        transition.view_mut((0, l * n), (n, n)).copy_from(pi);
    }
    if p > 1 {
        for k in 0..(p - 1) * n {
            transition[(n + k, k)] = 1.0;
        }
    }
    let mut intercept = DVector::zeros(dim);
    intercept.rows_mut(0, n).copy_from(&params.intercept);
    let mut innovation_map = DMatrix::zeros(dim, n);
    innovation_map.view_mut((0, 0), (n, n)).fill_with_identity();
    Ok(CompanionForm { transition, intercept, innovation_map })
}

/// Builds the `n_q x p*n_q` aggregation matrix placing the triangular
/// weights on the lag window of each quarterly series (current value
/// first, matching the compact state ordering). Lags beyond the fifth are
/// zero padding.
pub fn build_aggregation_matrix(n_q: usize, p: usize) -> Result<DMatrix<f64>> {
    if p < 5 {
        return Err(MfbvarError::LagOrderTooSmall(p));
    }
    let mut out = DMatrix::zeros(n_q, p * n_q);
    for j in 0..n_q {
        for (k, w) in AGGREGATION_WEIGHTS.iter().enumerate() {
            out[(j, k * n_q + j)] = *w;
        }
    }
    Ok(out)
}

/// Applies the triangular scheme to the last five monthly values of one
/// quarterly series, ordered oldest to newest.
pub fn aggregate_quarterly(latent_window: &[f64]) -> Result<f64> {
    if latent_window.len() != 5 {
        return Err(MfbvarError::Dimension(format!(
            "aggregation window must have length 5, got {}",
            latent_window.len()
        )));
    }
    // Weights are stored newest-first; the window arrives oldest-first.
    Ok(latent_window
        .iter()
        .rev()
        .zip(AGGREGATION_WEIGHTS.iter())
        .map(|(x, w)| x * w)
        .sum())
}

/// Builds the selection matrices `(S_m, S_q)` for one period's pattern.
/// Each row has exactly one unit entry.
pub fn make_selection(
    pattern: &ObservationPattern,
    n_monthly: usize,
    n_quarterly: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let check = |idx: &[usize], bound: usize, what: &str| -> Result<()> {
        let mut prev: Option<usize> = None;
        for &i in idx {
            if i >= bound {
                return Err(MfbvarError::Validation(format!(
                    "{what} selection index {i} out of range (n={bound})"
                )));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(MfbvarError::Validation(format!(
                        "{what} selection indices must be sorted and unique"
                    )));
                }
            }
            prev = Some(i);
        }
        Ok(())
    };
    check(&pattern.monthly, n_monthly, "monthly")?;
    check(&pattern.quarterly, n_quarterly, "quarterly")?;
    let mut s_m = DMatrix::zeros(pattern.monthly.len(), n_monthly);
    for (row, &i) in pattern.monthly.iter().enumerate() {
        s_m[(row, i)] = 1.0;
    }
    let mut s_q = DMatrix::zeros(pattern.quarterly.len(), n_quarterly);
    for (row, &j) in pattern.quarterly.iter().enumerate() {
        s_q[(row, j)] = 1.0;
    }
    Ok((s_m, s_q))
}

/// Time-varying system matrices of the compact form for one period.
///
/// Observation: `y_t = Z alpha_t + C (y_{m,t-1:t-p}; 1) + G eps_t`.
/// State:       `alpha_t = T alpha_{t-1} + D (y_{m,t-1:t-p}; 1) + H eps_t`,
/// with `alpha_t = (x_{q,t}, ..., x_{q,t-p})` of dimension `n_q (p+1)` and
/// `eps_t ~ N(0, I_n)`.
#[derive(Debug, Clone)]
pub struct StateSpaceSystem {
    pub z: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub state_dim: usize,
}

/// Builds the compact-form system matrices for one period.
///
/// `sigma_chol` is the lower-triangular Cholesky factor of the period's
/// innovation covariance; its first `n_m` rows feed the observation noise
/// map `G` and its last `n_q` rows feed the state noise map `H`.
pub fn build_compact_system(
    params: &VarParameters,
    sigma_chol: &DMatrix<f64>,
    aggregation: &DMatrix<f64>,
) -> Result<StateSpaceSystem> {
    let n_m = params.n_monthly;
    let n_q = params.n_quarterly;
    let n = params.n_vars();
    let p = params.lags();
    if n_q == 0 {
        return Err(MfbvarError::NoQuarterlyVariables);
    }
    if sigma_chol.nrows() != n || sigma_chol.ncols() != n {
        return Err(MfbvarError::Dimension("Cholesky factor must be n x n".into()));
    }
    if aggregation.nrows() != n_q || aggregation.ncols() != p * n_q {
        return Err(MfbvarError::Dimension(format!(
            "aggregation matrix is {}x{}, expected {}x{}",
            aggregation.nrows(),
            aggregation.ncols(),
            n_q,
            p * n_q
        )));
    }
    let state_dim = n_q * (p + 1);
    let n_reg = p * n_m + 1;

    let mut z = DMatrix::zeros(n, state_dim);
    z.view_mut((0, n_q), (n_m, p * n_q)).copy_from(&params.pi_mq());
    z.view_mut((n_m, 0), (n_q, p * n_q)).copy_from(aggregation);

    let mut c = DMatrix::zeros(n, n_reg);
    c.view_mut((0, 0), (n_m, p * n_m)).copy_from(&params.pi_mm());
    for i in 0..n_m {
        c[(i, n_reg - 1)] = params.intercept[i];
    }

    let mut t_mat = DMatrix::zeros(state_dim, state_dim);
    t_mat.view_mut((0, 0), (n_q, p * n_q)).copy_from(&params.pi_qq());
    for k in 0..p * n_q {
        t_mat[(n_q + k, k)] = 1.0;
    }

    let mut d = DMatrix::zeros(state_dim, n_reg);
    d.view_mut((0, 0), (n_q, p * n_m)).copy_from(&params.pi_qm());
    for j in 0..n_q {
        d[(j, n_reg - 1)] = params.intercept[n_m + j];
    }

    let mut g = DMatrix::zeros(n, n);
    g.view_mut((0, 0), (n_m, n)).copy_from(&sigma_chol.view((0, 0), (n_m, n)));

    let mut h = DMatrix::zeros(state_dim, n);
    h.view_mut((0, 0), (n_q, n)).copy_from(&sigma_chol.view((n_m, 0), (n_q, n)));

    Ok(StateSpaceSystem { z, c, g, t: t_mat, d, h, state_dim })
}

/// Lower Cholesky factor with a jitter retry for PSD edge cases.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(chol.unpack());
    }
    let n = m.nrows();
    let jittered = m + DMatrix::identity(n, n) * jitter;
    nalgebra::Cholesky::new(jittered)
        .map(|c| c.unpack())
        .ok_or_else(|| MfbvarError::Cholesky(format!("matrix not PD even with jitter {jitter:e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::{derive_rng, Block, StreamKey};

    fn rng(ix: u64) -> rand_chacha::ChaCha12Rng {
        derive_rng(90, StreamKey::new(0, Block::Synthetic, 0, ix))
    }

    fn random_params(
        n_m: usize,
        n_q: usize,
        p: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> VarParameters {
        let n = n_m + n_q;
        let lags = (0..p)
            .map(|l| {
                DMatrix::from_fn(n, n, |_, _| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * scale / ((l + 1) as f64)
                })
            })
            .collect();
        let intercept = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.1);
        VarParameters::new(n_m, n_q, intercept, lags).unwrap()
    }

    #[test]
    fn companion_degenerate_single_lag() {
        let params = VarParameters::new(
            1,
            0,
            DVector::zeros(1),
            vec![DMatrix::from_element(1, 1, 0.5)],
        )
        .unwrap();
        let comp = build_companion(&params, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(comp.transition.nrows(), 1);
        assert_relative_eq!(comp.transition[(0, 0)], 0.5);
    }

    #[test]
    fn companion_two_lags_layout() {
        let params = VarParameters::new(
            1,
            0,
            DVector::zeros(1),
            vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.2)],
        )
        .unwrap();
        let comp = build_companion(&params, &DMatrix::identity(1, 1)).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]);
        assert_relative_eq!(comp.transition, expect);
    }

    #[test]
    fn companion_preserves_stationarity() {
        // Eigenvalue moduli of the companion matrix stay below one when the
        // coefficients are scaled down far enough.
        let mut r = rng(1);
        let mut params = random_params(2, 1, 2, 0.6, &mut r);
        loop {
            let comp = build_companion(&params, &DMatrix::identity(3, 3)).unwrap();
            let radius = comp
                .transition
                .complex_eigenvalues()
                .iter()
                .map(|e| e.norm())
                .fold(0.0f64, f64::max);
            if radius < 1.0 {
                assert!(radius < 1.0);
                break;
            }
            for pi in params.lag_coefficients.iter_mut() {
                *pi *= 0.5;
            }
        }
    }

    #[test]
    fn companion_matches_direct_recursion() {
        // Iterating the companion form reproduces the direct VAR(p)
        // recursion given identical innovations.
        for trial in 0..8 {
            let mut r = rng(100 + trial);
            let n_m = 1 + (trial as usize % 3);
            let n_q = 1;
            let p = 2 + (trial as usize % 5);
            let n = n_m + n_q;
            let params = random_params(n_m, n_q, p, 0.3 / n as f64, &mut r);
            let comp = build_companion(&params, &DMatrix::identity(n, n)).unwrap();

            let horizon = 40;
            let innovations: Vec<DVector<f64>> = (0..horizon)
                .map(|_| DVector::from_fn(n, |_, _| r.sample(StandardNormal)))
                .collect();
            let presample: Vec<DVector<f64>> = (0..p)
                .map(|_| DVector::from_fn(n, |_, _| r.sample(StandardNormal)))
                .collect();

            // Direct recursion.
            let mut hist: Vec<DVector<f64>> = presample.clone();
            for u in &innovations {
                let mut x = params.intercept.clone() + u;
                for l in 1..=p {
                    x += &params.lag_coefficients[l - 1] * &hist[hist.len() - l];
                }
                hist.push(x);
            }

            // Companion recursion; state holds (x_t, ..., x_{t-p+1}).
            let mut state = DVector::zeros(n * p);
            for l in 0..p {
                state.rows_mut(l * n, n).copy_from(&presample[p - 1 - l]);
            }
            for (k, u) in innovations.iter().enumerate() {
                state = &comp.transition * state + &comp.intercept + &comp.innovation_map * u;
                let direct = &hist[p + k];
                for i in 0..n {
                    assert!(
                        (state[i] - direct[i]).abs() < 1e-12,
                        "trial {trial}: mismatch at step {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn aggregation_matrix_layout() {
        let lambda = build_aggregation_matrix(1, 5).unwrap();
        assert_eq!(lambda.nrows(), 1);
        assert_eq!(lambda.ncols(), 5);
        for (k, w) in AGGREGATION_WEIGHTS.iter().enumerate() {
            assert_relative_eq!(lambda[(0, k)], *w);
        }

        let lambda2 = build_aggregation_matrix(2, 5).unwrap();
        // Rows have disjoint support.
        for col in 0..lambda2.ncols() {
            let nonzero = (0..2).filter(|&j| lambda2[(j, col)] != 0.0).count();
            assert!(nonzero <= 1);
        }

        let padded = build_aggregation_matrix(1, 6).unwrap();
        assert_eq!(padded.ncols(), 6);
        assert_relative_eq!(padded[(0, 5)], 0.0);

        assert!(matches!(
            build_aggregation_matrix(1, 4),
            Err(MfbvarError::LagOrderTooSmall(4))
        ));
    }

    #[test]
    fn aggregation_values() {
        assert_relative_eq!(aggregate_quarterly(&[3.0; 5]).unwrap(), 3.0, epsilon = 1e-15);
        assert_relative_eq!(
            aggregate_quarterly(&[1.0, 2.0, 3.0, 2.0, 1.0]).unwrap(),
            19.0 / 9.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            aggregate_quarterly(&[9.0, 0.0, 0.0, 0.0, 9.0]).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        // Newest value carries weight 1/9.
        assert_relative_eq!(
            aggregate_quarterly(&[0.0, 0.0, 0.0, 0.0, 9.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(aggregate_quarterly(&[1.0; 4]).is_err());
    }

    #[test]
    fn selection_matrices() {
        let all = ObservationPattern { monthly: vec![0, 1, 2], quarterly: vec![] };
        let (s_m, s_q) = make_selection(&all, 3, 1).unwrap();
        assert_relative_eq!(s_m, DMatrix::identity(3, 3));
        assert_eq!(s_q.nrows(), 0);

        let partial = ObservationPattern { monthly: vec![0, 2], quarterly: vec![] };
        let (s_m, _) = make_selection(&partial, 3, 1).unwrap();
        let x = DVector::from_column_slice(&[10.0, 20.0, 30.0]);
        let picked = &s_m * &x;
        assert_relative_eq!(picked, DVector::from_column_slice(&[10.0, 30.0]));

        let bad = ObservationPattern { monthly: vec![2, 1], quarterly: vec![] };
        assert!(make_selection(&bad, 3, 1).is_err());
        let oob = ObservationPattern { monthly: vec![5], quarterly: vec![] };
        assert!(make_selection(&oob, 3, 1).is_err());
    }

    #[test]
    fn compact_system_block_layout() {
        let mut r = rng(2);
        let params = random_params(2, 1, 1, 0.2, &mut r);
        let sigma = DMatrix::identity(3, 3);
        // p=1 admits a custom single-column aggregation for layout checks.
        let aggregation = DMatrix::from_element(1, 1, 0.7);
        let sys = build_compact_system(&params, &sigma, &aggregation).unwrap();
        assert_eq!(sys.z.nrows(), 3);
        assert_eq!(sys.z.ncols(), 2);
        assert_relative_eq!(sys.z.view((0, 1), (2, 1)).clone_owned(), params.pi_mq());
        assert_relative_eq!(sys.z[(2, 0)], 0.7);
        assert_relative_eq!(sys.z[(2, 1)], 0.0);
        // G rows vanish on quarterly observations; H nonzeros sit in the
        // first n_q state rows.
        assert!(sys.g.row(2).iter().all(|v| *v == 0.0));
        assert!(sys.h.row(1).iter().all(|v| *v == 0.0));
        assert!(sys.h.row(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn compact_system_zero_coefficients() {
        let params = VarParameters::zeros(2, 1, 5);
        let sigma = DMatrix::identity(3, 3);
        let aggregation = build_aggregation_matrix(1, 5).unwrap();
        let sys = build_compact_system(&params, &sigma, &aggregation).unwrap();
        assert!(sys.c.iter().all(|v| *v == 0.0));
        assert!(sys.d.iter().all(|v| *v == 0.0));
        // Transition reduces to the lag shift.
        for k in 0..5 {
            assert_relative_eq!(sys.t[(1 + k, k)], 1.0);
        }
        assert!(sys.t.row(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn compact_requires_quarterly() {
        let params = VarParameters::zeros(3, 0, 5);
        let sigma = DMatrix::identity(3, 3);
        let aggregation = DMatrix::zeros(0, 0);
        assert!(matches!(
            build_compact_system(&params, &sigma, &aggregation),
            Err(MfbvarError::NoQuarterlyVariables)
        ));
    }

    /// Simulating from the compact form must reproduce the companion-form
    /// simulation mapped through selection and aggregation.
    #[test]
    fn compact_and_companion_simulations_agree() {
        for trial in 0..6 {
            let mut r = rng(300 + trial);
            let n_m = if trial % 2 == 0 { 9 } else { 3 };
            let n_q = 1 + (trial as usize % 2);
            let n = n_m + n_q;
            let p = 5;
            let params = random_params(n_m, n_q, p, 0.15 / n as f64, &mut r);

            // A PD innovation covariance and its lower Cholesky factor.
            let a = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal) * 0.3);
            let sigma = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let chol = cholesky_with_jitter(&sigma, 1e-10).unwrap();
            let aggregation = build_aggregation_matrix(n_q, p).unwrap();
            let sys = build_compact_system(&params, &chol, &aggregation).unwrap();

            let horizon = 30usize;
            let eps: Vec<DVector<f64>> = (0..horizon)
                .map(|_| DVector::from_fn(n, |_, _| r.sample(StandardNormal)))
                .collect();
            let presample: Vec<DVector<f64>> = (0..p + 1)
                .map(|_| DVector::from_fn(n, |_, _| r.sample(StandardNormal)))
                .collect();

            // Direct VAR path (companion equivalent), recording x_t.
            let mut hist: Vec<DVector<f64>> = presample.clone();
            for e in &eps {
                let mut x = params.intercept.clone() + &chol * e;
                for l in 1..=p {
                    x += &params.lag_coefficients[l - 1] * &hist[hist.len() - l];
                }
                hist.push(x);
            }

            // Compact simulation. State starts from the presample quarterly
            // window; monthly lag regressors come from the same history.
            let state_dim = n_q * (p + 1);
            let mut alpha = DVector::zeros(state_dim);
            for l in 0..=p {
                for j in 0..n_q {
                    alpha[l * n_q + j] = presample[p - l][n_m + j];
                }
            }
            for (k, e) in eps.iter().enumerate() {
                // Regressors (y_{m,t-1:t-p}; 1) from the realized path.
                let mut reg = DVector::zeros(p * n_m + 1);
                for l in 1..=p {
                    let src = &hist[p + 1 + k - l];
                    for i in 0..n_m {
                        reg[(l - 1) * n_m + i] = src[i];
                    }
                }
                reg[p * n_m] = 1.0;
                alpha = &sys.t * &alpha + &sys.d * &reg + &sys.h * e;
                let y = &sys.z * &alpha + &sys.c * &reg + &sys.g * e;
                let direct = &hist[p + 1 + k];
                for i in 0..n_m {
                    assert!(
                        (y[i] - direct[i]).abs() < 1e-10,
                        "monthly mismatch trial {trial} step {k}: {} vs {}",
                        y[i],
                        direct[i]
                    );
                }
                for j in 0..n_q {
                    let window: Vec<f64> =
                        (0..5).rev().map(|lag| hist[p + 1 + k - lag][n_m + j]).collect();
                    let agg = aggregate_quarterly(&window).unwrap();
                    assert!(
                        (y[n_m + j] - agg).abs() < 1e-10,
                        "quarterly mismatch trial {trial} step {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_validation() {
        let mut monthly = DMatrix::from_element(6, 2, 1.0);
        monthly[(5, 1)] = f64::NAN;
        let mut quarterly = DMatrix::from_element(6, 1, f64::NAN);
        quarterly[(2, 0)] = 0.5;
        quarterly[(5, 0)] = 0.7;
        let ds = MixedFrequencyDataset::from_values(monthly, quarterly, 2).unwrap();
        assert_eq!(ds.balanced_end, 4);
        assert_eq!(ds.observation_patterns[2].quarterly, vec![0]);
        assert_eq!(ds.observation_patterns[3].quarterly, Vec::<usize>::new());

        // Quarterly value off the quarter-end grid is rejected.
        let monthly = DMatrix::from_element(6, 2, 1.0);
        let mut quarterly = DMatrix::from_element(6, 1, f64::NAN);
        quarterly[(1, 0)] = 0.5;
        assert!(MixedFrequencyDataset::from_values(monthly, quarterly, 2).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_of_constant_is_identity(c in -1e6f64..1e6) {
            let window = [c; 5];
            let agg = aggregate_quarterly(&window).unwrap();
            prop_assert!((agg - c).abs() <= 1e-9 * c.abs().max(1.0));
        }

        #[test]
        fn aggregation_weights_sum_to_one(_x in 0u8..1) {
            let total: f64 = AGGREGATION_WEIGHTS.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-15);
        }
    }
}
