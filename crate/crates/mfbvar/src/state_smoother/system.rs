//! Construction of the per-period conditional state-space systems consumed
//! by the filtering engines.
//!
//! Conditional on the factors and volatilities, observation and state noise
//! are independent with diagonal covariances, and the factor contribution
//! moves into the period intercepts. Two model kinds share one
//! representation:
//!
//! * `Compact`: the state holds the quarterly lag window
//!   `(x_{q,t}, ..., x_{q,t-L})`; lagged monthly observations act as
//!   exogenous regressors. In the ragged edge the state is adaptively
//!   augmented with the missing monthly variables (and their accumulating
//!   lags), and system matrices are re-blocked accordingly.
//! * `Companion`: the state holds the full lag window of every variable;
//!   observations are exact selections and aggregations.
//!
//! `L = max(p, 4)` so the five-month aggregation window always fits in the
//! state; for `p >= 5` this is the usual `p` and the state dimension is
//! `n_q (p+1)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::core_model::{MixedFrequencyDataset, VarParameters, AGGREGATION_WEIGHTS};
use crate::error::{MfbvarError, Result};

/// Which representation the smoother runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Compact,
    Companion,
}

/// Sparse observation row over the state vector.
#[derive(Debug, Clone, Default)]
pub struct SparseRow {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(self.val.iter()).map(|(&i, &v)| v * x[i as usize]).sum()
    }
}

/// One observation element: `y = c + z' alpha + noise_sd * eps(series)`.
#[derive(Debug, Clone)]
pub struct ObsElem {
    pub z: Arc<SparseRow>,
    pub c: f64,
    pub noise_sd: f64,
    /// Innovation component feeding the observation noise, if any.
    pub eps_series: Option<usize>,
    /// Observed value.
    pub y: f64,
}

/// State row receiving an innovation: `alpha[row] += sd * eps(series)`.
#[derive(Debug, Clone, Copy)]
pub struct StateNoise {
    pub row: usize,
    pub series: usize,
    pub sd: f64,
}

/// Dense transition with its transpose cached; shared across periods.
#[derive(Debug, Clone)]
pub struct DenseTransition {
    pub t: DMatrix<f64>,
    pub t_trans: DMatrix<f64>,
}

impl DenseTransition {
    pub fn new(t: DMatrix<f64>) -> Self {
        let t_trans = t.transpose();
        Self { t, t_trans }
    }
}

/// Transition map from the previous state into the current one.
#[derive(Debug, Clone)]
pub enum Transition {
    /// Compact-form transition `[B, 0; I, 0]`: new quarterly block from `B`
    /// applied to the first `L n_q` entries, remainder shifted down.
    CompactShift { b: Arc<DMatrix<f64>>, n_q: usize, l_blocks: usize },
    /// General (possibly rectangular) transition matrix.
    Dense(Arc<DenseTransition>),
}

impl Transition {
    pub fn dense(t: DMatrix<f64>) -> Self {
        Transition::Dense(Arc::new(DenseTransition::new(t)))
    }

    pub fn prev_dim(&self) -> usize {
        match self {
            Transition::CompactShift { n_q, l_blocks, .. } => n_q * (l_blocks + 1),
            Transition::Dense(d) => d.t.ncols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Transition::CompactShift { n_q, l_blocks, .. } => n_q * (l_blocks + 1),
            Transition::Dense(d) => d.t.nrows(),
        }
    }

    /// `out = T prev` (no intercept, no noise).
    pub fn apply_vec(&self, prev: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Transition::CompactShift { b, n_q, l_blocks } => {
                let head = n_q * l_blocks;
                let prev_s = prev.as_slice();
                let out_s = out.as_mut_slice();
                for j in 0..*n_q {
                    let mut acc = 0.0;
                    for m in 0..head {
                        acc += b[(j, m)] * prev_s[m];
                    }
                    out_s[j] = acc;
                }
                out_s[*n_q..n_q * (l_blocks + 1)].copy_from_slice(&prev_s[..head]);
            }
            Transition::Dense(d) => {
                d.t.mul_to(prev, out);
            }
        }
    }

    /// `out = T P T'` exploiting the shift structure where possible.
    pub fn apply_cov(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Transition::CompactShift { b, n_q, l_blocks } => {
                let nq = *n_q;
                let head = nq * l_blocks;
                let dim = nq * (l_blocks + 1);
                let mut out = DMatrix::zeros(dim, dim);
                // bp = B * P[0..head, 0..head]  (nq x head)
                let bp = &**b * p.view((0, 0), (head, head));
                // Top-left: B P B'.
                let bpb = &bp * b.transpose();
                out.view_mut((0, 0), (nq, nq)).copy_from(&bpb);
                // Top strip and its transpose.
                out.view_mut((0, nq), (nq, head)).copy_from(&bp);
                out.view_mut((nq, 0), (head, nq)).copy_from(&bp.transpose());
                // Shifted block.
                out.view_mut((nq, nq), (head, head)).copy_from(&p.view((0, 0), (head, head)));
                out
            }
            Transition::Dense(d) => {
                let tp = &d.t * p;
                &tp * &d.t_trans
            }
        }
    }

    /// `out = T' r` (dimension of the previous state).
    pub fn apply_transpose_vec(&self, r: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Transition::CompactShift { b, n_q, l_blocks } => {
                let head = n_q * l_blocks;
                let r_s = r.as_slice();
                let out_s = out.as_mut_slice();
                for m in 0..head {
                    let mut acc = r_s[n_q + m];
                    for j in 0..*n_q {
                        acc += b[(j, m)] * r_s[j];
                    }
                    out_s[m] = acc;
                }
                for v in out_s[head..n_q * (l_blocks + 1)].iter_mut() {
                    *v = 0.0;
                }
            }
            Transition::Dense(d) => {
                d.t_trans.mul_to(r, out);
            }
        }
    }
}

/// Where a noise column of the initial state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRef {
    /// Initial-window noise, keyed by (series, lag).
    ZInit { series: usize, lag: usize },
    /// Period innovation, keyed by (local period, series).
    Eps { period: usize, series: usize },
}

/// Initial state distribution `alpha_{t0} = mean + noise_map * zeta`.
#[derive(Debug, Clone)]
pub struct InitSpec {
    pub mean: DVector<f64>,
    pub noise_map: DMatrix<f64>,
    pub noise_src: Vec<NoiseRef>,
    /// Cached `noise_map * noise_map'`.
    pub cov: DMatrix<f64>,
}

/// One filtered period: transition into it (absent for the first), state
/// intercept, innovation rows and observation elements.
#[derive(Debug, Clone)]
pub struct PeriodModel {
    pub dim: usize,
    pub trans: Option<Transition>,
    pub d: DVector<f64>,
    pub noise: Vec<StateNoise>,
    pub obs: Vec<ObsElem>,
}

/// Augmented-state window: monthly variable `series` is latent from period
/// `first_missing` on; at period `t` its window holds the values at
/// `t, t-1, ..., first_missing` starting at state offset `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugWindow {
    pub series: usize,
    pub first_missing: usize,
    pub offset: usize,
    pub len: usize,
}

/// A fully built conditional model ready for filtering.
#[derive(Debug, Clone)]
pub struct ConditionalModel {
    pub kind: ModelKind,
    pub init: InitSpec,
    pub periods: Vec<PeriodModel>,
    /// Per-period augmentation layout (compact kind only).
    pub aug: Vec<Vec<AugWindow>>,
    /// First filtered period (0-based), equal to the lag window length.
    pub t0: usize,
    /// State lag window `L = max(p, 4)`.
    pub lag_window: usize,
    pub n_monthly: usize,
    pub n_quarterly: usize,
    pub lags: usize,
    pub n_periods: usize,
    /// Relative tolerance for declaring an innovation variance singular.
    pub singular_tol: f64,
}

impl ConditionalModel {
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_monthly + self.n_quarterly
    }

    pub fn max_dim(&self) -> usize {
        self.periods.iter().map(|p| p.dim).max().unwrap_or(0)
    }

    /// Observed values per period (the data stream).
    pub fn data_stream(&self) -> Vec<Vec<f64>> {
        self.periods.iter().map(|p| p.obs.iter().map(|o| o.y).collect()).collect()
    }
}

/// Inputs shared by both builders. Volatility levels and factor
/// contributions are indexed over the effective sample (period `p`
/// onward).
pub struct BuildInputs<'a> {
    pub params: &'a VarParameters,
    pub data: &'a MixedFrequencyDataset,
    /// `(T - p) x n` idiosyncratic variance levels.
    pub idio_vol: &'a DMatrix<f64>,
    /// `(T - p) x n` factor contributions `(Lambda f_t)_i`.
    pub factor_comp: &'a DMatrix<f64>,
    /// Initial state variance scale.
    pub kappa: f64,
    pub singular_tol: f64,
}

struct BuildContext<'a> {
    inp: &'a BuildInputs<'a>,
    n_m: usize,
    n_q: usize,
    n: usize,
    p: usize,
    l: usize,
    t0: usize,
    t_len: usize,
    /// First missing period per monthly series (T when never missing).
    first_missing: Vec<usize>,
    /// Observed-lag contribution to every equation, `H x n`.
    contrib: DMatrix<f64>,
}

impl<'a> BuildContext<'a> {
    fn vol_index(&self, t: usize) -> usize {
        t - self.p
    }

    fn intercept_for(&self, eq: usize, t: usize) -> f64 {
        let tv = self.vol_index(t);
        self.inp.params.intercept[eq] + self.inp.factor_comp[(tv, eq)]
    }

    fn vol_for(&self, eq: usize, t: usize) -> f64 {
        self.inp.idio_vol[(self.vol_index(t), eq)]
    }

    fn state_resident(&self, series: usize, at: usize) -> bool {
        self.first_missing[series] <= at
    }
}

fn validate_and_prepare<'a>(inp: &'a BuildInputs<'a>) -> Result<BuildContext<'a>> {
    let params = inp.params;
    let data = inp.data;
    let n_m = params.n_monthly;
    let n_q = params.n_quarterly;
    let n = params.n_vars();
    let p = params.lags();
    if n_q == 0 {
        return Err(MfbvarError::NoQuarterlyVariables);
    }
    if data.n_monthly() != n_m || data.n_quarterly() != n_q {
        return Err(MfbvarError::Dimension("dataset and parameters disagree on dimensions".into()));
    }
    let l = p.max(4);
    let t0 = l;
    let t_len = data.len();
    if t_len < t0 + 2 {
        return Err(MfbvarError::Validation(format!(
            "sample too short: need more than {} periods, got {}",
            t0 + 1,
            t_len
        )));
    }
    let t_eff = t_len - p;
    if inp.idio_vol.nrows() != t_eff
        || inp.idio_vol.ncols() != n
        || inp.factor_comp.nrows() != t_eff
        || inp.factor_comp.ncols() != n
    {
        return Err(MfbvarError::Dimension(
            "volatility/factor paths must be (T - p) x n".into(),
        ));
    }
    if inp.idio_vol.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(MfbvarError::Validation("idiosyncratic variances must be positive".into()));
    }
    if data.balanced_end < t0 {
        return Err(MfbvarError::Validation(format!(
            "monthly data must be complete through period {} (balanced end {})",
            t0, data.balanced_end
        )));
    }
    for (t, pat) in data.observation_patterns.iter().enumerate().take(t0) {
        if !pat.quarterly.is_empty() {
            return Err(MfbvarError::Validation(format!(
                "quarterly observation at period {t} precedes the first filtered period {t0}; \
                 mask it before smoothing"
            )));
        }
    }

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

    // Observed-lag contributions via one matrix product: rows are the
    // stacked monthly lag values (zero where the lag is state-resident),
    // columns of `pi_m` the corresponding coefficients of every equation.
    let horizon = t_len - t0;
    let mut lag_values = DMatrix::zeros(horizon, p * n_m);
    for tau in 0..horizon {
        let t = t0 + tau;
        for lag in 1..=p {
            let s = t - lag;
            for j in 0..n_m {
                let resident = first_missing[j] <= s;
                if !resident {
                    let v = data.monthly[(s, j)];
                    if !v.is_finite() {
                        return Err(MfbvarError::Validation(format!(
                            "monthly series {j} missing at period {s} but marked observed"
                        )));
                    }
                    lag_values[(tau, (lag - 1) * n_m + j)] = v;
                }
            }
        }
    }
    let mut pi_m = DMatrix::zeros(n, p * n_m);
    for (lidx, pil) in params.lag_coefficients.iter().enumerate() {
        pi_m.view_mut((0, lidx * n_m), (n, n_m)).copy_from(&pil.view((0, 0), (n, n_m)));
    }
    let contrib = &lag_values * pi_m.transpose();

    Ok(BuildContext { inp, n_m, n_q, n, p, l, t0, t_len, first_missing, contrib })
}

/// Per-period augmentation windows for the ragged edge: a monthly variable
/// enters the state at its first missing period and stays until sample end,
/// accumulating one lag per period.
pub fn adaptive_plan(
    first_missing: &[usize],
    t0: usize,
    t_len: usize,
    base_dim: usize,
) -> Vec<Vec<AugWindow>> {
    let horizon = t_len - t0;
    let mut plan = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let t = t0 + tau;
        let mut windows = Vec::new();
        let mut offset = base_dim;
        for (series, &fm) in first_missing.iter().enumerate() {
            if fm <= t {
                let len = t - fm + 1;
                windows.push(AugWindow { series, first_missing: fm, offset, len });
                offset += len;
            }
        }
        plan.push(windows);
    }
    plan
}

fn aug_position(windows: &[AugWindow], series: usize, lag: usize) -> Option<usize> {
    windows.iter().find(|w| w.series == series).and_then(|w| {
        if lag < w.len {
            Some(w.offset + lag)
        } else {
            None
        }
    })
}

/// Builds the compact (adaptively augmented) conditional model.
pub fn build_compact_model(inp: &BuildInputs) -> Result<ConditionalModel> {
    let ctx = validate_and_prepare(inp)?;
    let (n_m, n_q, p, l, t0, t_len) = (ctx.n_m, ctx.n_q, ctx.p, ctx.l, ctx.t0, ctx.t_len);
    let base_dim = n_q * (l + 1);
    let horizon = t_len - t0;
    let params = inp.params;
    let data = inp.data;

    let plan = adaptive_plan(&ctx.first_missing, t0, t_len, base_dim);

    // Shared pieces for the balanced region.
    let mut b = DMatrix::zeros(n_q, l * n_q);
    b.view_mut((0, 0), (n_q, p * n_q)).copy_from(&params.pi_qq());
    let b = Arc::new(b);

    // Monthly observation rows load on the lagged quarterly blocks.
    let monthly_rows: Vec<Arc<SparseRow>> = (0..n_m)
        .map(|i| {
            let mut row = SparseRow::default();
            for lag in 1..=p {
                for jq in 0..n_q {
                    let coef = params.coef(i, n_m + jq, lag);
                    if coef != 0.0 {
                        row.idx.push((lag * n_q + jq) as u32);
                        row.val.push(coef);
                    }
                }
            }
            Arc::new(row)
        })
        .collect();
    let quarterly_rows: Vec<Arc<SparseRow>> = (0..n_q)
        .map(|j| {
            let mut row = SparseRow::default();
            for (k, w) in AGGREGATION_WEIGHTS.iter().enumerate() {
                row.idx.push((k * n_q + j) as u32);
                row.val.push(*w);
            }
            Arc::new(row)
        })
        .collect();

    // Initial state: diffuse over the quarterly lag window.
    let init = {
        let mut noise_map = DMatrix::zeros(base_dim, base_dim);
        let mut noise_src = Vec::with_capacity(base_dim);
        let sqrt_kappa = inp.kappa.sqrt();
        for lag in 0..=l {
            for j in 0..n_q {
                let pos = lag * n_q + j;
                noise_map[(pos, noise_src.len())] = sqrt_kappa;
                noise_src.push(NoiseRef::ZInit { series: n_m + j, lag });
            }
        }
        let cov = &noise_map * noise_map.transpose();
        InitSpec { mean: DVector::zeros(base_dim), noise_map, noise_src, cov }
    };

    let mut periods = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let t = t0 + tau;
        let windows = &plan[tau];
        let dim = base_dim + windows.iter().map(|w| w.len).sum::<usize>();
        let prev_windows: &[AugWindow] = if tau > 0 { &plan[tau - 1] } else { &[] };

        // Transition into this period.
        let trans = if tau == 0 {
            None
        } else if windows.is_empty() {
            Some(Transition::CompactShift { b: Arc::clone(&b), n_q, l_blocks: l })
        } else {
            let prev_dim = base_dim + prev_windows.iter().map(|w| w.len).sum::<usize>();
            let mut t_mat = DMatrix::zeros(dim, prev_dim);
            // Quarterly VAR rows.
            for j in 0..n_q {
                for lag in 1..=p {
                    for jq in 0..n_q {
                        t_mat[(j, (lag - 1) * n_q + jq)] = params.coef(n_m + j, n_m + jq, lag);
                    }
                    for jm in 0..n_m {
                        if ctx.state_resident(jm, t - lag) {
                            let pos = aug_position(prev_windows, jm, lag - 1)
                                .expect("state-resident lag must be in the previous window");
                            t_mat[(j, pos)] = params.coef(n_m + j, jm, lag);
                        }
                    }
                }
            }
            // Quarterly shifts.
            for m in 0..l * n_q {
                t_mat[(n_q + m, m)] = 1.0;
            }
            // Augmented windows.
            for w in windows {
                // Head: the VAR equation of the missing variable.
                for lag in 1..=p {
                    for jq in 0..n_q {
                        t_mat[(w.offset, (lag - 1) * n_q + jq)] =
                            params.coef(w.series, n_m + jq, lag);
                    }
                    for jm in 0..n_m {
                        if ctx.state_resident(jm, t - lag) {
                            let pos = aug_position(prev_windows, jm, lag - 1)
                                .expect("state-resident lag must be in the previous window");
                            t_mat[(w.offset, pos)] = params.coef(w.series, jm, lag);
                        }
                    }
                }
                // Shifted copies of the window.
                for k in 1..w.len {
                    let src = aug_position(prev_windows, w.series, k - 1)
                        .expect("window shift source must exist");
                    t_mat[(w.offset + k, src)] = 1.0;
                }
            }
            Some(Transition::dense(t_mat))
        };

        // State intercept and innovations.
        let mut d = DVector::zeros(dim);
        let mut noise = Vec::new();
        if tau > 0 {
            for j in 0..n_q {
                d[j] = ctx.contrib[(tau, n_m + j)] + ctx.intercept_for(n_m + j, t);
                noise.push(StateNoise {
                    row: j,
                    series: n_m + j,
                    sd: ctx.vol_for(n_m + j, t).sqrt(),
                });
            }
            for w in windows {
                d[w.offset] = ctx.contrib[(tau, w.series)] + ctx.intercept_for(w.series, t);
                noise.push(StateNoise {
                    row: w.offset,
                    series: w.series,
                    sd: ctx.vol_for(w.series, t).sqrt(),
                });
            }
        }

        // Observation elements: monthly ascending, then quarterly.
        let pat = &data.observation_patterns[t];
        let mut obs = Vec::with_capacity(pat.n_observed());
        for &i in &pat.monthly {
            let y = data.monthly[(t, i)];
            if ctx.state_resident(i, t) {
                // Reappeared variable: exact selection of its window head.
                let pos = aug_position(windows, i, 0).expect("resident series has a window");
                let row =
                    SparseRow { idx: vec![pos as u32], val: vec![1.0] };
                obs.push(ObsElem {
                    z: Arc::new(row),
                    c: 0.0,
                    noise_sd: 0.0,
                    eps_series: None,
                    y,
                });
            } else if windows.is_empty() {
                obs.push(ObsElem {
                    z: Arc::clone(&monthly_rows[i]),
                    c: ctx.contrib[(tau, i)] + ctx.intercept_for(i, t),
                    noise_sd: ctx.vol_for(i, t).sqrt(),
                    eps_series: Some(i),
                    y,
                });
            } else {
                // Ragged region: add loadings on augmented lag entries.
                let mut row = (*monthly_rows[i]).clone();
                for lag in 1..=p {
                    for jm in 0..n_m {
                        if ctx.state_resident(jm, t - lag) {
                            let pos = aug_position(windows, jm, lag)
                                .expect("state-resident lag must be in the window");
                            row.idx.push(pos as u32);
                            row.val.push(params.coef(i, jm, lag));
                        }
                    }
                }
                obs.push(ObsElem {
                    z: Arc::new(row),
                    c: ctx.contrib[(tau, i)] + ctx.intercept_for(i, t),
                    noise_sd: ctx.vol_for(i, t).sqrt(),
                    eps_series: Some(i),
                    y,
                });
            }
        }
        for &j in &pat.quarterly {
            obs.push(ObsElem {
                z: Arc::clone(&quarterly_rows[j]),
                c: 0.0,
                noise_sd: 0.0,
                eps_series: None,
                y: data.quarterly[(t, j)],
            });
        }

        periods.push(PeriodModel { dim, trans, d, noise, obs });
    }

    Ok(ConditionalModel {
        kind: ModelKind::Compact,
        init,
        periods,
        aug: plan,
        t0,
        lag_window: l,
        n_monthly: n_m,
        n_quarterly: n_q,
        lags: p,
        n_periods: t_len,
        singular_tol: inp.singular_tol,
    })
}

/// Builds the companion-form conditional model: the full lag window of
/// every variable in the state, exact observation rows, identical
/// information structure to the compact model.
pub fn build_companion_model(inp: &BuildInputs) -> Result<ConditionalModel> {
    let ctx = validate_and_prepare(inp)?;
    let (n_m, n_q, n, p, l, t0, t_len) = (ctx.n_m, ctx.n_q, ctx.n, ctx.p, ctx.l, ctx.t0, ctx.t_len);
    let dim = n * (l + 1);
    let horizon = t_len - t0;
    let params = inp.params;
    let data = inp.data;

    // Time-invariant transition.
    let mut t_mat = DMatrix::zeros(dim, dim);
    for v in 0..n {
        for lag in 1..=p {
            for w in 0..n {
                t_mat[(v, (lag - 1) * n + w)] = params.coef(v, w, lag);
            }
        }
    }
    for m in 0..l * n {
        t_mat[(n + m, m)] = 1.0;
    }
    let t_mat = Arc::new(DenseTransition::new(t_mat));

    let monthly_rows: Vec<Arc<SparseRow>> = (0..n_m)
        .map(|i| Arc::new(SparseRow { idx: vec![i as u32], val: vec![1.0] }))
        .collect();
    let quarterly_rows: Vec<Arc<SparseRow>> = (0..n_q)
        .map(|j| {
            let mut row = SparseRow::default();
            for (k, w) in AGGREGATION_WEIGHTS.iter().enumerate() {
                row.idx.push((k * n + n_m + j) as u32);
                row.val.push(*w);
            }
            Arc::new(row)
        })
        .collect();

    // Initial state at t0: presample monthly pinned to data, quarterly
    // window diffuse, and the top monthly block generated by the VAR
    // equation so the information structure matches the compact model.
    let init = {
        let sqrt_kappa = inp.kappa.sqrt();
        let n_noise = n_q * (l + 1) + n_m;
        let mut mean = DVector::zeros(dim);
        let mut noise_map = DMatrix::zeros(dim, n_noise);
        let mut noise_src = Vec::with_capacity(n_noise);
        // Quarterly columns.
        let mut q_col = vec![vec![0usize; n_q]; l + 1];
        for lag in 0..=l {
            for j in 0..n_q {
                q_col[lag][j] = noise_src.len();
                noise_map[(lag * n + n_m + j, noise_src.len())] = sqrt_kappa;
                noise_src.push(NoiseRef::ZInit { series: n_m + j, lag });
            }
        }
        // Pinned presample monthly.
        for lag in 1..=l {
            for i in 0..n_m {
                mean[lag * n + i] = data.monthly[(t0 - lag, i)];
            }
        }
        // Top monthly block: VAR equation over the presample.
        for i in 0..n_m {
            let mut m = ctx.intercept_for(i, t0);
            for lag in 1..=p {
                for jm in 0..n_m {
                    m += params.coef(i, jm, lag) * data.monthly[(t0 - lag, jm)];
                }
                for jq in 0..n_q {
                    let coef = params.coef(i, n_m + jq, lag);
                    if coef != 0.0 {
                        noise_map[(i, q_col[lag][jq])] = coef * sqrt_kappa;
                    }
                }
            }
            mean[i] = m;
            noise_map[(i, noise_src.len())] = ctx.vol_for(i, t0).sqrt();
            noise_src.push(NoiseRef::Eps { period: 0, series: i });
        }
        let cov = &noise_map * noise_map.transpose();
        InitSpec { mean, noise_map, noise_src, cov }
    };

    let mut periods = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let t = t0 + tau;
        let trans =
            if tau == 0 { None } else { Some(Transition::Dense(Arc::clone(&t_mat))) };
        let mut d = DVector::zeros(dim);
        let mut noise = Vec::with_capacity(n);
        if tau > 0 {
            for v in 0..n {
                d[v] = ctx.intercept_for(v, t);
                noise.push(StateNoise { row: v, series: v, sd: ctx.vol_for(v, t).sqrt() });
            }
        }
        let pat = &data.observation_patterns[t];
        let mut obs = Vec::with_capacity(pat.n_observed());
        for &i in &pat.monthly {
            obs.push(ObsElem {
                z: Arc::clone(&monthly_rows[i]),
                c: 0.0,
                noise_sd: 0.0,
                eps_series: None,
                y: data.monthly[(t, i)],
            });
        }
        for &j in &pat.quarterly {
            obs.push(ObsElem {
                z: Arc::clone(&quarterly_rows[j]),
                c: 0.0,
                noise_sd: 0.0,
                eps_series: None,
                y: data.quarterly[(t, j)],
            });
        }
        periods.push(PeriodModel { dim, trans, d, noise, obs });
    }

    Ok(ConditionalModel {
        kind: ModelKind::Companion,
        init,
        periods,
        aug: vec![Vec::new(); horizon],
        t0,
        lag_window: l,
        n_monthly: n_m,
        n_quarterly: n_q,
        lags: p,
        n_periods: t_len,
        singular_tol: inp.singular_tol,
    })
}
