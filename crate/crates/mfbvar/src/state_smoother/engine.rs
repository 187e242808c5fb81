//! Filtering, smoothing and mean-correction sampling engines.
//!
//! Both engines consume the same [`ConditionalModel`] and differ only in
//! how a period's observations are absorbed: the multivariate engine
//! stacks them and factorizes the full innovation covariance, the
//! univariate engine brings elements in one at a time, which avoids the
//! matrix inversion entirely and is the fast path when the observation
//! vector is large relative to the state.
//!
//! Smoothed means are reconstructed through the disturbance recursion
//! (`etahat = Q r`), which avoids storing per-period covariance matrices
//! on the sampling path.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{MfbvarError, Result};

use super::system::{ConditionalModel, NoiseRef, PeriodModel};

const LN_2PI: f64 = 1.8378770664093453;

/// Random inputs for one simulation-smoother draw, laid out independently
/// of the smoother variant so that all variants map the same randomness to
/// the same roles.
#[derive(Debug, Clone)]
pub struct SmootherNoise {
    /// `n x (L+1)` initial-window standard normals, keyed (series, lag).
    pub z_init: DMatrix<f64>,
    /// `H x n` per-period innovation standard normals.
    pub eps: DMatrix<f64>,
}

impl SmootherNoise {
    /// Draws the noise block in a fixed order (initial window first,
    /// lag-major; then innovations, period-major).
    pub fn generate(
        n_vars: usize,
        lag_window: usize,
        horizon: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut z_init = DMatrix::zeros(n_vars, lag_window + 1);
        for lag in 0..=lag_window {
            for series in 0..n_vars {
                z_init[(series, lag)] = rng.sample(StandardNormal);
            }
        }
        let mut eps = DMatrix::zeros(horizon, n_vars);
        for tau in 0..horizon {
            for series in 0..n_vars {
                eps[(tau, series)] = rng.sample(StandardNormal);
            }
        }
        Self { z_init, eps }
    }

    fn resolve(&self, src: &NoiseRef) -> f64 {
        match *src {
            NoiseRef::ZInit { series, lag } => self.z_init[(series, lag)],
            NoiseRef::Eps { period, series } => self.eps[(period, series)],
        }
    }
}

/// Simulates the auxiliary path: state draws and the implied observations,
/// using the model's own intercepts (they cancel in the mean correction).
pub(crate) fn simulate_plus(
    model: &ConditionalModel,
    noise: &SmootherNoise,
) -> (Vec<DVector<f64>>, Vec<Vec<f64>>) {
    let horizon = model.horizon();
    let mut alphas = Vec::with_capacity(horizon);
    let mut ys = Vec::with_capacity(horizon);
    let init = &model.init;
    let mut alpha = init.mean.clone();
    for (col, src) in init.noise_src.iter().enumerate() {
        let z = noise.resolve(src);
        if z != 0.0 {
            for row in 0..alpha.len() {
                alpha[row] += init.noise_map[(row, col)] * z;
            }
        }
    }
    for (tau, period) in model.periods.iter().enumerate() {
        if let Some(trans) = &period.trans {
            let mut next = DVector::zeros(period.dim);
            trans.apply_vec(&alpha, &mut next);
            next += &period.d;
            for ns in &period.noise {
                next[ns.row] += ns.sd * noise.eps[(tau, ns.series)];
            }
            alpha = next;
        }
        let y: Vec<f64> = period
            .obs
            .iter()
            .map(|o| {
                let mut v = o.c + o.z.dot(alpha.as_slice());
                if let Some(series) = o.eps_series {
                    v += o.noise_sd * noise.eps[(tau, series)];
                }
                v
            })
            .collect();
        ys.push(y);
        alphas.push(alpha.clone());
    }
    (alphas, ys)
}

fn state_noise_cov(period: &PeriodModel) -> Vec<(usize, f64)> {
    period.noise.iter().map(|ns| (ns.row, ns.sd * ns.sd)).collect()
}

// ---------------------------------------------------------------------------
// Univariate engine
// ---------------------------------------------------------------------------

/// Stored univariate filter pass (shared covariances, one innovation set
/// per stream).
pub struct UniRun {
    pub loglik: Vec<f64>,
    /// Predicted state mean per stream and period.
    pub pred_a: Vec<Vec<DVector<f64>>>,
    /// Filtered state mean per stream and period.
    pub filt_a: Vec<Vec<DVector<f64>>>,
    /// Predicted covariance per period (streams share it).
    pub pred_p: Option<Vec<DMatrix<f64>>>,
    /// Flattened per-element gain vectors.
    k_arena: Vec<f64>,
    k_off: Vec<usize>,
    f: Vec<f64>,
    /// Innovations per element and stream.
    v: Vec<Vec<f64>>,
    period_elems: Vec<(usize, usize)>,
    /// Per-element state mean and covariance snapshots (traced runs only).
    pub trace: Option<UniTrace>,
}

/// Per-element intermediates captured by traced runs.
pub struct UniTrace {
    pub elem_mean: Vec<Vec<DVector<f64>>>,
    pub elem_cov: Vec<Vec<DMatrix<f64>>>,
}

impl UniRun {
    pub fn element(&self, period: usize, elem: usize) -> (&[f64], f64, &[f64]) {
        let (start, _) = self.period_elems[period];
        let e = start + elem;
        (&self.k_arena[self.k_off[e]..self.k_off[e + 1]], self.f[e], &self.v[e])
    }

    pub fn n_elements(&self, period: usize) -> usize {
        let (start, end) = self.period_elems[period];
        end - start
    }
}

/// Univariate (sequential) filter over one or more observation streams.
/// Streams share every covariance quantity; only innovations differ.
pub(crate) fn uni_filter(
    model: &ConditionalModel,
    streams: &[&[Vec<f64>]],
    store_cov: bool,
    trace: bool,
) -> Result<UniRun> {
    let n_streams = streams.len();
    let horizon = model.horizon();
    let init = &model.init;
    let base_dim = init.mean.len();

    let mut a: Vec<DVector<f64>> = (0..n_streams).map(|_| init.mean.clone()).collect();
    let mut p_mat = init.cov.clone();

    let mut run = UniRun {
        loglik: vec![0.0; n_streams],
        pred_a: vec![Vec::with_capacity(horizon); n_streams],
        filt_a: vec![Vec::with_capacity(horizon); n_streams],
        pred_p: store_cov.then(|| Vec::with_capacity(horizon)),
        k_arena: Vec::new(),
        k_off: vec![0],
        f: Vec::new(),
        v: Vec::new(),
        period_elems: Vec::with_capacity(horizon),
        trace: trace.then(|| UniTrace {
            elem_mean: Vec::with_capacity(horizon),
            elem_cov: Vec::with_capacity(horizon),
        }),
    };

    let mut scratch = DVector::zeros(base_dim);
    for (tau, period) in model.periods.iter().enumerate() {
        if let Some(trans) = &period.trans {
            // Time transition: a <- T a + d, P <- T P T' + Q.
            for s in 0..n_streams {
                if scratch.len() != period.dim {
                    scratch = DVector::zeros(period.dim);
                }
                trans.apply_vec(&a[s], &mut scratch);
                let mut next = scratch.clone();
                next += &period.d;
                a[s] = next;
            }
            let mut next_p = trans.apply_cov(&p_mat);
            for (row, var) in state_noise_cov(period) {
                next_p[(row, row)] += var;
            }
            p_mat = next_p;
        }
        for s in 0..n_streams {
            run.pred_a[s].push(a[s].clone());
        }
        if let Some(store) = run.pred_p.as_mut() {
            store.push(p_mat.clone());
        }

        let dim = period.dim;
        let elem_start = run.f.len();
        if let Some(tr) = run.trace.as_mut() {
            tr.elem_mean.push(Vec::with_capacity(period.obs.len()));
            tr.elem_cov.push(Vec::with_capacity(period.obs.len()));
        }
        for (ei, obs) in period.obs.iter().enumerate() {
            if let Some(tr) = run.trace.as_mut() {
                tr.elem_mean[tau].push(a[0].clone());
                tr.elem_cov[tau].push(p_mat.clone());
            }
            // K = P z, F = z' K + noise.
            let k_start = run.k_arena.len();
            run.k_arena.resize(k_start + dim, 0.0);
            {
                let k = &mut run.k_arena[k_start..k_start + dim];
                let p_cols = p_mat.as_slice(); // column-major
                for (m, &col_idx) in obs.z.idx.iter().enumerate() {
                    let w = obs.z.val[m];
                    let col = &p_cols[col_idx as usize * dim..(col_idx as usize + 1) * dim];
                    for (ki, ci) in k.iter_mut().zip(col.iter()) {
                        *ki += w * ci;
                    }
                }
            }
            let mut f_val = obs.noise_sd * obs.noise_sd;
            {
                let k = &run.k_arena[k_start..k_start + dim];
                for (m, &col_idx) in obs.z.idx.iter().enumerate() {
                    f_val += obs.z.val[m] * k[col_idx as usize];
                }
            }
            let tol = model.singular_tol * p_mat.trace().max(f64::MIN_POSITIVE);
            if !(f_val > tol) {
                return Err(MfbvarError::SingularInnovation {
                    period: model.t0 + tau,
                    element: ei,
                });
            }
            let f_inv = 1.0 / f_val;
            let mut vs = Vec::with_capacity(n_streams);
            for s in 0..n_streams {
                let y = streams[s][tau][ei];
                let v = y - obs.c - obs.z.dot(a[s].as_slice());
                vs.push(v);
                // a <- a + K v / F
                let k = &run.k_arena[k_start..k_start + dim];
                let step = v * f_inv;
                let av = a[s].as_mut_slice();
                for (ai, ki) in av.iter_mut().zip(k.iter()) {
                    *ai += ki * step;
                }
                run.loglik[s] -= 0.5 * (LN_2PI + f_val.ln() + v * v * f_inv);
            }
            // P <- P - K K' / F, lower triangle then mirrored.
            {
                let k_copy: Vec<f64> =
                    run.k_arena[k_start..k_start + dim].to_vec();
                let p_slice = p_mat.as_mut_slice();
                for j in 0..dim {
                    let w = k_copy[j] * f_inv;
                    if w != 0.0 {
                        let col = &mut p_slice[j * dim..(j + 1) * dim];
                        for i in j..dim {
                            col[i] -= k_copy[i] * w;
                        }
                    }
                }
                for j in 1..dim {
                    for i in 0..j {
                        p_slice[j * dim + i] = p_slice[i * dim + j];
                    }
                }
            }
            run.f.push(f_val);
            run.v.push(vs);
            run.k_off.push(run.k_arena.len());
        }
        run.period_elems.push((elem_start, run.f.len()));
        for s in 0..n_streams {
            run.filt_a[s].push(a[s].clone());
        }
    }
    Ok(run)
}

/// Backward disturbance smoothing for one stream of a stored univariate
/// run; returns the smoothed state means.
pub(crate) fn uni_smooth(
    model: &ConditionalModel,
    run: &UniRun,
    stream: usize,
) -> Vec<DVector<f64>> {
    let horizon = model.horizon();
    let mut r_pre: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    r_pre.resize(horizon, DVector::zeros(0));
    let mut r = DVector::zeros(model.periods[horizon - 1].dim);
    for tau in (0..horizon).rev() {
        let period = &model.periods[tau];
        let (start, end) = run.period_elems[tau];
        for e in (start..end).rev() {
            let k = &run.k_arena[run.k_off[e]..run.k_off[e + 1]];
            let f_inv = 1.0 / run.f[e];
            let obs = &period.obs[e - start];
            // g = (v - K' r) / F; r <- r + z g.
            let mut kr = 0.0;
            let rs = r.as_slice();
            for (ki, ri) in k.iter().zip(rs.iter()) {
                kr += ki * ri;
            }
            let g = (run.v[e][stream] - kr) * f_inv;
            let rm = r.as_mut_slice();
            for (m, &idx) in obs.z.idx.iter().enumerate() {
                rm[idx as usize] += obs.z.val[m] * g;
            }
        }
        r_pre[tau] = r.clone();
        if tau > 0 {
            let trans = period.trans.as_ref().expect("non-initial period has a transition");
            let prev_dim = model.periods[tau - 1].dim;
            let mut prev_r = DVector::zeros(prev_dim);
            trans.apply_transpose_vec(&r, &mut prev_r);
            r = prev_r;
        }
    }

    // Forward reconstruction through smoothed disturbances.
    let mut out = Vec::with_capacity(horizon);
    let mut alpha = &model.init.mean + &model.init.cov * &r_pre[0];
    for (tau, period) in model.periods.iter().enumerate() {
        if let Some(trans) = &period.trans {
            let mut next = DVector::zeros(period.dim);
            trans.apply_vec(&alpha, &mut next);
            next += &period.d;
            for (row, var) in state_noise_cov(period) {
                next[row] += var * r_pre[tau][row];
            }
            alpha = next;
        }
        out.push(alpha.clone());
    }
    out
}

// ---------------------------------------------------------------------------
// Multivariate engine
// ---------------------------------------------------------------------------

/// Stored multivariate filter pass.
pub struct MvRun {
    pub loglik: Vec<f64>,
    pub pred_a: Vec<Vec<DVector<f64>>>,
    pub filt_a: Vec<Vec<DVector<f64>>>,
    pub pred_p: Option<Vec<DMatrix<f64>>>,
    pub filt_p: Option<Vec<DMatrix<f64>>>,
    chol_f: Vec<Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>>,
    k: Vec<DMatrix<f64>>,
    v: Vec<Vec<DVector<f64>>>,
}

/// Standard multivariate filter over one or more streams, factorizing the
/// full `F_t` each period.
pub(crate) fn mv_filter(
    model: &ConditionalModel,
    streams: &[&[Vec<f64>]],
    store_cov: bool,
    store_moments: bool,
) -> Result<MvRun> {
    let n_streams = streams.len();
    let horizon = model.horizon();
    let init = &model.init;

    let mut a: Vec<DVector<f64>> = (0..n_streams).map(|_| init.mean.clone()).collect();
    let mut p_mat = init.cov.clone();

    let mut run = MvRun {
        loglik: vec![0.0; n_streams],
        pred_a: vec![Vec::with_capacity(horizon); n_streams],
        filt_a: vec![Vec::with_capacity(horizon); n_streams],
        pred_p: store_cov.then(Vec::new),
        filt_p: store_cov.then(Vec::new),
        chol_f: Vec::with_capacity(horizon),
        k: Vec::with_capacity(horizon),
        v: Vec::with_capacity(horizon),
    };

    // Reused covariance-propagation workspaces; with constant state
    // dimension these never reallocate after the first period.
    let mut tp_buf: DMatrix<f64> = DMatrix::zeros(0, 0);
    let mut p_next: DMatrix<f64> = DMatrix::zeros(0, 0);

    for (tau, period) in model.periods.iter().enumerate() {
        if let Some(trans) = &period.trans {
            for s in 0..n_streams {
                let mut next = DVector::zeros(period.dim);
                trans.apply_vec(&a[s], &mut next);
                next += &period.d;
                a[s] = next;
            }
            match trans {
                super::system::Transition::Dense(d) => {
                    let (out_dim, prev_dim) = (d.t.nrows(), d.t.ncols());
                    tp_buf.resize_mut(out_dim, prev_dim, 0.0);
                    super::blas::gemm_into(&d.t, &p_mat, &mut tp_buf);
                    p_next.resize_mut(out_dim, out_dim, 0.0);
                    super::blas::gemm_into(&tp_buf, &d.t_trans, &mut p_next);
                    std::mem::swap(&mut p_mat, &mut p_next);
                }
                shift => {
                    p_mat = shift.apply_cov(&p_mat);
                }
            }
            for (row, var) in state_noise_cov(period) {
                p_mat[(row, row)] += var;
            }
        }
        if store_moments {
            for s in 0..n_streams {
                run.pred_a[s].push(a[s].clone());
            }
        }
        if let Some(store) = run.pred_p.as_mut() {
            store.push(p_mat.clone());
        }

        let n_t = period.obs.len();
        if n_t > 0 {
            // K = P Z' and F = Z K through the sparse observation rows.
            let dim = period.dim;
            let mut k = DMatrix::zeros(dim, n_t);
            {
                let p_cols = p_mat.as_slice();
                let k_cols = k.as_mut_slice();
                for (e, obs) in period.obs.iter().enumerate() {
                    let col = &mut k_cols[e * dim..(e + 1) * dim];
                    for (m, &idx) in obs.z.idx.iter().enumerate() {
                        let w = obs.z.val[m];
                        let src = &p_cols[idx as usize * dim..(idx as usize + 1) * dim];
                        for (kq, sq) in col.iter_mut().zip(src.iter()) {
                            *kq += w * sq;
                        }
                    }
                }
            }
            let mut f_mat = DMatrix::zeros(n_t, n_t);
            for (row, obs) in period.obs.iter().enumerate() {
                for e in 0..n_t {
                    let mut acc = 0.0;
                    for (m, &idx) in obs.z.idx.iter().enumerate() {
                        acc += obs.z.val[m] * k[(idx as usize, e)];
                    }
                    f_mat[(row, e)] = acc;
                }
                f_mat[(row, row)] += obs.noise_sd * obs.noise_sd;
            }
            let chol = nalgebra::Cholesky::new(f_mat).ok_or_else(|| {
                MfbvarError::Numerical(format!(
                    "innovation covariance not PD at period {}",
                    model.t0 + tau
                ))
            })?;
            let ldet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let mut vs = Vec::with_capacity(n_streams);
            for s in 0..n_streams {
                let mut v = DVector::zeros(n_t);
                for (row, obs) in period.obs.iter().enumerate() {
                    v[row] = streams[s][tau][row] - obs.c - obs.z.dot(a[s].as_slice());
                }
                let fv = chol.solve(&v);
                a[s].gemv(1.0, &k, &fv, 1.0);
                run.loglik[s] -= 0.5 * (n_t as f64 * LN_2PI + ldet + v.dot(&fv));
                vs.push(v);
            }
            let mut kt = k.transpose();
            chol.solve_mut(&mut kt);
            super::blas::gemm_acc(-1.0, &k, &kt, &mut p_mat);
            // Keep the covariance symmetric against floating-point drift.
            let dim = period.dim;
            {
                let ps = p_mat.as_mut_slice();
                for j in 1..dim {
                    for i in 0..j {
                        let avg = 0.5 * (ps[j * dim + i] + ps[i * dim + j]);
                        ps[j * dim + i] = avg;
                        ps[i * dim + j] = avg;
                    }
                }
            }
            run.k.push(k);
            run.chol_f.push(Some(chol));
            run.v.push(vs);
        } else {
            run.k.push(DMatrix::zeros(period.dim, 0));
            run.chol_f.push(None);
            run.v.push(vec![DVector::zeros(0); n_streams]);
        }
        if store_moments {
            for s in 0..n_streams {
                run.filt_a[s].push(a[s].clone());
            }
        }
        if let Some(store) = run.filt_p.as_mut() {
            store.push(p_mat.clone());
        }
    }
    Ok(run)
}

/// Backward disturbance smoothing for one stream of a multivariate run.
pub(crate) fn mv_smooth(model: &ConditionalModel, run: &MvRun, stream: usize) -> Vec<DVector<f64>> {
    let horizon = model.horizon();
    let mut r_pre: Vec<DVector<f64>> = Vec::with_capacity(horizon);
    r_pre.resize(horizon, DVector::zeros(0));
    let mut r = DVector::zeros(model.periods[horizon - 1].dim);
    let mut prev_r = DVector::zeros(0);
    for tau in (0..horizon).rev() {
        let period = &model.periods[tau];
        if let Some(chol) = &run.chol_f[tau] {
            // r <- r + Z' F^{-1} (v - K' r)
            let mut rhs = run.v[tau][stream].clone();
            rhs.gemv_tr(-1.0, &run.k[tau], &r, 1.0);
            chol.solve_mut(&mut rhs);
            let rm = r.as_mut_slice();
            for (e, obs) in period.obs.iter().enumerate() {
                let g = rhs[e];
                for (m, &idx) in obs.z.idx.iter().enumerate() {
                    rm[idx as usize] += obs.z.val[m] * g;
                }
            }
        }
        if tau > 0 {
            let trans = period.trans.as_ref().expect("non-initial period has a transition");
            let prev_dim = model.periods[tau - 1].dim;
            prev_r.resize_vertically_mut(prev_dim, 0.0);
            trans.apply_transpose_vec(&r, &mut prev_r);
            r_pre[tau] = std::mem::replace(&mut r, prev_r.clone());
        } else {
            r_pre[tau] = r.clone();
        }
    }

    let mut out = Vec::with_capacity(horizon);
    let mut alpha = &model.init.mean + &model.init.cov * &r_pre[0];
    for (tau, period) in model.periods.iter().enumerate() {
        if let Some(trans) = &period.trans {
            let mut next = DVector::zeros(period.dim);
            trans.apply_vec(&alpha, &mut next);
            next += &period.d;
            for (row, var) in state_noise_cov(period) {
                next[row] += var * r_pre[tau][row];
            }
            alpha = next;
        }
        out.push(alpha.clone());
    }
    out
}

/// Mean-correction sampling: simulate an auxiliary path, smooth both the
/// data and the auxiliary observations with shared filter covariances, and
/// combine into an exact conditional draw of the state path.
pub(crate) fn sample_states(
    model: &ConditionalModel,
    noise: &SmootherNoise,
    univariate: bool,
) -> Result<Vec<DVector<f64>>> {
    let data_stream = model.data_stream();
    let (alpha_plus, y_plus) = simulate_plus(model, noise);
    let streams: [&[Vec<f64>]; 2] = [&data_stream, &y_plus];
    let (smoothed_data, smoothed_plus) = if univariate {
        let run = uni_filter(model, &streams, false, false)?;
        (uni_smooth(model, &run, 0), uni_smooth(model, &run, 1))
    } else {
        let run = mv_filter(model, &streams, false, false)?;
        (mv_smooth(model, &run, 0), mv_smooth(model, &run, 1))
    };
    let horizon = model.horizon();
    let mut out = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        out.push(&smoothed_data[tau] + &alpha_plus[tau] - &smoothed_plus[tau]);
    }
    Ok(out)
}
