//! The full MCMC loop: step ordering, burn-in, thinning, seeding, chain
//! storage and checkpointing.
//!
//! Each iteration sweeps the blocks in a fixed order: SV hyperparameters,
//! loadings, factors, regression parameters, latent states, mixture
//! indicators, log-volatility paths — the indicators drawn immediately
//! before the volatilities. All randomness flows through counter-based
//! streams keyed by `(chain, block, iteration, index)`, so a run is
//! reproducible bit for bit regardless of worker count, and a checkpointed
//! restart continues the exact draw sequence of an uninterrupted run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::core_model::{FsvState, MixedFrequencyDataset, VarParameters};
use crate::error::{MfbvarError, Result};
use crate::fsv::{
    draw_factors, draw_loadings, draw_logvol_path, draw_sv_params, sample_mixture_indicators,
    MixtureTable, SvChainData, SvParams, LOGVOL_OFFSET,
};
use crate::priors::{build_prior_diagonal, FsvPriorConfig, MinnesotaConfig};
use crate::reg_sampler::{build_lag_matrix, draw_pi, pi_matrix_to_params, SamplerPolicy};
use crate::rng::{derive_rng, Block, StreamFactory, StreamKey};
use crate::state_smoother::{simulation_smoother, SmootherSettings, SmootherVariant};
use crate::store::{ByteReader, ByteWriter, ChainMeta, ChainStore, Draw, BLOCK_NAMES};

/// Run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub lags: usize,
    pub n_factors: usize,
    pub seed: u64,
    pub chain_id: u64,
    pub sampler: SamplerPolicy,
    /// Worker threads for the parallel blocks; 0 uses the global pool.
    pub workers: usize,
    pub store_latent: bool,
    pub smoother: SmootherSettings,
    pub checkpoint: Option<PathBuf>,
    /// Write a checkpoint every this many iterations (0: only on failure).
    pub checkpoint_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            total_iterations: 30_000,
            burn_in: 10_000,
            thin: 20,
            lags: 6,
            n_factors: 1,
            seed: 1,
            chain_id: 0,
            sampler: SamplerPolicy::Auto,
            workers: 0,
            store_latent: true,
            smoother: SmootherSettings::default(),
            checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in > self.total_iterations {
            return Err(MfbvarError::Validation("burn-in exceeds total iterations".into()));
        }
        if self.thin == 0 {
            return Err(MfbvarError::Validation("thinning stride must be at least 1".into()));
        }
        if self.lags < 5 {
            return Err(MfbvarError::Validation(format!(
                "triangular aggregation requires at least 5 lags, got {}",
                self.lags
            )));
        }
        Ok(())
    }

    /// Digest of the settings that define the draw sequence.
    pub fn digest(&self) -> u64 {
        let mut w = ByteWriter::default();
        w.u64(self.total_iterations as u64);
        w.u64(self.burn_in as u64);
        w.u64(self.thin as u64);
        w.u64(self.lags as u64);
        w.u64(self.n_factors as u64);
        w.u64(self.seed);
        w.u64(self.chain_id);
        w.string(self.sampler.as_str());
        w.u8(self.store_latent as u8);
        w.f64(self.smoother.kappa);
        w.f64(self.smoother.singular_tol);
        crate::store::fnv1a64(&w.into_bytes())
    }
}

/// Current values of every sampled block.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub x: DMatrix<f64>,
    pub params: VarParameters,
    pub fsv: FsvState,
    pub idio_indicators: Vec<Vec<usize>>,
    pub factor_indicators: Vec<Vec<usize>>,
}

/// Masks quarterly observations that precede the first filtered period
/// (their aggregation window would leave the conditioning sample),
/// returning the dataset the sampler actually conditions on.
pub fn prepare_dataset(
    data: &MixedFrequencyDataset,
    lags: usize,
) -> Result<MixedFrequencyDataset> {
    let t0 = lags.max(4);
    let mut out = data.clone();
    for t in 0..t0.min(out.len()) {
        for j in 0..out.n_quarterly() {
            out.quarterly[(t, j)] = f64::NAN;
        }
        out.observation_patterns[t].quarterly.clear();
    }
    Ok(out)
}

fn series_observation_counts(data: &MixedFrequencyDataset) -> Vec<usize> {
    let mut counts = vec![0usize; data.n_vars()];
    for pat in &data.observation_patterns {
        for &i in &pat.monthly {
            counts[i] += 1;
        }
        for &j in &pat.quarterly {
            counts[data.n_monthly() + j] += 1;
        }
    }
    counts
}

/// Initial values: quarterly observations spread uniformly over their
/// quarters and smoothed once, missing monthly values carried forward,
/// coefficients at the prior mean, volatilities at the per-series log
/// sample variance.
pub fn initialize(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    table: &MixtureTable,
) -> Result<GibbsState> {
    let n_m = data.n_monthly();
    let n_q = data.n_quarterly();
    let n = n_m + n_q;
    let p = cfg.lags;
    let t_len = data.len();
    let t0 = p.max(4);
    if t_len < t0 + 24 {
        return Err(MfbvarError::Validation(format!(
            "sample too short: need at least {} periods, got {t_len}",
            t0 + 24
        )));
    }
    for (i, count) in series_observation_counts(data).iter().enumerate() {
        if *count < 20 {
            return Err(MfbvarError::Validation(format!(
                "series {i} has only {count} observations (need at least 20)"
            )));
        }
    }
    if data.balanced_end < t0 {
        return Err(MfbvarError::Validation(format!(
            "monthly panel must be balanced through period {t0} (balanced end {})",
            data.balanced_end
        )));
    }

    let mut x = DMatrix::zeros(t_len, n);
    for i in 0..n_m {
        let mut last = 0.0;
        for t in 0..t_len {
            let v = data.monthly[(t, i)];
            if v.is_finite() {
                last = v;
            }
            x[(t, i)] = last;
        }
    }
    for j in 0..n_q {
        // Uniform spread of each observed quarterly value over its quarter.
        let mut vals = vec![f64::NAN; t_len];
        for t in 0..t_len {
            let v = data.quarterly[(t, j)];
            if v.is_finite() {
                for s in t.saturating_sub(2)..=t {
                    vals[s] = v;
                }
            }
        }
        let mut last = vals.iter().copied().find(|v| v.is_finite()).unwrap_or(0.0);
        for v in vals.iter_mut() {
            if v.is_finite() {
                last = *v;
            } else {
                *v = last;
            }
        }
        // One smoothing pass to soften the staircase.
        for t in 0..t_len {
            let lo = t.saturating_sub(1);
            let hi = (t + 1).min(t_len - 1);
            x[(t, n_m + j)] = (vals[lo] + vals[t] + vals[hi]) / 3.0;
        }
    }

    let t_eff = t_len - p;
    let r = cfg.n_factors;
    let mut idio_params = Vec::with_capacity(n);
    let mut idio_logvol = DMatrix::zeros(t_eff, n);
    for i in 0..n {
        let mean = x.column(i).mean();
        let var = x.column(i).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t_len as f64;
        let level = var.max(1e-4).ln();
        for t in 0..t_eff {
            idio_logvol[(t, i)] = level;
        }
        idio_params.push(SvParams { mu: level, phi: 0.9, sigma: 0.2 });
    }
    let fsv = FsvState {
        loadings: DMatrix::zeros(n, r),
        factors: DMatrix::zeros(t_eff, r),
        idio_logvol,
        factor_logvol: DMatrix::zeros(t_eff, r),
        idio_params,
        factor_params: vec![SvParams { mu: 0.0, phi: 0.9, sigma: 0.2 }; r],
    };
    let params = VarParameters::zeros(n_m, n_q, p);

    let mut state = GibbsState {
        x,
        params,
        fsv,
        idio_indicators: vec![Vec::new(); n],
        factor_indicators: vec![Vec::new(); r],
    };
    let (ystar_idio, ystar_factor) = transformed_observations(&state, p);
    let streams = StreamFactory::new(cfg.seed, cfg.chain_id, Block::Init, 0);
    for i in 0..n {
        let mut rng = streams.rng(i as u64);
        let col: Vec<f64> = state.fsv.idio_logvol.column(i).iter().copied().collect();
        state.idio_indicators[i] =
            sample_mixture_indicators(&ystar_idio[i], &col, table, &mut rng);
    }
    for j in 0..r {
        let mut rng = streams.rng((n + j) as u64);
        let col: Vec<f64> = state.fsv.factor_logvol.column(j).iter().copied().collect();
        state.factor_indicators[j] =
            sample_mixture_indicators(&ystar_factor[j], &col, table, &mut rng);
    }
    Ok(state)
}

/// `log(resid^2 + offset)` paths for every idiosyncratic and factor chain.
fn transformed_observations(state: &GibbsState, p: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t_len = state.x.nrows();
    let n = state.x.ncols();
    let t_eff = t_len - p;
    let r = state.fsv.n_factors();
    let lagmat = build_lag_matrix(&state.x, p);
    let pi = params_to_matrix(&state.params);
    let fitted = &lagmat * pi.transpose();
    let factor_comp = &state.fsv.factors * state.fsv.loadings.transpose();
    let mut ystar_idio = vec![vec![0.0; t_eff]; n];
    for i in 0..n {
        for tau in 0..t_eff {
            let resid = state.x[(p + tau, i)] - fitted[(tau, i)] - factor_comp[(tau, i)];
            ystar_idio[i][tau] = (resid * resid + LOGVOL_OFFSET).ln();
        }
    }
    let mut ystar_factor = vec![vec![0.0; t_eff]; r];
    for j in 0..r {
        for tau in 0..t_eff {
            let f = state.fsv.factors[(tau, j)];
            ystar_factor[j][tau] = (f * f + LOGVOL_OFFSET).ln();
        }
    }
    (ystar_idio, ystar_factor)
}

/// Stacked coefficient matrix (one row per equation, intercept first).
pub fn params_to_matrix(params: &VarParameters) -> DMatrix<f64> {
    let n = params.n_vars();
    let p = params.lags();
    let mut pi = DMatrix::zeros(n, n * p + 1);
    for i in 0..n {
        pi[(i, 0)] = params.intercept[i];
        for l in 1..=p {
            for j in 0..n {
                pi[(i, 1 + (l - 1) * n + j)] = params.coef(i, j, l);
            }
        }
    }
    pi
}

/// Checkpoint: completed iteration count, sampler state, and the store
/// accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub state: GibbsState,
    pub store: ChainStore,
    pub failed_block: Option<String>,
}

/// Runs the sampler from scratch.
pub fn run_mcmc(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    minnesota: &MinnesotaConfig,
    fsv_priors: &FsvPriorConfig,
) -> Result<ChainStore> {
    run_mcmc_with_observer(cfg, data, minnesota, fsv_priors, |_, _| {})
}

/// Runs the sampler, invoking `observer(iteration, block)` as each block
/// completes.
pub fn run_mcmc_with_observer(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    minnesota: &MinnesotaConfig,
    fsv_priors: &FsvPriorConfig,
    observer: impl FnMut(usize, &'static str) + Send,
) -> Result<ChainStore> {
    cfg.validate()?;
    fsv_priors.validate()?;
    let data = prepare_dataset(data, cfg.lags)?;
    let table = MixtureTable::default();
    let state = initialize(cfg, &data, &table)?;
    let store = new_store(cfg, &data);
    drive(cfg, &data, minnesota, fsv_priors, state, store, 0, observer)
}

/// Resumes a checkpointed run; the remaining iterations reproduce exactly
/// what an uninterrupted run would have drawn.
pub fn resume_mcmc(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    minnesota: &MinnesotaConfig,
    fsv_priors: &FsvPriorConfig,
    checkpoint: Checkpoint,
) -> Result<ChainStore> {
    cfg.validate()?;
    let data = prepare_dataset(data, cfg.lags)?;
    drive(
        cfg,
        &data,
        minnesota,
        fsv_priors,
        checkpoint.state,
        checkpoint.store,
        checkpoint.iteration,
        |_, _| {},
    )
}

fn new_store(cfg: &McmcConfig, data: &MixedFrequencyDataset) -> ChainStore {
    ChainStore::new(ChainMeta {
        n_monthly: data.n_monthly(),
        n_quarterly: data.n_quarterly(),
        lags: cfg.lags,
        n_factors: cfg.n_factors,
        n_periods: data.len(),
        n_effective: data.len() - cfg.lags,
        total_iterations: cfg.total_iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed: cfg.seed,
        chain_id: cfg.chain_id,
        quarter_phase: data.quarter_phase,
        sampler: cfg.sampler.as_str().to_string(),
        store_latent: cfg.store_latent,
        config_digest: cfg.digest(),
    })
}

#[allow(clippy::too_many_arguments)]
fn drive(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    minnesota: &MinnesotaConfig,
    fsv_priors: &FsvPriorConfig,
    state: GibbsState,
    store: ChainStore,
    start_iteration: usize,
    observer: impl FnMut(usize, &'static str) + Send,
) -> Result<ChainStore> {
    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| MfbvarError::Validation(format!("worker pool: {e}")))?;
        pool.install(|| {
            drive_inner(cfg, data, minnesota, fsv_priors, state, store, start_iteration, observer)
        })
    } else {
        drive_inner(cfg, data, minnesota, fsv_priors, state, store, start_iteration, observer)
    }
}

/// Per-iteration derived quantities, refreshed as the blocks they depend on
/// move.
struct Workspace {
    lagmat: DMatrix<f64>,
    fitted: DMatrix<f64>,
    factor_comp: DMatrix<f64>,
    idio_vol: DMatrix<f64>,
    factor_vol: DMatrix<f64>,
    ystar_idio: Vec<Vec<f64>>,
    ystar_factor: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(state: &GibbsState, p: usize) -> Self {
        let lagmat = build_lag_matrix(&state.x, p);
        let pi = params_to_matrix(&state.params);
        let fitted = &lagmat * pi.transpose();
        let factor_comp = &state.fsv.factors * state.fsv.loadings.transpose();
        let (ystar_idio, ystar_factor) = transformed_observations(state, p);
        Self {
            lagmat,
            fitted,
            factor_comp,
            idio_vol: state.fsv.idio_logvol.map(f64::exp),
            factor_vol: state.fsv.factor_logvol.map(f64::exp),
            ystar_idio,
            ystar_factor,
        }
    }

    fn residual_u(&self, state: &GibbsState, p: usize) -> DMatrix<f64> {
        let t_eff = self.fitted.nrows();
        let n = self.fitted.ncols();
        DMatrix::from_fn(t_eff, n, |tau, i| state.x[(p + tau, i)] - self.fitted[(tau, i)])
    }
}

#[allow(clippy::too_many_arguments)]
fn drive_inner(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    minnesota: &MinnesotaConfig,
    fsv_priors: &FsvPriorConfig,
    mut state: GibbsState,
    mut store: ChainStore,
    start_iteration: usize,
    mut observer: impl FnMut(usize, &'static str) + Send,
) -> Result<ChainStore> {
    let p = cfg.lags;
    let n = data.n_vars();
    let prior_diags: Vec<DVector<f64>> =
        (0..n).map(|i| build_prior_diagonal(i, p, minnesota)).collect::<Result<_>>()?;

    let mut ws = Workspace::new(&state, p);
    let mut phi_proposals = 0u64;
    let mut phi_accepts = 0u64;
    let keep_snapshot = cfg.checkpoint.is_some();
    let mut last_good: Option<GibbsState> = keep_snapshot.then(|| state.clone());

    for iteration in (start_iteration + 1)..=cfg.total_iterations {
        let mut timings = [0.0f64; 7];
        let result = run_iteration(
            cfg,
            data,
            fsv_priors,
            &prior_diags,
            &mut state,
            &mut ws,
            iteration,
            &mut timings,
            &mut phi_proposals,
            &mut phi_accepts,
            &mut observer,
        );
        if let Err(e) = result {
            if let Some(path) = &cfg.checkpoint {
                let block = match &e {
                    MfbvarError::Block { block, .. } => *block,
                    _ => "unknown",
                };
                let cp = Checkpoint {
                    iteration: iteration - 1,
                    state: last_good.take().unwrap_or_else(|| state.clone()),
                    store: store.clone(),
                    failed_block: Some(block.to_string()),
                };
                if let Err(io_err) = write_checkpoint(path, &cp) {
                    log::error!("failed to write failure checkpoint: {io_err}");
                }
            }
            return Err(e);
        }
        store.block_seconds.push(timings);

        if iteration > cfg.burn_in && (iteration - cfg.burn_in) % cfg.thin == 0 {
            store.draws.push(Draw {
                iteration,
                pi: params_to_matrix(&state.params),
                loadings: state.fsv.loadings.clone(),
                factors: state.fsv.factors.clone(),
                idio_logvol: state.fsv.idio_logvol.clone(),
                factor_logvol: state.fsv.factor_logvol.clone(),
                idio_sv: state.fsv.idio_params.clone(),
                factor_sv: state.fsv.factor_params.clone(),
                latent: if cfg.store_latent { state.x.clone() } else { DMatrix::zeros(0, 0) },
            });
        }
        if keep_snapshot {
            last_good = Some(state.clone());
            if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
                let cp = Checkpoint {
                    iteration,
                    state: state.clone(),
                    store: store.clone(),
                    failed_block: None,
                };
                write_checkpoint(cfg.checkpoint.as_ref().unwrap(), &cp)?;
            }
        }
    }

    store.phi_acceptance =
        if phi_proposals > 0 { phi_accepts as f64 / phi_proposals as f64 } else { 0.0 };
    Ok(store)
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    cfg: &McmcConfig,
    data: &MixedFrequencyDataset,
    fsv_priors: &FsvPriorConfig,
    prior_diags: &[DVector<f64>],
    state: &mut GibbsState,
    ws: &mut Workspace,
    iteration: usize,
    timings: &mut [f64; 7],
    phi_proposals: &mut u64,
    phi_accepts: &mut u64,
    observer: &mut (impl FnMut(usize, &'static str) + Send),
) -> Result<()> {
    let table = MixtureTable::default();
    let p = cfg.lags;
    let n = data.n_vars();
    let r = cfg.n_factors;
    let it = iteration as u64;
    let seed = cfg.seed;
    let chain = cfg.chain_id;

    let fail = |block: &'static str, e: MfbvarError| MfbvarError::Block {
        block,
        iteration,
        source: Box::new(e),
    };

    // 1. SV hyperparameters (with the interweaving path move).
    let tstart = Instant::now();
    {
        let streams = StreamFactory::new(seed, chain, Block::SvParams, it);
        let fsv = &state.fsv;
        let results: Vec<Result<(SvParams, Vec<f64>, bool)>> = (0..n + r)
            .into_par_iter()
            .map(|c| {
                let mut rng = streams.rng(c as u64);
                let (path, chain_data, current): (Vec<f64>, _, _) = if c < n {
                    let path: Vec<f64> = fsv.idio_logvol.column(c).iter().copied().collect();
                    (path, (&ws.ystar_idio[c], &state.idio_indicators[c], true), fsv.idio_params[c])
                } else {
                    let j = c - n;
                    let path: Vec<f64> = fsv.factor_logvol.column(j).iter().copied().collect();
                    (
                        path,
                        (&ws.ystar_factor[j], &state.factor_indicators[j], false),
                        fsv.factor_params[j],
                    )
                };
                let (ystar, indicators, has_level) = chain_data;
                let out = draw_sv_params(
                    &SvChainData { path: &path, ystar, indicators, has_level },
                    current,
                    fsv_priors,
                    &table,
                    &mut rng,
                )?;
                Ok((out.params, out.path, out.phi_accepted))
            })
            .collect();
        for (c, res) in results.into_iter().enumerate() {
            let (params, path, accepted) = res.map_err(|e| fail("sv_params", e))?;
            *phi_proposals += 1;
            if accepted {
                *phi_accepts += 1;
            }
            if c < n {
                state.fsv.idio_params[c] = params;
                for (tau, h) in path.into_iter().enumerate() {
                    state.fsv.idio_logvol[(tau, c)] = h;
                }
            } else {
                let j = c - n;
                state.fsv.factor_params[j] = params;
                for (tau, h) in path.into_iter().enumerate() {
                    state.fsv.factor_logvol[(tau, j)] = h;
                }
            }
        }
        ws.idio_vol = state.fsv.idio_logvol.map(f64::exp);
        ws.factor_vol = state.fsv.factor_logvol.map(f64::exp);
    }
    timings[0] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[0]);

    // 2. Loadings.
    let tstart = Instant::now();
    if r > 0 {
        let streams = StreamFactory::new(seed, chain, Block::Loadings, it);
        let u = ws.residual_u(state, p);
        state.fsv.loadings =
            draw_loadings(&state.fsv.factors, &u, &ws.idio_vol, fsv_priors.loading_var, &streams)
                .map_err(|e| fail("loadings", e))?;
        ws.factor_comp = &state.fsv.factors * state.fsv.loadings.transpose();
    }
    timings[1] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[1]);

    // 3. Factors.
    let tstart = Instant::now();
    if r > 0 {
        let streams = StreamFactory::new(seed, chain, Block::Factors, it);
        let u = ws.residual_u(state, p);
        state.fsv.factors =
            draw_factors(&state.fsv.loadings, &u, &ws.idio_vol, &ws.factor_vol, &streams)
                .map_err(|e| fail("factors", e))?;
        ws.factor_comp = &state.fsv.factors * state.fsv.loadings.transpose();
    }
    timings[2] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[2]);

    // 4. Regression parameters.
    let tstart = Instant::now();
    {
        let streams = StreamFactory::new(seed, chain, Block::Regression, it);
        let pi =
            draw_pi(&state.x, &ws.factor_comp, &ws.idio_vol, prior_diags, p, cfg.sampler, &streams)
                .map_err(|e| fail("regression", e))?;
        state.params = pi_matrix_to_params(&pi, data.n_monthly(), data.n_quarterly(), p)
            .map_err(|e| fail("regression", e))?;
        ws.fitted = &ws.lagmat * pi.transpose();
    }
    timings[3] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[3]);

    // 5. Latent monthly states.
    let tstart = Instant::now();
    {
        let mut rng = derive_rng(seed, StreamKey::new(chain, Block::Smoother, it, 0));
        let draw = simulation_smoother(
            &state.params,
            &state.fsv,
            data,
            &cfg.smoother,
            SmootherVariant::AdaptiveUnivariate,
            &mut rng,
        )
        .map_err(|e| fail("latent", e))?;
        state.x = draw.latent;
        ws.lagmat = build_lag_matrix(&state.x, p);
        let pi = params_to_matrix(&state.params);
        ws.fitted = &ws.lagmat * pi.transpose();
    }
    timings[4] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[4]);

    // 6. Mixture indicators (immediately before the volatilities).
    let tstart = Instant::now();
    {
        let t_eff = data.len() - p;
        for i in 0..n {
            for tau in 0..t_eff {
                let resid =
                    state.x[(p + tau, i)] - ws.fitted[(tau, i)] - ws.factor_comp[(tau, i)];
                ws.ystar_idio[i][tau] = (resid * resid + LOGVOL_OFFSET).ln();
            }
        }
        for j in 0..r {
            for tau in 0..t_eff {
                let f = state.fsv.factors[(tau, j)];
                ws.ystar_factor[j][tau] = (f * f + LOGVOL_OFFSET).ln();
            }
        }

        let streams = StreamFactory::new(seed, chain, Block::Indicators, it);
        let fsv = &state.fsv;
        let drawn: Vec<Vec<usize>> = (0..n + r)
            .into_par_iter()
            .map(|c| {
                let mut rng = streams.rng(c as u64);
                if c < n {
                    let col: Vec<f64> = fsv.idio_logvol.column(c).iter().copied().collect();
                    sample_mixture_indicators(&ws.ystar_idio[c], &col, &table, &mut rng)
                } else {
                    let j = c - n;
                    let col: Vec<f64> = fsv.factor_logvol.column(j).iter().copied().collect();
                    sample_mixture_indicators(&ws.ystar_factor[j], &col, &table, &mut rng)
                }
            })
            .collect();
        for (c, s) in drawn.into_iter().enumerate() {
            if c < n {
                state.idio_indicators[c] = s;
            } else {
                state.factor_indicators[c - n] = s;
            }
        }
    }
    timings[5] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[5]);

    // 7. Log-volatility paths.
    let tstart = Instant::now();
    {
        let streams = StreamFactory::new(seed, chain, Block::LogVol, it);
        let fsv = &state.fsv;
        let drawn: Vec<Result<Vec<f64>>> = (0..n + r)
            .into_par_iter()
            .map(|c| {
                let mut rng = streams.rng(c as u64);
                if c < n {
                    draw_logvol_path(
                        &state.idio_indicators[c],
                        &ws.ystar_idio[c],
                        &fsv.idio_params[c],
                        &table,
                        &mut rng,
                    )
                } else {
                    let j = c - n;
                    draw_logvol_path(
                        &state.factor_indicators[j],
                        &ws.ystar_factor[j],
                        &fsv.factor_params[j],
                        &table,
                        &mut rng,
                    )
                }
            })
            .collect();
        for (c, res) in drawn.into_iter().enumerate() {
            let path = res.map_err(|e| fail("volatilities", e))?;
            if c < n {
                for (tau, h) in path.into_iter().enumerate() {
                    state.fsv.idio_logvol[(tau, c)] = h;
                }
            } else {
                let j = c - n;
                for (tau, h) in path.into_iter().enumerate() {
                    state.fsv.factor_logvol[(tau, j)] = h;
                }
            }
        }
        ws.idio_vol = state.fsv.idio_logvol.map(f64::exp);
        ws.factor_vol = state.fsv.factor_logvol.map(f64::exp);
    }
    timings[6] = tstart.elapsed().as_secs_f64();
    observer(iteration, BLOCK_NAMES[6]);

    Ok(())
}

/// Serializes a checkpoint with exact float round-tripping.
pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let mut w = ByteWriter::default();
    w.u64(cp.iteration as u64);
    w.string(cp.failed_block.as_deref().unwrap_or(""));
    w.matrix(&cp.state.x);
    w.u64(cp.state.params.n_monthly as u64);
    w.u64(cp.state.params.n_quarterly as u64);
    w.matrix(&params_to_matrix(&cp.state.params));
    w.matrix(&cp.state.fsv.loadings);
    w.matrix(&cp.state.fsv.factors);
    w.matrix(&cp.state.fsv.idio_logvol);
    w.matrix(&cp.state.fsv.factor_logvol);
    w.sv_params(&cp.state.fsv.idio_params);
    w.sv_params(&cp.state.fsv.factor_params);
    let write_indicators = |w: &mut ByteWriter, ind: &[Vec<usize>]| {
        w.u64(ind.len() as u64);
        for chain in ind {
            w.u64(chain.len() as u64);
            for &s in chain {
                w.u8(s as u8);
            }
        }
    };
    write_indicators(&mut w, &cp.state.idio_indicators);
    write_indicators(&mut w, &cp.state.factor_indicators);

    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"MFBK");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&w.into_bytes());
    let store_bytes = cp.store.to_bytes();
    bytes.extend_from_slice(&(store_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&store_bytes);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut rd = ByteReader::new(&bytes);
    rd.expect_magic(b"MFBK")?;
    let version = rd.u32()?;
    if version != 1 {
        return Err(MfbvarError::Format(format!("unsupported checkpoint version {version}")));
    }
    let iteration = rd.u64()? as usize;
    let failed_block = {
        let s = rd.string()?;
        (!s.is_empty()).then_some(s)
    };
    let x = rd.matrix()?;
    let n_m = rd.u64()? as usize;
    let n_q = rd.u64()? as usize;
    let pi = rd.matrix()?;
    let p = (pi.ncols() - 1) / pi.nrows();
    let params = pi_matrix_to_params(&pi, n_m, n_q, p)?;
    let loadings = rd.matrix()?;
    let factors = rd.matrix()?;
    let idio_logvol = rd.matrix()?;
    let factor_logvol = rd.matrix()?;
    let idio_params = rd.sv_params()?;
    let factor_params = rd.sv_params()?;
    let read_indicators = |rd: &mut ByteReader| -> Result<Vec<Vec<usize>>> {
        let n_chains = rd.u64()? as usize;
        let mut out = Vec::with_capacity(n_chains);
        for _ in 0..n_chains {
            let len = rd.u64()? as usize;
            let mut chain = Vec::with_capacity(len);
            for _ in 0..len {
                chain.push(rd.u8()? as usize);
            }
            out.push(chain);
        }
        Ok(out)
    };
    let idio_indicators = read_indicators(&mut rd)?;
    let factor_indicators = read_indicators(&mut rd)?;
    let store_len = rd.u64()? as usize;
    let store = ChainStore::from_bytes(rd.take_bytes(store_len)?)?;
    Ok(Checkpoint {
        iteration,
        state: GibbsState {
            x,
            params,
            fsv: FsvState {
                loadings,
                factors,
                idio_logvol,
                factor_logvol,
                idio_params,
                factor_params,
            },
            idio_indicators,
            factor_indicators,
        },
        store,
        failed_block,
    })
}
