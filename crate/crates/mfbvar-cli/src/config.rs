//! Structured configuration file with `[model]`, `[prior]`, `[mcmc]` and
//! `[io]` sections. Every setting has a default and every flag on the
//! command line overrides its file counterpart.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use mfbvar::gibbs::McmcConfig;
use mfbvar::priors::MinnesotaConfig;
use mfbvar::reg_sampler::SamplerPolicy;
use mfbvar::state_smoother::SmootherSettings;
use mfbvar::{MfbvarError, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lags: Option<usize>,
    pub factors: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub intercept_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub chain: Option<u64>,
    pub sampler: Option<String>,
    pub workers: Option<usize>,
    pub store_latent: Option<bool>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| MfbvarError::Validation(format!("config file: {e}")))
    }
}

/// Command-line overrides for the estimation run.
#[derive(Debug, Clone, Default)]
pub struct EstimateOverrides {
    pub iters: Option<usize>,
    pub burn: Option<usize>,
    pub thin: Option<usize>,
    pub lags: Option<usize>,
    pub factors: Option<usize>,
    pub seed: Option<u64>,
    pub sampler: Option<String>,
    pub workers: Option<usize>,
    pub store_latent: Option<bool>,
}

/// Merges file configuration and command-line flags into a run config.
pub fn resolve_mcmc(file: &FileConfig, cli: &EstimateOverrides) -> Result<McmcConfig> {
    let defaults = McmcConfig::default();
    let sampler = match cli.sampler.as_deref().or(file.mcmc.sampler.as_deref()) {
        Some(s) => SamplerPolicy::from_str(s)?,
        None => defaults.sampler,
    };
    let cfg = McmcConfig {
        total_iterations: cli.iters.or(file.mcmc.iterations).unwrap_or(defaults.total_iterations),
        burn_in: cli.burn.or(file.mcmc.burn_in).unwrap_or(defaults.burn_in),
        thin: cli.thin.or(file.mcmc.thin).unwrap_or(defaults.thin),
        lags: cli.lags.or(file.model.lags).unwrap_or(defaults.lags),
        n_factors: cli.factors.or(file.model.factors).unwrap_or(defaults.n_factors),
        seed: cli.seed.or(file.mcmc.seed).unwrap_or(defaults.seed),
        chain_id: file.mcmc.chain.unwrap_or(0),
        sampler,
        workers: cli.workers.or(file.mcmc.workers).unwrap_or(0),
        store_latent: cli.store_latent.or(file.mcmc.store_latent).unwrap_or(true),
        smoother: SmootherSettings {
            kappa: file.mcmc.kappa.unwrap_or(SmootherSettings::default().kappa),
            ..SmootherSettings::default()
        },
        checkpoint: file.io.checkpoint.clone(),
        checkpoint_every: file.io.checkpoint_every.unwrap_or(0),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the shrinkage prior from series scales, honoring file overrides.
/// The overall tightness drops to 0.1 above 100 variables unless set
/// explicitly.
pub fn resolve_minnesota(file: &FileConfig, scales: Vec<f64>) -> Result<MinnesotaConfig> {
    let n = scales.len();
    let mut cfg = MinnesotaConfig::default_for(n, scales)?;
    if let Some(l1) = file.prior.lambda1 {
        cfg.lambda1 = l1;
    }
    if let Some(l2) = file.prior.lambda2 {
        cfg.lambda2 = l2;
    }
    if let Some(l3) = file.prior.lambda3 {
        cfg.lambda3 = l3;
    }
    if let Some(s) = file.prior.intercept_scale {
        cfg.intercept_scale = s;
    }
    if cfg.lambda1 <= 0.0 || cfg.lambda2 <= 0.0 || cfg.lambda3 < 0.0 {
        return Err(MfbvarError::Validation("invalid shrinkage hyperparameters".into()));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let file: FileConfig = toml::from_str(
            r#"
            [model]
            lags = 7
            [mcmc]
            iterations = 500
            burn_in = 100
            seed = 42
            "#,
        )
        .unwrap();
        let cli = EstimateOverrides { iters: Some(600), ..Default::default() };
        let cfg = resolve_mcmc(&file, &cli).unwrap();
        assert_eq!(cfg.total_iterations, 600); // flag beats file
        assert_eq!(cfg.lags, 7); // file beats default
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.thin, 20); // default
    }

    #[test]
    fn unknown_keys_rejected() {
        let parsed: std::result::Result<FileConfig, _> = toml::from_str("[mcmc]\nboost = 3\n");
        assert!(parsed.is_err());
    }

    #[test]
    fn tightens_large_models() {
        let file = FileConfig::default();
        let cfg = resolve_minnesota(&file, vec![1.0; 119]).unwrap();
        assert_eq!(cfg.lambda1, 0.1);
        let cfg_small = resolve_minnesota(&file, vec![1.0; 20]).unwrap();
        assert_eq!(cfg_small.lambda1, 0.2);
    }
}
