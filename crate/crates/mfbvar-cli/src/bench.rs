//! Benchmark harness for the simulation-smoother variants.
//!
//! For every `(n, p)` cell the harness simulates a stationary system with a
//! realistic end-of-sample observation pattern, verifies that all requested
//! variants produce the same draw from shared noise (a correctness gate:
//! disagreement aborts the benchmark), and then times each variant's
//! smoothing block over repeated draws, reporting the median.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::Deserialize;

use mfbvar::rng::{derive_rng, Block, StreamKey};
use mfbvar::state_smoother::{
    build_model, fsv_levels, simulation_smoother_with_noise, ModelKind, SmootherNoise,
    SmootherSettings, SmootherVariant,
};
use mfbvar::synthetic::{random_fsv, simulate_dataset, stable_var, RaggedSpec};
use mfbvar::{MfbvarError, Result};

/// Benchmark specification, loadable from a TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    /// Variable counts to sweep.
    pub ns: Vec<usize>,
    /// Lag lengths to sweep.
    pub lags: Vec<usize>,
    /// Variant names: companion | adaptive | adaptive-univariate.
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    /// Day-of-month snapshot shaping the ragged edge.
    #[serde(default = "default_pattern_day")]
    pub pattern_day: u32,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Sample length in months.
    #[serde(default = "default_periods")]
    pub periods: usize,
    /// Number of quarterly variables (1, or 3 for the small-system panel
    /// where univariate filtering loses its edge).
    #[serde(default = "default_quarterly")]
    pub quarterly: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_variants() -> Vec<String> {
    vec!["companion".into(), "adaptive".into(), "adaptive-univariate".into()]
}
fn default_pattern_day() -> u32 {
    15
}
fn default_repetitions() -> usize {
    3
}
fn default_periods() -> usize {
    120
}
fn default_quarterly() -> usize {
    1
}

impl BenchSpec {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: BenchSpec = toml::from_str(&text)
            .map_err(|e| MfbvarError::Validation(format!("bench spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.lags.is_empty() || self.variants.is_empty() {
            return Err(MfbvarError::Validation("bench sweeps must be nonempty".into()));
        }
        if self.repetitions < 3 {
            return Err(MfbvarError::Validation("need at least 3 repetitions".into()));
        }
        if self.quarterly == 0 {
            return Err(MfbvarError::Validation("need at least one quarterly variable".into()));
        }
        for v in &self.variants {
            SmootherVariant::from_str(v)?;
        }
        Ok(())
    }

    pub fn parsed_variants(&self) -> Vec<SmootherVariant> {
        self.variants.iter().map(|v| SmootherVariant::from_str(v).unwrap()).collect()
    }
}

/// Timing for one (variant, n, p) cell.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: SmootherVariant,
    pub n_vars: usize,
    pub lags: usize,
    pub state_dim: usize,
    pub median_seconds: f64,
    pub mean_seconds: f64,
    pub repetitions: usize,
}

/// Ragged edge implied by a day-of-month snapshot: early in the month most
/// series still miss their previous value; past mid-month only the slow
/// ones do.
fn ragged_for_day(day: u32, n_m: usize) -> RaggedSpec {
    let monthly_tail_missing = (0..n_m)
        .map(|i| {
            let slow = i % 6 == 5;
            if day < 10 {
                if slow {
                    2
                } else {
                    1
                }
            } else if day < 25 {
                if slow {
                    2
                } else {
                    usize::from(i % 3 == 2)
                }
            } else {
                usize::from(slow)
            }
        })
        .collect();
    RaggedSpec { monthly_tail_missing, quarterly_tail_hidden: 1 }
}

/// Runs the benchmark: correctness gate first, then timings.
pub fn bench_smoothers(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let variants = spec.parsed_variants();
    let mut rows = Vec::new();
    for &n in &spec.ns {
        for &p in &spec.lags {
            let cell = bench_cell(spec, &variants, n, p)?;
            rows.extend(cell);
        }
    }
    Ok(rows)
}

fn bench_cell(
    spec: &BenchSpec,
    variants: &[SmootherVariant],
    n: usize,
    p: usize,
) -> Result<Vec<BenchRow>> {
    let n_q = spec.quarterly.min(n.saturating_sub(1)).max(1);
    let n_m = n - n_q;
    let t_len = spec.periods;
    let mut rng = derive_rng(
        spec.seed ^ 0xbe9c,
        StreamKey::new(0, Block::Synthetic, n as u64, p as u64),
    );
    let params = stable_var(n_m, n_q, p, &mut rng);
    let fsv = random_fsv(n, 1, t_len - p, 0.5, &mut rng);
    let ragged = ragged_for_day(spec.pattern_day, n_m);
    let first_q = p.max(4);
    let (data, _) = simulate_dataset(&params, &fsv, t_len, 2, first_q, &ragged, &mut rng)?;
    let (idio_vol, factor_comp) = fsv_levels(&fsv);
    let settings = SmootherSettings::default();

    // Correctness gate: all variants must produce the same draw from the
    // same noise before anything is timed.
    {
        let compact =
            build_model(&params, &data, &idio_vol, &factor_comp, &settings, ModelKind::Compact)?;
        let companion =
            build_model(&params, &data, &idio_vol, &factor_comp, &settings, ModelKind::Companion)?;
        let noise = SmootherNoise::generate(
            compact.n_vars(),
            compact.lag_window,
            compact.horizon(),
            &mut rng,
        );
        let mut drawn: Vec<(SmootherVariant, nalgebra::DMatrix<f64>)> = Vec::new();
        for &variant in variants {
            let draw = match variant {
                SmootherVariant::Companion => {
                    simulation_smoother_with_noise(&companion, &data, &noise, false)?
                }
                SmootherVariant::Adaptive => {
                    simulation_smoother_with_noise(&compact, &data, &noise, false)?
                }
                SmootherVariant::AdaptiveUnivariate => {
                    simulation_smoother_with_noise(&compact, &data, &noise, true)?
                }
            };
            drawn.push((variant, draw.latent));
        }
        for pair in drawn.windows(2) {
            let diff = (&pair[0].1 - &pair[1].1).abs().max();
            if diff > 1e-6 {
                return Err(MfbvarError::Numerical(format!(
                    "smoother variants disagree at n={n}, p={p}: {} vs {} differ by {diff:e}",
                    pair[0].0.as_str(),
                    pair[1].0.as_str()
                )));
            }
        }
    }

    // Timed region: one full smoothing block per repetition (system
    // construction plus the draw, matching the per-iteration cost inside
    // the sampler).
    let mut rows = Vec::new();
    for &variant in variants {
        let kind = match variant {
            SmootherVariant::Companion => ModelKind::Companion,
            _ => ModelKind::Compact,
        };
        let univariate = matches!(variant, SmootherVariant::AdaptiveUnivariate);
        let mut times = Vec::with_capacity(spec.repetitions);
        let mut state_dim = 0;
        for rep in 0..spec.repetitions {
            let mut noise_rng = derive_rng(
                spec.seed ^ 0x7731,
                StreamKey::new(0, Block::Synthetic, (n * 31 + p) as u64, rep as u64),
            );
            let start = Instant::now();
            let model =
                build_model(&params, &data, &idio_vol, &factor_comp, &settings, kind)?;
            let noise = SmootherNoise::generate(
                model.n_vars(),
                model.lag_window,
                model.horizon(),
                &mut noise_rng,
            );
            let draw = simulation_smoother_with_noise(&model, &data, &noise, univariate)?;
            times.push(start.elapsed().as_secs_f64());
            state_dim = model.max_dim();
            std::hint::black_box(&draw.latent);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = times[times.len() / 2];
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(BenchRow {
            variant,
            n_vars: n,
            lags: p,
            state_dim,
            median_seconds: median,
            mean_seconds: mean,
            repetitions: spec.repetitions,
        });
    }
    Ok(rows)
}

/// Renders the timing table as tab-separated text.
pub fn render_table(rows: &[BenchRow], workers: usize) -> String {
    let mut out = String::from("variant\tn\tlags\tstate_dim\tmedian_seconds\tmean_seconds\treps\tworkers\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}\t{}\t{}",
            row.variant.as_str(),
            row.n_vars,
            row.lags,
            row.state_dim,
            row.median_seconds,
            row.mean_seconds,
            row.repetitions,
            workers
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        let spec: BenchSpec =
            toml::from_str("ns = [8]\nlags = [5]\nrepetitions = 3\nperiods = 60\n").unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.variants.len(), 3);
        let bad: BenchSpec =
            toml::from_str("ns = [8]\nlags = [5]\nrepetitions = 2\nperiods = 60\n").unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn small_benchmark_runs_and_orders_sanely() {
        let spec = BenchSpec {
            ns: vec![8],
            lags: vec![5],
            variants: default_variants(),
            pattern_day: 15,
            repetitions: 3,
            periods: 60,
            quarterly: 1,
            seed: 5,
        };
        let rows = bench_smoothers(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        let dim_of = |v: SmootherVariant| {
            rows.iter().find(|r| r.variant == v).map(|r| r.state_dim).unwrap()
        };
        // Companion state strictly larger than the compact one.
        assert!(dim_of(SmootherVariant::Companion) > dim_of(SmootherVariant::Adaptive));
        let table = render_table(&rows, 1);
        assert!(table.lines().count() == 4);
        assert!(table.contains("adaptive-univariate"));
    }
}
