//! Export of posterior summaries as delimited text or the compact binary
//! matrix container.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use mfbvar::diagnostics::{gdp_volatility, identify_sign_maximin, QuarterlyAggregation};
use mfbvar::store::{write_matrix_binary, ChainStore};
use mfbvar::{MfbvarError, Result};

/// Output format for exported matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Binary,
}

impl std::str::FromStr for ExportFormat {
    type Err = MfbvarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "binary" => Ok(ExportFormat::Binary),
            other => Err(MfbvarError::Validation(format!(
                "unknown export format '{other}' (expected csv|binary)"
            ))),
        }
    }
}

fn posterior_mean<F>(store: &ChainStore, select: F) -> Result<DMatrix<f64>>
where
    F: Fn(&mfbvar::store::Draw) -> &DMatrix<f64>,
{
    if store.is_empty() {
        return Err(MfbvarError::Validation("chain store holds no draws".into()));
    }
    let first = select(&store.draws[0]);
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for d in &store.draws {
        acc += select(d);
    }
    Ok(acc / store.len() as f64)
}

fn percentile_columns(paths: &[Vec<f64>], probs: &[f64]) -> DMatrix<f64> {
    let t_len = paths.first().map(|p| p.len()).unwrap_or(0);
    let mut out = DMatrix::zeros(t_len, probs.len());
    let mut buf = Vec::with_capacity(paths.len());
    for t in 0..t_len {
        buf.clear();
        buf.extend(paths.iter().map(|p| p[t]).filter(|v| v.is_finite()));
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (c, q) in probs.iter().enumerate() {
            out[(t, c)] = if buf.is_empty() {
                f64::NAN
            } else {
                let pos = q * (buf.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let w = pos - lo as f64;
                buf[lo] * (1.0 - w) + buf[hi] * w
            };
        }
    }
    out
}

/// Builds the matrix for one export selector.
pub fn export_matrix(store: &ChainStore, what: &str) -> Result<DMatrix<f64>> {
    match what {
        "pi-mean" => posterior_mean(store, |d| &d.pi),
        "loadings-mean" => posterior_mean(store, |d| &d.loadings),
        "latent-mean" => {
            if !store.has_latent() {
                return Err(MfbvarError::Validation(
                    "chain was run without latent storage".into(),
                ));
            }
            posterior_mean(store, |d| &d.latent)
        }
        "factor-vol" => {
            // 10th/50th/90th percentile paths of the factor volatility
            // (standard-deviation scale), factors stacked column-wise.
            if store.meta.n_factors == 0 {
                return Err(MfbvarError::Validation("model has no factors".into()));
            }
            if store.is_empty() {
                return Err(MfbvarError::Validation("chain store holds no draws".into()));
            }
            let r = store.meta.n_factors;
            let t_eff = store.meta.n_effective;
            let mut out = DMatrix::zeros(t_eff, 3 * r);
            for j in 0..r {
                let paths: Vec<Vec<f64>> = store
                    .draws
                    .iter()
                    .map(|d| {
                        (0..t_eff).map(|t| (d.factor_logvol[(t, j)] / 2.0).exp()).collect()
                    })
                    .collect();
                let cols = percentile_columns(&paths, &[0.1, 0.5, 0.9]);
                out.view_mut((0, 3 * j), (t_eff, 3)).copy_from(&cols);
            }
            Ok(out)
        }
        "gdp-vol" => {
            // Quarterly-scale standard deviation of the first quarterly
            // variable's innovation, percentile paths over draws.
            if store.is_empty() {
                return Err(MfbvarError::Validation("chain store holds no draws".into()));
            }
            if store.meta.n_quarterly == 0 {
                return Err(MfbvarError::Validation("model has no quarterly variable".into()));
            }
            let gdp = store.meta.n_monthly;
            let t_eff = store.meta.n_effective;
            let r = store.meta.n_factors;
            let paths: Vec<Vec<f64>> = store
                .draws
                .iter()
                .map(|d| {
                    let loading = if r > 0 { d.loadings[(gdp, 0)] } else { 0.0 };
                    let fv: Vec<f64> = (0..t_eff)
                        .map(|t| if r > 0 { d.factor_logvol[(t, 0)].exp() } else { 0.0 })
                        .collect();
                    let iv: Vec<f64> =
                        (0..t_eff).map(|t| d.idio_logvol[(t, gdp)].exp()).collect();
                    gdp_volatility(loading, &fv, &iv, QuarterlyAggregation::SquaredWeights)
                        .map(|g| g.quarterly_sd)
                })
                .collect::<Result<_>>()?;
            Ok(percentile_columns(&paths, &[0.1, 0.5, 0.9]))
        }
        "loadings-identified" => {
            // Maximin sign-normalized loading draws, one row per draw.
            if store.meta.n_factors == 0 {
                return Err(MfbvarError::Validation("model has no factors".into()));
            }
            let n = store.meta.n_vars();
            let g = store.len();
            let t_eff = store.meta.n_effective;
            let mut loadings = DMatrix::zeros(g, n);
            let mut factors = DMatrix::zeros(g, t_eff);
            for (row, d) in store.draws.iter().enumerate() {
                for i in 0..n {
                    loadings[(row, i)] = d.loadings[(i, 0)];
                }
                for t in 0..t_eff {
                    factors[(row, t)] = d.factors[(t, 0)];
                }
            }
            identify_sign_maximin(&mut loadings, &mut factors)?;
            Ok(loadings)
        }
        other => Err(MfbvarError::Validation(format!(
            "unknown export selector '{other}' (expected pi-mean|loadings-mean|latent-mean|\
             factor-vol|gdp-vol|loadings-identified)"
        ))),
    }
}

/// Writes a matrix in the requested format.
pub fn write_export(m: &DMatrix<f64>, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Binary => write_matrix_binary(path, m),
        ExportFormat::Csv => {
            let mut out = String::new();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}", m[(i, j)]);
                }
                out.push('\n');
            }
            std::fs::write(path, out)?;
            Ok(())
        }
    }
}

/// Renders an inefficiency-factor summary as tab-separated text with the
/// usual percentile columns.
pub fn render_if_table(summary: &mfbvar::diagnostics::IfSummary) -> String {
    let mut out =
        String::from("group\tparams\tmin\tp50\tp75\tp95\tp99\tmax\tpct_above_20\n");
    for g in &summary.groups {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.1}",
            g.group,
            g.n_params,
            g.min,
            g.p50,
            g.p75,
            g.p95,
            g.p99,
            g.max,
            100.0 * g.share_above_20
        );
    }
    out
}
