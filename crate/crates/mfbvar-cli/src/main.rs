//! Command-line driver: estimation, smoother benchmarks, diagnostics and
//! export.
//!
//! Exit codes: 0 on success, 2 for validation problems (bad inputs,
//! malformed files, unknown selectors), 3 for numerical failures (the
//! offending block and iteration go to standard error).

use mfbvar_cli::{bench, config, export, ingest};

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use mfbvar::diagnostics::{summarize_if, IF_GROUPS};
use mfbvar::gibbs::run_mcmc;
use mfbvar::priors::{scale_measures, FsvPriorConfig};
use mfbvar::store::ChainStore;
use mfbvar::MfbvarError;

#[derive(Parser)]
#[command(
    name = "mfbvar",
    about = "Mixed-frequency Bayesian VAR with factor stochastic volatility",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the model on a mixed-frequency dataset.
    Estimate(EstimateArgs),
    /// Time the simulation-smoother variants on synthetic systems.
    Bench(BenchArgs),
    /// Summarize chain mixing (inefficiency factors by parameter group).
    Diagnose(DiagnoseArgs),
    /// Export posterior summaries from a stored chain.
    Export(ExportArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Delimited data file (date column plus one column per series).
    #[arg(long)]
    data: PathBuf,
    /// Series metadata (id,frequency,transform,delay_months,delay_day).
    #[arg(long)]
    meta: PathBuf,
    /// Reference date for the publication calendar (YYYY-MM-DD).
    #[arg(long, value_name = "DATE")]
    as_of: String,
    /// Optional TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Row sampler policy: auto | rue | bhattacharya.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Skip storing latent paths (they dominate chain size).
    #[arg(long)]
    no_store_latent: bool,
    /// Also write the prepared panel (post transform/mask, raw scale) to
    /// <stem>.data.csv and <stem>.meta.csv.
    #[arg(long, value_name = "STEM")]
    export_data: Option<PathBuf>,
    /// Chain output file; defaults to the [io] output in the config file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark specification (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output table (tab-separated); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (benchmarks pin one worker unless given).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Stored chain file.
    #[arg(long)]
    chain: PathBuf,
    /// Output table; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Stored chain file.
    #[arg(long)]
    chain: PathBuf,
    /// Selector: pi-mean | loadings-mean | latent-mean | factor-vol |
    /// gdp-vol | loadings-identified.
    #[arg(long)]
    what: String,
    /// Output format: csv | binary.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &MfbvarError) -> u8 {
    match e {
        MfbvarError::Numerical(_)
        | MfbvarError::SingularInnovation { .. }
        | MfbvarError::Cholesky(_)
        | MfbvarError::Block { .. } => 3,
        _ => 2,
    }
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), MfbvarError> {
    let file_cfg = match &args.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::default(),
    };
    let overrides = config::EstimateOverrides {
        iters: args.iters,
        burn: args.burn,
        thin: args.thin,
        lags: args.lags,
        factors: args.factors,
        seed: args.seed,
        sampler: args.sampler.clone(),
        workers: args.workers,
        store_latent: args.no_store_latent.then_some(false),
    };
    let cfg = config::resolve_mcmc(&file_cfg, &overrides)?;

    let ingested = ingest::ingest(&args.data, &args.meta, &args.as_of)?;
    eprintln!(
        "ingested {} series ({} monthly, {} quarterly), {} periods, balanced through {}",
        ingested.dataset.n_vars(),
        ingested.dataset.n_monthly(),
        ingested.dataset.n_quarterly(),
        ingested.dataset.len(),
        ingested.dataset.balanced_end,
    );
    if let Some(stem) = &args.export_data {
        let data_out = stem.with_extension("data.csv");
        let meta_out = stem.with_extension("meta.csv");
        ingest::export_dataset(&ingested, &data_out, &meta_out)?;
        eprintln!("wrote prepared panel to {} and {}", data_out.display(), meta_out.display());
    }
    let out = args
        .out
        .clone()
        .or(file_cfg.io.output.clone())
        .ok_or_else(|| MfbvarError::Validation("no output path (--out or [io] output)".into()))?;
    let scales = scale_measures(&ingested.dataset)?;
    let minnesota = config::resolve_minnesota(&file_cfg, scales)?;
    let fsv_priors = FsvPriorConfig::default();

    let store = run_mcmc(&cfg, &ingested.dataset, &minnesota, &fsv_priors)?;
    store.write_to(&out)?;
    let total_secs: f64 =
        store.block_seconds.iter().map(|row| row.iter().sum::<f64>()).sum();
    eprintln!(
        "retained {} draws over {} iterations ({:.1} s sampling, {:.3} s/iteration); chain digest {:016x}",
        store.len(),
        cfg.total_iterations,
        total_secs,
        total_secs / cfg.total_iterations.max(1) as f64,
        store.payload_digest(),
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), MfbvarError> {
    let spec = bench::BenchSpec::load(&args.spec)?;
    let workers = args.workers.unwrap_or(1);
    let pool = rayon_pool(workers)?;
    let rows = pool.install(|| bench::bench_smoothers(&spec))?;
    let table = bench::render_table(&rows, workers);
    match &args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn rayon_pool(workers: usize) -> Result<rayon::ThreadPool, MfbvarError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MfbvarError::Validation(format!("worker pool: {e}")))
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), MfbvarError> {
    let store = ChainStore::read_from(&args.chain)?;
    let summary = summarize_if(&store, &IF_GROUPS)?;
    let table = export::render_if_table(&summary);
    match &args.out {
        Some(path) => std::fs::write(path, table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), MfbvarError> {
    let store = ChainStore::read_from(&args.chain)?;
    let format = export::ExportFormat::from_str(&args.format)?;
    let matrix = export::export_matrix(&store, &args.what)?;
    export::write_export(&matrix, &args.out, format)?;
    eprintln!("wrote {} ({} x {})", args.out.display(), matrix.nrows(), matrix.ncols());
    Ok(())
}
