//! `spanforest` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use spanforest::baselines::{mst, mst_cut_detailed, mst_cut_fraction};
use spanforest::datagen::GenSpec;
use spanforest::densities::CovariatePriorConfig;
use spanforest::io;
use spanforest::matrixtree::{eigencheck_experiment, EigencheckConfig};
use spanforest::mcmc::{run_chain_with_stats, ChainConfig, McmcSample};
use spanforest::posterior::summarize;
use spanforest::randkit::seeded_rng;

#[derive(Parser)]
#[command(name = "spanforest", version, about = "Bayesian spanning-forest clustering")]
struct Cli {
    /// Worker threads for parallel sections (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic data set and its true labels.
    Generate(GenerateArgs),
    /// Run the Gibbs sampler and summarize the posterior.
    Fit(FitArgs),
    /// Recompute the posterior summary from an existing samples file.
    Summarize(SummarizeArgs),
    /// MST-cut (single-linkage) baseline.
    Baseline(BaselineArgs),
    /// Compare eigenvectors of the edge-marginal matrix and the normalized Laplacian.
    Eigencheck(EigencheckArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Rings,
    GaussMix,
    TMix,
}

#[derive(Args, Serialize)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "SPANFOREST_SEED", default_value_t = 0)]
    seed: u64,
    /// Points per ring.
    #[arg(long, default_value_t = 100)]
    n_per_ring: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 1.0, 2.0])]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    noise_sd: f64,
    /// Mixture size.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// The second component is centred at (b, b).
    #[arg(long, default_value_t = 4.0)]
    b: f64,
    #[arg(long, default_value_t = 3.0)]
    df: f64,
}

#[derive(Args, Serialize)]
struct ChainArgs {
    #[arg(long, env = "SPANFOREST_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Defaults to half the iterations.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_sigma: f64,
}

impl ChainArgs {
    fn config(&self) -> ChainConfig {
        ChainConfig {
            burn_in: self.burn_in.unwrap_or(self.iterations / 2),
            thin: self.thin,
            lambda: self.lambda,
            alpha_sigma: self.alpha_sigma,
            seed: self.seed,
            ..ChainConfig::new(self.iterations)
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Data CSV, one row per point.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Input CSVs have a header row.
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    chain: ChainArgs,
    /// Number of clusters for the point estimate (default: posterior mode).
    #[arg(long)]
    k: Option<usize>,
    /// Covariate CSV aligned with the data rows.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Covariate prior scale multiplier.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
}

#[derive(Args, Serialize)]
struct SummarizeArgs {
    /// samples.jsonl written by `fit`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, env = "SPANFOREST_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    header: bool,
    /// Number of clusters: removes the k - 1 longest MST edges.
    #[arg(long, conflicts_with = "fraction")]
    k: Option<usize>,
    /// Alternatively remove this fraction of the MST edges.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args, Serialize)]
struct EigencheckArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 25, 50, 100, 200])]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    replicates: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    /// Number of leading eigenvectors compared.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_sigma: f64,
    #[arg(long, env = "SPANFOREST_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct RunConfig<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    threads: Option<usize>,
    args: &'a T,
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_run_config<T: Serialize>(dir: &Path, command: &'static str, threads: Option<usize>, args: &T) -> Result<()> {
    let cfg = RunConfig { command, version: env!("CARGO_PKG_VERSION"), threads, args };
    io::write_json(&dir.join("run_config.json"), &cfg)?;
    Ok(())
}

fn write_summary(dir: &Path, samples: &[McmcSample], k: Option<usize>, seed: u64) -> Result<()> {
    let summary = summarize(samples, k, &mut seeded_rng(seed, 1))?;
    io::write_psm_csv(&dir.join("psm.csv"), &summary.psm)?;
    io::write_k_hist_json(&dir.join("k_hist.json"), &summary.k_hist)?;
    io::write_labels_csv(&dir.join("labels.csv"), &summary.point_estimate)?;
    io::write_json(&dir.join("summary.json"), &summary.report())?;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, threads: Option<usize>) -> Result<()> {
    let spec = match a.kind {
        Kind::Rings => GenSpec::Rings { n_per_ring: a.n_per_ring, radii: a.radii.clone(), noise_sd: a.noise_sd },
        Kind::GaussMix => GenSpec::GaussMix { n: a.n, b: a.b },
        Kind::TMix => GenSpec::TMix { n: a.n, b: a.b, df: a.df },
    };
    let (data, truth) = spec.generate(&mut seeded_rng(a.seed, 0))?;
    prepare_out(&a.out)?;
    io::write_dataset_csv(&a.out.join("data.csv"), &data)?;
    io::write_labels_csv(&a.out.join("truth.csv"), &truth)?;
    write_run_config(&a.out, "generate", threads, a)
}

fn cmd_fit(a: &FitArgs, threads: Option<usize>) -> Result<()> {
    let data = io::read_dataset_csv(&a.input, a.header).with_context(|| format!("reading {}", a.input.display()))?;
    let covariates = match &a.covariates {
        Some(path) => {
            let rows = io::read_matrix_csv(path, a.header).with_context(|| format!("reading {}", path.display()))?;
            Some(CovariatePriorConfig::new(&rows, a.eta)?)
        }
        None => None,
    };
    let cfg = a.chain.config();
    prepare_out(&a.out)?;
    write_run_config(&a.out, "fit", threads, a)?;
    let (samples, stats) = run_chain_with_stats(&data, &cfg, covariates.as_ref(), &mut seeded_rng(cfg.seed, 0))?;
    if samples.is_empty() {
        bail!("no samples retained; increase --iterations or lower --burn-in");
    }
    io::write_samples_jsonl(&a.out.join("samples.jsonl"), &samples)?;
    write_summary(&a.out, &samples, a.k, cfg.seed)?;
    eprintln!(
        "{} samples retained; {} walk steps; GIG acceptance {:.3}",
        samples.len(),
        stats.walk_steps,
        stats.gig_accepted as f64 / stats.gig_proposals.max(1) as f64
    );
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs, threads: Option<usize>) -> Result<()> {
    let samples = io::read_samples_jsonl(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    prepare_out(&a.out)?;
    write_summary(&a.out, &samples, a.k, a.seed)?;
    write_run_config(&a.out, "summarize", threads, a)
}

#[derive(Serialize)]
struct BaselineReport {
    removed_edges: usize,
    cut_lengths: Vec<f64>,
    cluster_sizes: Vec<usize>,
    mst_length: f64,
}

fn cmd_baseline(a: &BaselineArgs, threads: Option<usize>) -> Result<()> {
    let data = io::read_dataset_csv(&a.input, a.header).with_context(|| format!("reading {}", a.input.display()))?;
    let tree = mst(&data);
    let cut = match (a.k, a.fraction) {
        (Some(k), None) => mst_cut_detailed(&tree, k)?,
        (None, Some(q)) => mst_cut_fraction(&tree, q)?,
        _ => bail!("pass exactly one of --k or --fraction"),
    };
    prepare_out(&a.out)?;
    io::write_labels_csv(&a.out.join("labels.csv"), &cut.partition)?;
    let report = BaselineReport {
        removed_edges: cut.cut_lengths.len(),
        cut_lengths: cut.cut_lengths.clone(),
        cluster_sizes: cut.partition.sizes(),
        mst_length: tree.total_length(),
    };
    io::write_json(&a.out.join("summary.json"), &report)?;
    write_run_config(&a.out, "baseline", threads, a)
}

fn cmd_eigencheck(a: &EigencheckArgs, threads: Option<usize>) -> Result<()> {
    let cfg = EigencheckConfig {
        n_grid: a.grid.clone(),
        replicates: a.replicates,
        iterations: a.iterations,
        burn_in: a.burn_in,
        k: a.k,
        lambda: a.lambda,
        alpha_sigma: a.alpha_sigma,
        seed: a.seed,
    };
    let rows = eigencheck_experiment(&cfg)?;
    prepare_out(&a.out)?;
    io::write_eigencheck_csv(&a.out.join("eigencheck.csv"), &rows)?;
    write_run_config(&a.out, "eigencheck", threads, a)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let threads = cli.threads;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, threads),
        Command::Fit(a) => cmd_fit(a, threads),
        Command::Summarize(a) => cmd_summarize(a, threads),
        Command::Baseline(a) => cmd_baseline(a, threads),
        Command::Eigencheck(a) => cmd_eigencheck(a, threads),
    }
}
