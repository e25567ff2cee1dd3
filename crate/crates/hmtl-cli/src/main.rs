//! Command-line experiment runner: fit a model, benchmark methods over
//! moving windows, generate synthetic datasets, or run a standalone
//! hyperparameter search.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use hmtl_core::baselines::GridSpec;
use hmtl_core::bench::{
    dump_synthetic, grid_search_first_window, run_experiment, ExperimentConfig, Method,
};
use hmtl_core::data_io::{load_grid_csv, load_gridded_csv, Season};
use hmtl_core::driver::{fit_hmtl, save_model, DriverConfig};
use hmtl_core::model::Hyperparams;
use hmtl_core::omega::AdmmConfig;
use hmtl_core::synthetic::SyntheticSpec;
use hmtl_core::theta::ThetaSolveConfig;

#[derive(Parser)]
#[command(name = "hmtl", version, about = "Hierarchical multitask model-ensemble regression")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results
    /// are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint model on a gridded CSV dataset and write a model file.
    Fit(FitArgs),
    /// Run the full moving-window benchmark described by a TOML config.
    Bench(BenchArgs),
    /// Generate a synthetic dataset and dump it in the interchange format.
    Synth(SynthArgs),
    /// Select hyperparameters on the first training window of a config.
    Gridsearch(GridsearchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Gridded data CSV (variable,year,month,location_id,lat,lon,observed,esm_*).
    #[arg(long)]
    data: PathBuf,
    /// Optional grid metadata CSV (location_id,row,col,lat,lon).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Season filter: summer, winter, or year.
    #[arg(long, default_value = "year")]
    season: String,
    #[arg(long)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    super_tasks: usize,
    #[arg(long, default_value_t = 15)]
    sub_tasks: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    dof: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 0.7)]
    within: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lattice rows; rows * cols must equal --sub-tasks.
    #[arg(long)]
    grid_rows: usize,
    /// Lattice columns.
    #[arg(long)]
    grid_cols: usize,
    #[arg(long, default_value_t = 1901)]
    start_year: i32,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridsearchArgs {
    #[arg(long)]
    config: PathBuf,
    /// One of: hmtl, mssl, ols, mma, best_esm, s2m2r.
    #[arg(long)]
    method: String,
    /// Override the first window's training length.
    #[arg(long)]
    train_years: Option<u32>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("failed to configure the thread pool")?;
    }
    match cli.command {
        Command::Fit(args) => run_fit(args),
        Command::Bench(args) => run_bench(args),
        Command::Synth(args) => run_synth(args),
        Command::Gridsearch(args) => run_gridsearch(args),
    }
}

fn run_fit(args: FitArgs) -> anyhow::Result<()> {
    let table = load_gridded_csv(&args.data)
        .with_context(|| format!("failed to load {}", args.data.display()))?;
    if let Some(grid_path) = &args.grid {
        // validated for consistency even though the fit itself has no
        // spatial prior
        let grid = load_grid_csv(grid_path)?;
        grid.laplacian_for(table.locations())?;
    }
    let season = Season::parse(&args.season)?;
    let table = table.extract_season(season);
    let data = table.to_hierarchical_dataset()?;
    let hyper = Hyperparams::new(args.lambda0, args.lambda1, args.lambda2)?;
    let model = fit_hmtl(
        &data,
        &hyper,
        &DriverConfig {
            rng_seed: args.seed,
            ..DriverConfig::default()
        },
        &ThetaSolveConfig::default(),
        &AdmmConfig::default(),
    )?;
    println!(
        "fit: {} super-tasks, {} sub-tasks, dim {}; {} outer iterations, converged: {}, objective {:.6e}",
        data.num_super_tasks(),
        data.num_sub_tasks(),
        data.dim(),
        model.report.outer_iterations,
        model.report.converged,
        model.report.objective_trace.last().copied().unwrap_or(f64::NAN),
    );
    save_model(&model, &args.out)?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn run_bench(args: BenchArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("failed to read {}", args.config.display()))?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).context("invalid experiment config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        config.output_dir = dir;
    }
    let outputs = run_experiment(&config)?;
    println!("method,variable,train_years,mean_rmse,std_rmse,windows");
    for row in &outputs.summary {
        println!(
            "{},{},{},{:.6},{:.6},{}",
            row.method, row.variable, row.train_years, row.mean_rmse, row.std_rmse, row.windows
        );
    }
    println!("reports written to {}", config.output_dir.display());
    Ok(())
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        super_tasks: args.super_tasks,
        sub_tasks: args.sub_tasks,
        dim: args.dim,
        samples: args.samples,
        dof: args.dof,
        groups: args.groups,
        within: args.within,
        noise_var: args.noise_var,
        seed: args.seed,
    };
    let grid = GridSpec::new(args.grid_rows, args.grid_cols)?;
    let (data_path, grid_path, truth_path) =
        dump_synthetic(&spec, grid, args.start_year, &args.out_dir)?;
    println!("data:  {}", data_path.display());
    println!("grid:  {}", grid_path.display());
    println!("truth: {}", truth_path.display());
    Ok(())
}

fn run_gridsearch(args: GridsearchArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("failed to read {}", args.config.display()))?;
    let config: ExperimentConfig = toml::from_str(&text).context("invalid experiment config")?;
    let method = Method::parse(&args.method)?;
    if matches!(method, Method::Ols | Method::Mma | Method::BestEsm) {
        bail!("method `{}` has no hyperparameters to search", args.method);
    }
    let chosen = grid_search_first_window(&config, method, args.train_years)?;
    println!("{}", serde_json::to_string_pretty(&chosen)?);
    Ok(())
}
