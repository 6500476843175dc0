//! `mtsb`: simulate, estimate and bicluster matrix-valued time series.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use mtsb_core::io::RunConfig;
use mtsb_core::simulate::{make_scenario_preset, parse_key_values, ScenarioSpec};
use mtsb_core::evaluate::Method;
use mtsb_core::{FactorNumbers, Result};

#[derive(Debug, Parser)]
#[command(name = "mtsb", version, about = "Factor estimation and biclustering for matrix-valued time series")]
struct Cli {
    /// Worker threads [default: one per core].
    #[arg(long, global = true, env = "MTSB_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// `key = value` run configuration. Command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic series with its ground truth.
    Simulate(SimulateArgs),
    /// Estimate factor numbers, loadings and row/column clusters.
    Bicluster(BiclusterArgs),
    /// Estimate the four factor numbers and write ratio diagnostics.
    Factors(FactorsArgs),
    /// Estimate the global and cluster-specific loading matrices.
    Loadings(LoadingsArgs),
    /// Monte Carlo replications of a scenario.
    Replicate(ReplicateArgs),
    /// Rolling out-of-sample reconstruction error.
    Rolling(RollingArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Long-format `t,row,col,value` CSV, optionally gzipped.
    input: PathBuf,

    /// Largest lag in the autocovariance sums.
    #[arg(long)]
    l0: Option<usize>,

    /// Number of leading row eigenvalues searched for ratio peaks.
    #[arg(long = "J0-row", value_name = "J0")]
    j0_row: Option<usize>,

    /// Number of leading column eigenvalues searched for ratio peaks.
    #[arg(long = "J0-col", value_name = "J0")]
    j0_col: Option<usize>,

    /// Keep the per-cell temporal means.
    #[arg(long)]
    no_demean: bool,

    /// Divide each cell by its temporal standard deviation.
    #[arg(long)]
    standardize: bool,

    /// K-means seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counts(usize, usize, usize, usize);

impl Counts {
    fn known(self) -> FactorNumbers {
        FactorNumbers::known(self.0, self.1, self.2, self.3)
    }
}

fn parse_counts(s: &str) -> std::result::Result<Counts, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("`{x}` is not a count")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [k0, k, r0, r] => Ok(Counts(k0, k, r0, r)),
        _ => Err(format!("expected k0,k,r0,r, got {} values", parts.len())),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: mtsb_core::Error| e.to_string())
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected m,n")?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("`{x}` is not a count"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug, Args)]
struct CountArgs {
    /// Factor numbers as `k0,k,r0,r`.
    #[arg(long, value_name = "K0,K,R0,R", value_parser = parse_counts, conflicts_with_all = ["k0", "k", "r0", "r"])]
    factor_numbers: Option<Counts>,

    /// Global row factors.
    #[arg(long, requires_all = ["k", "r0", "r"])]
    k0: Option<usize>,
    /// Cluster-specific row factors.
    #[arg(long, requires_all = ["k0", "r0", "r"])]
    k: Option<usize>,
    /// Global column factors.
    #[arg(long, requires_all = ["k0", "k", "r"])]
    r0: Option<usize>,
    /// Cluster-specific column factors.
    #[arg(long, requires_all = ["k0", "k", "r0"])]
    r: Option<usize>,
}

impl CountArgs {
    fn get(&self) -> Option<Counts> {
        self.factor_numbers.or(match (self.k0, self.k, self.r0, self.r) {
            (Some(k0), Some(k), Some(r0), Some(r)) => Some(Counts(k0, k, r0, r)),
            _ => None,
        })
    }
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Preset scenario (I or II).
    #[arg(long, default_value = "I")]
    scenario: String,

    /// Rows per row cluster.
    #[arg(long, default_value_t = 10)]
    p1: usize,

    /// Columns per column cluster.
    #[arg(long, default_value_t = 10)]
    q1: usize,

    /// Series length, overriding the preset.
    #[arg(long = "T", value_name = "T")]
    t_len: Option<usize>,

    /// Full scenario as a `key = value` file; replaces the preset flags.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["scenario", "p1", "q1"])]
    scenario_file: Option<PathBuf>,

    /// Base seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ScenarioArgs {
    fn spec(&self) -> Result<ScenarioSpec> {
        let mut spec = match &self.scenario_file {
            Some(path) => ScenarioSpec::from_config_file(path)?,
            None => make_scenario_preset(&self.scenario, self.p1, self.q1)?,
        };
        if let Some(t) = self.t_len {
            spec.t_len = t;
        }
        let spec = spec.with_seed(self.seed);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BiclusterArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    counts: CountArgs,

    /// Fixed cluster counts `m,n` instead of the eigenvalue threshold.
    #[arg(long, value_name = "M,N", value_parser = parse_pair)]
    clusters: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
struct FactorsArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct LoadingsArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    counts: CountArgs,
}

#[derive(Debug, Args)]
struct ReplicateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Number of replications.
    #[arg(long, default_value_t = 100)]
    reps: usize,

    /// Lag orders to evaluate, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    l0: Vec<usize>,

    /// Use the true factor numbers for estimation.
    #[arg(long)]
    known: bool,

    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RollingArgs {
    #[command(flatten)]
    input: InputArgs,

    #[command(flatten)]
    counts: CountArgs,

    /// First validated time point (1-based).
    #[arg(long)]
    start: usize,

    /// ours, acce or pca.
    #[arg(long, default_value = "ours", value_parser = parse_method)]
    method: Method,
}

/// Defaults, then the config file, then flags. CSV input is demeaned unless
/// the file or `--no-demean` says otherwise.
fn run_config(file: Option<&Path>, input: &InputArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        demean: true,
        ..RunConfig::default()
    };
    if let Some(path) = file {
        for (k, v) in parse_key_values(&std::fs::read_to_string(path)?)? {
            cfg.set(&k, &v)?;
        }
    }
    if let Some(l0) = input.l0 {
        cfg.l0 = l0;
    }
    if input.j0_row.is_some() {
        cfg.j0_row = input.j0_row;
    }
    if input.j0_col.is_some() {
        cfg.j0_col = input.j0_col;
    }
    if input.no_demean {
        cfg.demean = false;
    }
    if input.standardize {
        cfg.standardize = true;
    }
    if let Some(seed) = input.seed {
        cfg.seed = seed;
        cfg.kmeans.seed = seed;
    }
    if let Some(out) = &input.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn usage_error(cmd: clap::error::ErrorKind, msg: &str) -> ! {
    use clap::CommandFactory;
    Cli::command().error(cmd, msg).exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let config = cli.config.as_deref();
    let outcome = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Bicluster(a) => commands::bicluster(config, a),
        Command::Factors(a) => commands::factors(config, a),
        Command::Loadings(a) => commands::loadings(config, a),
        Command::Replicate(a) => commands::replicate(a),
        Command::Rolling(a) => {
            if a.counts.get().is_none() {
                usage_error(
                    clap::error::ErrorKind::MissingRequiredArgument,
                    "rolling needs --factor-numbers or all of --k0 --k --r0 --r",
                );
            }
            commands::rolling(config, a)
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtsb: error: {e}");
            ExitCode::from(1)
        }
    }
}
