//! `clsis`: generate networks, predict metastable SIS distributions, simulate and compare.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clustered_sis::metastable::CorrectionScaling;
use clustered_sis::SisError;

use crate::config::{GeneratorKind, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "clsis", version, about = "Clustered SIS metastable predictions and simulations")]
struct Cli {
    /// TOML configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dense_threshold: Option<usize>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a configuration-model or surrogate network.
    Generate(GenerateArgs),
    /// Factorize the rate matrix into W and H.
    Factorize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        factor: FactorArgs,
    },
    /// Cluster the node profiles of stored factors.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        /// Directory holding W.csv, H.csv and factors.json; defaults to the output directory.
        #[arg(long)]
        factors: Option<PathBuf>,
    },
    /// Factorize, cluster, solve for the metastable mean and its covariance.
    Predict {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        factor: FactorArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[command(flatten)]
        correction: CorrectionArgs,
    },
    /// Corrected mean field from stored prediction artifacts.
    Correct {
        /// Directory of a previous `predict`; defaults to the output directory.
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long, value_enum)]
        scaling: Option<ScalingArg>,
    },
    /// Metastable Monte Carlo simulation started with every node infected.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Simulate with the off-diagonal rates WᵀH of the factors in this directory.
        #[arg(long)]
        wth: Option<PathBuf>,
        /// Also write the binary event log of one run of this length.
        #[arg(long, requires = "events")]
        log_horizon: Option<f64>,
        #[arg(long, requires = "log_horizon")]
        events: Option<PathBuf>,
    },
    /// Join prediction and (optional) simulation artifacts.
    Compare {
        #[arg(long)]
        prediction: Option<PathBuf>,
        #[arg(long)]
        simulation: Option<PathBuf>,
    },
    /// Markdown report from stored comparison artifacts.
    Report {
        /// Directory holding comparison.json; defaults to the output directory.
        #[arg(long)]
        comparison: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: Option<GeneratorKind>,
    #[arg(long)]
    n: Option<usize>,
    /// Tail exponent `α` of the degree law.
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    mean_degree: Option<f64>,
    #[arg(long)]
    min_degree: Option<f64>,
    #[arg(long)]
    max_degree: Option<usize>,
    /// Uniform curing rate.
    #[arg(long)]
    curing: Option<f64>,
    /// Target NIMFA prevalence of the surrogate.
    #[arg(long)]
    prevalence: Option<f64>,
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    curing: Option<PathBuf>,
    #[arg(long)]
    default_curing: Option<f64>,
}

#[derive(Args, Debug)]
struct FactorArgs {
    /// Inner dimension; omit for W = I, H = Ã.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Tune λ so the reconstructed network keeps the NIMFA prevalence.
    #[arg(long)]
    tune: bool,
    #[arg(long)]
    lambda_lo: Option<f64>,
    #[arg(long)]
    lambda_hi: Option<f64>,
    #[arg(long)]
    nmf_max_iter: Option<usize>,
    /// Force H = W.
    #[arg(long)]
    symmetric: bool,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Number of clusters; omit for one cluster per node.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args, Debug)]
struct CorrectionArgs {
    /// Also compute the corrected mean field.
    #[arg(long)]
    correct: bool,
    #[arg(long, value_enum)]
    scaling: Option<ScalingArg>,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    burn_in: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    interval: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ScalingArg {
    Covariance,
    Literal,
}

impl From<ScalingArg> for CorrectionScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Covariance => CorrectionScaling::Covariance,
            ScalingArg::Literal => CorrectionScaling::Literal,
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl InputArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.input.edges, self.edges.clone());
        set_opt(&mut c.input.curing, self.curing.clone());
        set(&mut c.input.default_curing, self.default_curing);
    }
}

impl FactorArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.factor.k, self.k);
        set(&mut c.factor.lambda, self.lambda);
        c.factor.tune |= self.tune;
        set(&mut c.factor.lambda_lo, self.lambda_lo);
        set(&mut c.factor.lambda_hi, self.lambda_hi);
        set(&mut c.factor.max_iter, self.nmf_max_iter);
        c.factor.symmetric |= self.symmetric;
    }
}

impl ClusterArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.cluster.r, self.r);
        set_opt(&mut c.cluster.outliers, self.outliers);
        set(&mut c.cluster.restarts, self.restarts);
    }
}

impl SimArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.simulation.burn_in, self.burn_in);
        set(&mut c.simulation.window, self.window);
        set_opt(&mut c.simulation.interval, self.interval);
        set(&mut c.simulation.replicas, self.replicas);
    }
}

impl GenerateArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        let g = &mut c.generate;
        set(&mut g.kind, self.kind);
        set_opt(&mut g.n, self.n);
        set(&mut g.exponent, self.exponent);
        set(&mut g.mean_degree, self.mean_degree);
        set_opt(&mut g.min_degree, self.min_degree);
        set_opt(&mut g.max_degree, self.max_degree);
        set(&mut g.curing, self.curing);
        set(&mut g.prevalence, self.prevalence);
    }
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, SisError> {
    let mut c = PipelineConfig::load(cli.config.as_deref())?;
    set(&mut c.output, cli.out.clone());
    set(&mut c.seed, cli.seed);
    set(&mut c.dense_threshold, cli.dense_threshold);
    match &cli.command {
        Command::Generate(a) => a.apply(&mut c),
        Command::Factorize { input, factor } => {
            input.apply(&mut c);
            factor.apply(&mut c);
        }
        Command::Cluster { input, cluster, .. } => {
            input.apply(&mut c);
            cluster.apply(&mut c);
        }
        Command::Predict { input, factor, cluster, correction } => {
            input.apply(&mut c);
            factor.apply(&mut c);
            cluster.apply(&mut c);
            c.correction.enabled |= correction.correct;
            set(&mut c.correction.scaling, correction.scaling.map(Into::into));
        }
        Command::Correct { scaling, .. } => {
            c.correction.enabled = true;
            set(&mut c.correction.scaling, scaling.map(Into::into));
        }
        Command::Simulate { input, sim, .. } => {
            input.apply(&mut c);
            sim.apply(&mut c);
        }
        Command::Compare { .. } | Command::Report { .. } => {}
    }
    c.validate()?;
    Ok(c)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve(cli)?;
    std::fs::create_dir_all(&cfg.output)?;
    let out = cfg.output.clone();
    let here = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| out.clone());
    let started = std::time::Instant::now();
    let (name, result) = match &cli.command {
        Command::Generate(_) => ("generate", commands::generate(&cfg)),
        Command::Factorize { .. } => ("factorize", commands::factorize(&cfg)),
        Command::Cluster { factors, .. } => ("cluster", commands::cluster(&cfg, &here(factors))),
        Command::Predict { .. } => ("predict", commands::predict(&cfg)),
        Command::Correct { prediction, .. } => ("correct", commands::correct(&cfg, &here(prediction))),
        Command::Simulate { wth, log_horizon, events, .. } => {
            ("simulate", commands::simulate(&cfg, wth.as_deref(), log_horizon.zip(events.as_deref())))
        }
        Command::Compare { prediction, simulation } => {
            ("compare", commands::compare(&cfg, &here(prediction), simulation.as_deref()))
        }
        Command::Report { comparison } => ("report", commands::report(&cfg, &here(comparison))),
    };
    // Wall-clock time lives in its own file so every other artifact is reproducible byte for byte.
    commands::write_timing(&out, name, started.elapsed())?;
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, tag) = match e.downcast_ref::<SisError>() {
                Some(s) => (s.exit_code(), s.code()),
                None => (2, "io"),
            };
            eprintln!("error[{tag}]: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
