use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "ectsens",
    version,
    about = "Doubly robust and tilting sensitivity analysis for externally controlled trials",
    long_about = None
)]
pub struct Cli {
    /// Worker threads for bootstrap and Monte Carlo runs [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Key/value TOML file whose entries fill in flags not given on the command line
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset from the built-in design and write it as CSV
    Simulate(SimulateArgs),
    /// Fit the nuisance models and write them as JSON
    Fit(FitArgs),
    /// Point estimate, optionally with a bootstrap Wald interval
    Estimate(EstimateArgs),
    /// Estimates over a grid of sensitivity parameters (CSV)
    Grid(GridArgs),
    /// Benchmark sensitivity-parameter magnitudes against observed covariates
    Calibrate(CalibrateArgs),
    /// Run a Monte Carlo study from a scenario file or preset
    Mc(McArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Input CSV
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,

    /// Column names in the order covariates...,s,r,y [default: every other column is a covariate, outcome columns s,r,y]
    #[arg(long, value_name = "COLS")]
    pub schema: Option<String>,

    /// Extra tokens read as a missing outcome (the empty string always is)
    #[arg(long = "na", value_name = "TOKEN", value_delimiter = ',')]
    pub na: Vec<String>,
}

#[derive(Debug, Args)]
pub struct NuisanceArgs {
    /// Feature map for the propensity models: raw or z
    #[arg(long, value_name = "MAP")]
    pub ps_features: Option<String>,

    /// Feature map for the outcome models: raw or z
    #[arg(long, value_name = "MAP")]
    pub om_features: Option<String>,

    /// Candidate mixture sizes, selected by BIC [default: 1,2,3]
    #[arg(long, value_name = "K,..", value_delimiter = ',')]
    pub k_grid: Vec<usize>,

    /// Propensity clipping bounds LO,HI [default: 0.01,0.99]
    #[arg(long, value_name = "LO,HI", value_delimiter = ',', num_args = 2)]
    pub clip: Vec<f64>,

    /// EM restarts per mixture size [default: 5]
    #[arg(long, value_name = "N")]
    pub restarts: Option<usize>,

    /// Standardise covariates before the feature map
    #[arg(long)]
    pub standardize: bool,

    /// Reuse nuisance models written by `fit` instead of refitting
    #[arg(long, value_name = "FILE")]
    pub nuisance: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootArgs {
    /// Bootstrap replicates (0 = point estimate only)
    #[arg(long = "B", value_name = "B", default_value_t = 0)]
    pub b: usize,

    /// Interval level is 1 - alpha
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Seed for bootstrap resampling and mixture initialisation
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Also write latent potential outcomes and assignments to this CSV
    #[arg(long, value_name = "FILE")]
    pub latent: Option<PathBuf>,

    /// Target number of trial participants
    #[arg(long, default_value_t = 200)]
    pub n_r: usize,

    /// Target number of external controls
    #[arg(long, default_value_t = 500)]
    pub n_e: usize,

    /// Selection on Y(0) in trial participation
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_s: f64,

    /// Selection on Y(0) in external-control intercurrent events
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_r0: f64,

    /// Selection on Y(1) in trial intercurrent events
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_r1: f64,

    /// Trial outcomes after an intercurrent event follow the control law
    #[arg(long)]
    pub j2r: bool,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub nuisance: NuisanceArgs,

    /// Output JSON
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Seed for mixture initialisation
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub nuisance: NuisanceArgs,

    #[command(flatten)]
    pub boot: BootArgs,

    /// primary, tilting, j2r, ps or om
    #[arg(long, default_value = "tilting")]
    pub method: String,

    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_s: f64,

    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_r0: f64,

    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub gamma_r1: f64,

    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub nuisance: NuisanceArgs,

    #[command(flatten)]
    pub boot: BootArgs,

    /// tilting or j2r
    #[arg(long, default_value = "tilting")]
    pub method: String,

    /// Values as START:STOP:STEP or a comma-separated list
    #[arg(long, default_value = "0", allow_hyphen_values = true, value_name = "SPEC")]
    pub gamma_s: String,

    /// Values as START:STOP:STEP or a comma-separated list
    #[arg(long, default_value = "0", allow_hyphen_values = true, value_name = "SPEC")]
    pub gamma_r0: String,

    /// Values as START:STOP:STEP or a comma-separated list
    #[arg(long, default_value = "0", allow_hyphen_values = true, value_name = "SPEC")]
    pub gamma_r1: String,

    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub nuisance: NuisanceArgs,

    /// s, r_in_s0, r_in_s1 or all
    #[arg(long, default_value = "all")]
    pub indicator: String,

    /// Output JSON
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    /// Seed for mixture initialisation
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Scenario TOML file
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,

    /// Built-in study: table3a, table3b or j2r
    #[arg(long)]
    pub preset: Option<String>,

    /// Replications per scenario [default: scenario value, else 500]
    #[arg(long)]
    pub reps: Option<usize>,

    /// Bootstrap replicates per dataset [default: scenario value, else 50]
    #[arg(long = "B", value_name = "B")]
    pub b: Option<usize>,

    /// Study seed [default: scenario value, else 1]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}
