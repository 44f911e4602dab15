//! `driftrate` command-line front end.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use driftrate::nar::FieldChoice;

#[derive(Debug, Parser)]
#[command(
    name = "driftrate",
    version,
    about = "Geometric convergence-rate bounds for Markov chains"
)]
struct Cli {
    /// Run the command stored in a JSON config file instead of one given on the command line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Write the fully resolved command as JSON before running it.
    #[arg(long, global = true, value_name = "FILE")]
    save_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Rate under constant drift and contraction conditions.
    StandardBound(StandardArgs),
    /// Rate under state-dependent conditions for the perturbed-sine chain.
    GeneralizedBound(GeneralizedArgs),
    /// Same as generalized-bound, but --emit-grid is required.
    FigHeatmap(GeneralizedArgs),
    /// Contraction supremum on the coupling set as a function of its level d.
    FigGammaCurve(GammaCurveArgs),
    /// Compare the Durmus–Moulines rate with the improved constant-condition rate.
    CompareDm(CompareDmArgs),
    /// Check bounds against Monte Carlo simulation of the coupled chain.
    Verify(VerifyArgs),
    /// Continuous-time bound from a discrete-time skeleton bound.
    ContinuousBound(ContinuousArgs),
}

// Defaults of a clap argument group, reused as serde defaults so partial JSON
// configs behave like the equivalent command line.
fn clap_defaults<T: Args + clap::FromArgMatches>() -> T {
    #[derive(Parser)]
    struct Wrapper<T: Args + clap::FromArgMatches> {
        #[command(flatten)]
        inner: T,
    }
    Wrapper::<T>::parse_from(["driftrate"]).inner
}

macro_rules! clap_default {
    ($($t:ty),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                clap_defaults()
            }
        })*
    };
}

clap_default!(
    StandardArgs,
    GeneralizedArgs,
    GammaCurveArgs,
    CompareDmArgs,
    VerifyArgs,
    ContinuousArgs
);

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct StandardArgs {
    /// Metric-to-drift-function constant.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Drift contraction factor.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Drift offset.
    #[arg(long = "L", default_value_t = 0.0)]
    #[serde(rename = "L")]
    pub l: f64,
    /// Contraction factor on the coupling set.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Expansion factor off the coupling set.
    #[arg(long = "K", default_value_t = 1.0)]
    #[serde(rename = "K")]
    pub k: f64,
    /// Coupling-set level.
    #[arg(long)]
    pub d: Option<f64>,
    /// Fixed exponent; optimized over (0, 1) when omitted.
    #[arg(long)]
    pub r: Option<f64>,
    /// Initial-law expectation of the drift function, for the prefactor.
    #[arg(long)]
    pub mu_v: Option<f64>,
    /// Use the perturbed-sine chain and optimize jointly over r and d.
    #[arg(long)]
    pub nar: bool,
    /// Grid points for the d search.
    #[arg(long, default_value_t = 41)]
    pub d_points: usize,
    /// Grid points for the r search.
    #[arg(long, default_value_t = 201)]
    pub r_points: usize,
    /// Initial grid step for the coupling-set contraction supremum.
    #[arg(long, default_value_t = 0.05)]
    pub gamma_step: f64,
    /// Write the result as JSON.
    #[arg(long, value_name = "FILE")]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralizedArgs {
    /// Drift-ratio field: loose (upper bound) or tight (exact).
    #[arg(long, default_value = "loose")]
    pub field: FieldChoice,
    /// Drift-function scaling c in V(x) = x^2 / c.
    #[arg(long, default_value_t = 1.0)]
    pub c_tune: f64,
    /// Fixed exponent; optimized over the admissible interval when omitted.
    #[arg(long)]
    pub r: Option<f64>,
    /// Initial grid step [default: 0.02 loose, 0.05 tight].
    #[arg(long)]
    pub step: Option<f64>,
    /// Refinement levels, each halving the step.
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
    /// Peaks refined per level.
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Grid points for the r search.
    #[arg(long, default_value_t = 21)]
    pub r_points: usize,
    /// Starting state for the prefactor.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Write the rate field on the initial grid as CSV (x, y, value).
    #[arg(long, value_name = "FILE")]
    pub emit_grid: Option<PathBuf>,
    /// Write the result as JSON.
    #[arg(long, value_name = "FILE")]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaCurveArgs {
    /// Number of levels strictly inside (6, 2 pi^2).
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Approximate spacing of the levels; overrides --points.
    #[arg(long)]
    pub d_step: Option<f64>,
    /// Initial grid step for each supremum.
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    /// Output CSV file; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareDmArgs {
    #[arg(long)]
    pub eta_p: Option<f64>,
    #[arg(long = "L-p")]
    #[serde(rename = "L_p")]
    pub l_p: Option<f64>,
    #[arg(long)]
    pub gamma_p: Option<f64>,
    #[arg(long)]
    pub delta_p: Option<f64>,
    /// Compare this many random valid parameter sets instead.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Checks {
    Curve,
    Contraction,
    Both,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyArgs {
    #[arg(long, default_value = "tight")]
    pub field: FieldChoice,
    #[arg(long, default_value_t = 1.0)]
    pub c_tune: f64,
    /// Exponent; optimized when omitted.
    #[arg(long)]
    pub r: Option<f64>,
    /// Rate to check; computed from the field at r when omitted.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Initial grid step [default: 0.02 loose, 0.05 tight].
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 6)]
    pub levels: usize,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[arg(long, default_value_t = 21)]
    pub r_points: usize,
    /// Which checks to run.
    #[arg(long, value_enum, default_value = "both")]
    pub check: Checks,
    #[arg(long, default_value_t = 3.0)]
    pub x0: f64,
    /// Fixed start of the second chain; approximately stationary when omitted.
    #[arg(long)]
    pub y0: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub n_steps: usize,
    #[arg(long, default_value_t = 100_000)]
    pub n_replicas: usize,
    #[arg(long, default_value_t = 1_000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Starting pairs for the one-step contraction check.
    #[arg(long, default_value_t = 50)]
    pub pairs: usize,
    /// Pairs are drawn uniformly from this square intersected with the domain.
    #[arg(long, default_value_t = 5.0)]
    pub pair_half_width: f64,
    /// Noise draws per pair.
    #[arg(long, default_value_t = 100_000)]
    pub n_noise: usize,
    /// Output CSV file for the simulated curve.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousArgs {
    /// Discrete-time prefactor.
    #[arg(long)]
    pub prefactor: Option<f64>,
    /// Discrete-time rate.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Constant relating the continuous chain to its skeleton.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Skeleton time step.
    #[arg(long, default_value_t = 1.0)]
    pub t_star: f64,
    /// Times at which to evaluate the bound.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub t: Vec<f64>,
}

/// Outcome of a failed run; the variant selects the exit code.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Hypothesis(String),
    Verification(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Hypothesis(_) => 2,
            Failure::Verification(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Hypothesis(m) | Failure::Verification(m) => m,
        }
    }
}

impl From<driftrate::Error> for Failure {
    fn from(e: driftrate::Error) -> Self {
        match e {
            driftrate::Error::Hypothesis(_) | driftrate::Error::EmptyInterval { .. } => {
                Failure::Hypothesis(e.to_string())
            }
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn resolve(cli: Cli) -> Result<(Command, Option<PathBuf>), Failure> {
    let command = match (cli.config, cli.command) {
        (Some(_), Some(_)) => {
            return Err(Failure::Input(
                "give either --config or a subcommand, not both".into(),
            ));
        }
        (Some(path), None) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Input(format!("invalid config {}: {e}", path.display())))?
        }
        (None, Some(c)) => c,
        (None, None) => return Err(Failure::Input("no subcommand given; see --help".into())),
    };
    let command = match command {
        Command::FigHeatmap(args) => {
            if args.emit_grid.is_none() {
                return Err(Failure::Input("fig-heatmap needs --emit-grid FILE".into()));
            }
            Command::GeneralizedBound(args)
        }
        other => other,
    };
    Ok((command, cli.save_config))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, save) = resolve(cli)?;
    if let Some(path) = save {
        fs::write(&path, serde_json::to_string_pretty(&command)? + "\n")?;
    }
    match &command {
        Command::StandardBound(a) => commands::standard_bound(a),
        Command::GeneralizedBound(a) | Command::FigHeatmap(a) => commands::generalized_bound(a),
        Command::FigGammaCurve(a) => commands::fig_gamma_curve(a),
        Command::CompareDm(a) => commands::compare_dm(a),
        Command::Verify(a) => commands::verify(a),
        Command::ContinuousBound(a) => commands::continuous_bound(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
