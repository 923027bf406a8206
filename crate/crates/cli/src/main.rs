mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use output::{Format, Output};

#[derive(Debug, Parser, Serialize)]
#[command(name = "normhyp", version, about = "Normal-hyperbolicity experiments")]
pub struct Cli {
    /// Relative integration tolerance.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub rtol: f64,
    /// Absolute integration tolerance.
    #[arg(long, global = true, default_value_t = 1e-12)]
    pub atol: f64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Accepted for compatibility; nothing here uses random numbers.
    #[arg(long, global = true)]
    pub seedless: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Circle example.
    #[command(subcommand)]
    Ex1(Ex1Cmd),
    /// Planar limit-cycle example.
    #[command(subcommand)]
    Ex2(Ex2Cmd),
    /// Torus example.
    #[command(subcommand)]
    Ex3(Ex3Cmd),
    /// Type numbers for any builtin system and analytic frame.
    #[command(subcommand)]
    Lyapunov(LyapunovCmd),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Ex1Cmd {
    TypeNumbers(Ex1TypeNumbers),
}

#[derive(Debug, Args, Serialize)]
pub struct Ex1TypeNumbers {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub theta: f64,
    /// Last grid time; the grid is the multiples of the circle period up to
    /// it (1% slack). Defaults to ten periods.
    #[arg(long)]
    pub tmax: Option<f64>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Ex2Cmd {
    Equilibria(Ex2Equilibria),
    Branch(Ex2Continuation),
    Bifurcations(Ex2Continuation),
}

#[derive(Debug, Args, Serialize)]
pub struct Ex2Equilibria {
    #[arg(long, default_value_t = -0.06, allow_hyphen_values = true)]
    pub c: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct Ex2Continuation {
    /// Largest pseudo-arclength step.
    #[arg(long, default_value_t = 2e-4)]
    pub max_step: f64,
    #[arg(long, default_value_t = 500)]
    pub max_points: usize,
    /// Closest approach to the saddle before a branch stops.
    #[arg(long, default_value_t = 1e-4)]
    pub saddle_distance_min: f64,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Ex3Cmd {
    Sweep(Ex3Sweep),
    ImageL(Ex3ImageL),
    Fold(Ex3Fold),
    BetaC(Ex3BetaC),
    BundleFrame(Ex3BundleFrame),
}

#[derive(Debug, Args, Serialize)]
pub struct Ex3Sweep {
    #[arg(long, default_value_t = 0.65)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub zeta0: f64,
    /// Target sections in units of π.
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.375,0.5,0.92")]
    pub zeta_pi: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct Ex3ImageL {
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.89,0.9,0.91,0.92")]
    pub zeta_pi: Vec<f64>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveSource {
    LImage,
    Sweep,
}

#[derive(Debug, Args, Serialize)]
pub struct Ex3Fold {
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = CurveSource::LImage)]
    pub source: CurveSource,
    #[arg(long, value_delimiter = ',', default_value = "0.92")]
    pub zeta_pi: Vec<f64>,
    /// Half-width of the θ-window around π; 0 disables the window.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Also scan swept sections 0.5π..0.999π (step 0.001π) for the first fold.
    #[arg(long)]
    pub scan_onset: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct Ex3BetaC {
    #[arg(long, default_value_t = 0.65)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Also bracket the β where the swept section at 0.999π starts to fold.
    #[arg(long)]
    pub torus_check: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct Ex3BundleFrame {
    #[arg(long, default_value_t = 0.65)]
    pub beta: f64,
    /// Number of fiber vectors, at ζ = π(k + 1/2)/points.
    #[arg(long, default_value_t = 32)]
    pub points: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum LyapunovCmd {
    Estimate(LyapunovEstimate),
}

#[derive(Debug, Args, Serialize)]
pub struct LyapunovEstimate {
    /// example1 | example3.
    #[arg(long)]
    pub system: String,
    #[arg(long, allow_hyphen_values = true)]
    pub param: f64,
    /// circle-ex1 | circle-ex3 | torus-ex3-at-gamma.
    #[arg(long)]
    pub manifold: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub point: Vec<f64>,
    /// Explicit time grid; otherwise `dt, 2dt, ..., count·dt`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Numerical(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<normhyp::Error> for RunError {
    fn from(e: normhyp::Error) -> Self {
        use normhyp::Error as E;
        match e {
            E::InvalidInput(_) | E::ParamOutOfRange { .. } | E::UnknownSystem(_) | E::OffManifold { .. } => {
                RunError::Usage(e.to_string())
            }
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let config = serde_json::to_value(&cli).unwrap_or_default();
    let mut out = match Output::new(&cli.out, cli.format) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", cli.out.display());
            return ExitCode::from(1);
        }
    };
    let result = commands::run(&cli, &mut out);
    let code = match &result {
        Ok(()) => 0,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(RunError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            let diag = serde_json::json!({ "error": msg });
            if let Err(e) = out.json_value("diagnostics.json", &diag) {
                eprintln!("error: {e}");
            }
            1
        }
        Err(RunError::Io(e)) => {
            eprintln!("error: {e}");
            1
        }
    };
    if code == 2 {
        return ExitCode::from(2);
    }
    match out.finish(&config) {
        Ok(files) => {
            println!("wrote {} file(s) and manifest.json to {}", files.len(), cli.out.display());
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
