//! `sslab`: command-line runner for the self-similar NLS blow-up lab.
//!
//! Each subcommand writes its artifacts under `<out>/<command>-<UTC stamp>-<hash>/`
//! and prints the manifest JSON on stdout. Exit codes: 0 success, 1 a reported
//! check failed, 2 the run left the trapping tube, 3 resolution exhausted,
//! 64 usage or configuration error, 65 parameter outside the domain,
//! 70 solver failure, 74 I/O error.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use commands::*;
use output::{hex_digest, output_root, RunDir};
use selfsim_core::{LabError, Result};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "sslab", version, about = "Self-similar blow-up lab for the slightly supercritical NLS")]
struct Cli {
    /// Output root; defaults to $SSLAB_OUTPUT_ROOT, else ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Ground state Q_p by shooting plus Newton polish.
    Groundstate(GroundStateArgs),
    /// Self-similar profile, its correction and invariants for one b.
    Profile(ProfileArgs),
    /// Profile invariants over a list of b.
    ProfileSweep(ProfileSweepArgs),
    /// Outgoing radiation ζ_b and its flux Γ_b for one b.
    Radiation(RadiationArgs),
    /// Γ_b over a list of b.
    GammaSweep(GammaSweepArgs),
    /// Spectral property check at p = 1 + 4/N.
    Spectral(SpectralArgs),
    /// Reduced modulation ODE trajectory.
    Reduced(ReducedArgs),
    /// Nonlinear eigenvalue b* = π/log(1/σ_c).
    Bstar(BstarArgs),
    /// Full NLS run from a TOML configuration.
    Simulate(SimulateArgs),
    /// Band checks on the report of a finished simulation.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Groundstate(_) => "groundstate",
            Command::Profile(_) => "profile",
            Command::ProfileSweep(_) => "profile-sweep",
            Command::Radiation(_) => "radiation",
            Command::GammaSweep(_) => "gamma-sweep",
            Command::Spectral(_) => "spectral",
            Command::Reduced(_) => "reduced",
            Command::Bstar(_) => "bstar",
            Command::Simulate(_) => "simulate",
            Command::Report(_) => "report",
        }
    }
}

fn error_code(e: &LabError) -> i32 {
    match e {
        LabError::Config(_) | LabError::Usage(_) => 64,
        LabError::Domain(_) | LabError::Range(_) => 65,
        LabError::Solver(_) => 70,
        LabError::Io(_) | LabError::Csv(_) | LabError::Json(_) => 74,
    }
}

fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex_digest(&serde_json::to_vec(value)?))
}

/// Loads inputs, opens the run directory and dispatches.
fn execute(cli: &Cli) -> Result<(RunDir, Result<i32>)> {
    let root = output_root(cli.out.as_deref());
    let name = cli.command.name();
    // inputs are validated before anything is written
    let (hash, sim, rep) = match &cli.command {
        Command::Simulate(a) => {
            let cfg = load_config(&a.config)?;
            (config_hash(&cfg)?, Some(cfg), None)
        }
        Command::Report(a) => {
            let (bytes, rep) = read_report(a)?;
            (hex_digest(&bytes), None, Some(rep))
        }
        c => (config_hash(c)?, None, None),
    };
    let mut out = RunDir::new(&root, name, &hash);
    let status = match &cli.command {
        Command::Groundstate(a) => groundstate(a, &mut out),
        Command::Profile(a) => profile(a, &mut out),
        Command::ProfileSweep(a) => profile_sweep(a, &mut out),
        Command::Radiation(a) => radiation(a, &mut out),
        Command::GammaSweep(a) => gamma_sweep_cmd(a, &mut out),
        Command::Spectral(a) => spectral(a, &mut out),
        Command::Reduced(a) => reduced(a, &mut out),
        Command::Bstar(a) => bstar(a, &mut out),
        Command::Simulate(_) => simulate(sim.as_ref().unwrap(), &mut out),
        Command::Report(_) => report(rep.as_ref().unwrap(), &mut out),
    };
    Ok((out, status))
}

fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("sslab: cannot size the worker pool: {e}");
            return 64;
        }
    }
    let (out, status) = match execute(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("sslab: {e}");
            return error_code(&e);
        }
    };
    let (code, message) = match status {
        Ok(c) => (c, None),
        Err(e) => {
            eprintln!("sslab: {e}");
            (error_code(&e), Some(e.to_string()))
        }
    };
    if !out.has_outputs() {
        return code;
    }
    match out.finish(code, message) {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m).expect("manifest serializes"));
            code
        }
        Err(e) => {
            eprintln!("sslab: {e}");
            error_code(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    ExitCode::from(run(cli).clamp(0, 255) as u8)
}
