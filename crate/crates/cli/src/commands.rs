//! Subcommand parameter records and their entry points.

use crate::output::{csv_bytes, RunDir};
use clap::Args;
use rayon::prelude::*;
use selfsim_core::dynamics::{bstar_closed_form, integrate_reduced, GammaSource, ReducedParams, ReducedState};
use selfsim_core::groundstate::{kernel_checks, solve_ground_state, solve_ground_state_with, GroundStateOptions};
use selfsim_core::nlse::config::SimConfig;
use selfsim_core::nlse::run::{blowup_checks, run_selfsimilar, write_snapshots, write_trace, BlowupReport};
use selfsim_core::profiles::{build_profile, build_profile_on, derivative_in_b, fit_c0, profile_invariants, ProfileOptions};
use selfsim_core::radiation::{gamma_sweep, solve_radiation, GammaTable, RadiationOptions};
use selfsim_core::spectral::{verify_spectral_property, SpectralOptions};
use selfsim_core::stats::linear_fit;
use selfsim_core::{critical_exponent, profiles::solve_p0, sigma_c, LabError, Result};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Usage(msg.into()))
}

fn exponent(p: Option<f64>, dim: usize) -> f64 {
    p.unwrap_or_else(|| critical_exponent(dim))
}

#[derive(Args, Debug, Serialize)]
pub struct GroundStateArgs {
    /// Nonlinearity exponent.
    #[arg(long)]
    pub p: f64,
    /// Dimension.
    #[arg(long = "N", default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = GroundStateOptions::default().r_max)]
    pub rmax: f64,
    #[arg(long, default_value_t = GroundStateOptions::default().nodes)]
    pub nodes: usize,
    /// Spacing at the origin.
    #[arg(long, default_value_t = GroundStateOptions::default().h)]
    pub h: f64,
}

pub fn groundstate(a: &GroundStateArgs, out: &mut RunDir) -> Result<i32> {
    let opts = GroundStateOptions { h: a.h, r_max: a.rmax, nodes: a.nodes, ..Default::default() };
    let gs = solve_ground_state_with(a.p, a.dim, opts)?;
    let (poh1, poh2) = gs.pohozaev();
    let kernel = kernel_checks(&gs)?;
    out.write_json(
        "groundstate.json",
        &json!({
            "p": gs.p, "dim": gs.dim, "sigma_c": gs.sigma_c(), "q0": gs.q0,
            "mass": gs.mass, "y2_mass": gs.y2_mass, "grad2": gs.grad2,
            "potential": gs.potential, "energy": gs.energy,
            "pohozaev_residuals": [poh1, poh2],
            "nodes": gs.grid.len(), "r_max": gs.grid.r_max(),
            "kernel": kernel,
        }),
    )?;
    let rows = gs.grid.r().iter().zip(&gs.q).map(|(r, q)| vec![*r, *q]);
    out.write("groundstate.csv", &csv_bytes(&["r", "q"], rows)?)?;
    Ok(0)
}

#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long = "N", default_value_t = 1)]
    pub dim: usize,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = ProfileOptions::default().eta)]
    pub eta: f64,
    /// σ_c used for the correction; defaults to σ_c(p, N).
    #[arg(long)]
    pub sigma: Option<f64>,
}

pub fn profile(a: &ProfileArgs, out: &mut RunDir) -> Result<i32> {
    let gs = solve_ground_state(a.p, a.dim)?;
    let sigma = a.sigma.unwrap_or_else(|| sigma_c(a.p, a.dim));
    let opts = ProfileOptions { eta: a.eta, ..Default::default() };
    let prof = build_profile(a.b, &gs, sigma, &opts)?;
    let inv = profile_invariants(&prof, &gs);
    let db = opts.db_rel * a.b;
    let layout = prof.base.layout;
    let plus = build_profile_on(a.b + db, &gs, sigma, &opts, layout)?;
    let minus = build_profile_on(a.b - db, &gs, sigma, &opts, layout)?;
    let g = prof.grid();
    let dq = derivative_in_b(a.b, db, g, &prof.q_b, &plus.q_b, &minus.q_b);
    let psi = prof.psi_b(&dq);
    out.write_json("profile.json", &inv)?;
    let rows = (0..g.len()).map(|i| {
        vec![
            g.r()[i],
            prof.base.p0[i],
            prof.base.ptilde[i],
            prof.t[i].re,
            prof.t[i].im,
            psi[i].re,
            psi[i].im,
            prof.q_b[i].re,
            prof.q_b[i].im,
        ]
    });
    let header = ["r", "p0", "p0_cut", "t_re", "t_im", "psi_re", "psi_im", "q_re", "q_im"];
    out.write("profile.csv", &csv_bytes(&header, rows)?)?;
    Ok(0)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    let v: std::result::Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => usage(format!("cannot parse number list `{s}`")),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ProfileSweepArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long = "N", default_value_t = 1)]
    pub dim: usize,
    /// Comma-separated b values.
    #[arg(long = "b-list")]
    pub b_list: String,
    #[arg(long, default_value_t = ProfileOptions::default().eta)]
    pub eta: f64,
}

pub fn profile_sweep(a: &ProfileSweepArgs, out: &mut RunDir) -> Result<i32> {
    let bs = parse_list(&a.b_list)?;
    let gs = solve_ground_state(a.p, a.dim)?;
    let sigma = sigma_c(a.p, a.dim);
    let opts = ProfileOptions { eta: a.eta, ..Default::default() };
    let inv: Vec<_> = bs
        .par_iter()
        .map(|&b| build_profile(b, &gs, sigma, &opts).map(|pr| profile_invariants(&pr, &gs)))
        .collect::<Result<_>>()?;
    let rows = inv.iter().map(|v| vec![v.b, v.mu, v.mass_excess, v.energy_direct, v.virial]);
    out.write("profile_sweep.csv", &csv_bytes(&["b", "mu", "mass_excess", "energy", "virial"], rows)?)?;
    let c0 = if bs.len() >= 2 {
        Some(fit_c0(&bs, &inv.iter().map(|v| v.mass_excess).collect::<Vec<_>>()))
    } else {
        None
    };
    out.write_json("profile_sweep.json", &json!({ "p": a.p, "dim": a.dim, "sigma_c": sigma, "c0": c0, "rows": inv }))?;
    Ok(0)
}

#[derive(Args, Debug, Serialize)]
pub struct RadiationArgs {
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "N", default_value_t = 2)]
    pub dim: usize,
    #[arg(long)]
    pub b: f64,
    #[arg(long, default_value_t = ProfileOptions::default().eta)]
    pub eta: f64,
}

pub fn radiation(a: &RadiationArgs, out: &mut RunDir) -> Result<i32> {
    let p = exponent(a.p, a.dim);
    let gs = solve_ground_state(p, a.dim)?;
    let popts = ProfileOptions { eta: a.eta, ..Default::default() };
    let base = solve_p0(a.b, &gs, &popts)?;
    let sol = solve_radiation(&base, &RadiationOptions::default())?;
    out.write_json("radiation.json", &sol.summary())?;
    let mut buf = Vec::new();
    sol.zeta.write_csv(&mut buf)?;
    out.write("zeta.csv", &buf)?;
    Ok(0)
}

#[derive(Args, Debug, Serialize)]
pub struct GammaSweepArgs {
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "N", default_value_t = 2)]
    pub dim: usize,
    #[arg(long = "b-list")]
    pub b_list: String,
    #[arg(long, default_value_t = ProfileOptions::default().eta)]
    pub eta: f64,
}

pub fn gamma_sweep_cmd(a: &GammaSweepArgs, out: &mut RunDir) -> Result<i32> {
    let bs = parse_list(&a.b_list)?;
    let p = exponent(a.p, a.dim);
    let gs = solve_ground_state(p, a.dim)?;
    let popts = ProfileOptions { eta: a.eta, ..Default::default() };
    let rows = gamma_sweep(&bs, &gs, &popts, &RadiationOptions::default())?;
    let csv_rows = rows.iter().map(|r| vec![r.b, r.gamma, r.log_ratio, r.flatness]);
    out.write("gamma_sweep.csv", &csv_bytes(&["b", "gamma", "log_ratio", "flatness"], csv_rows)?)?;
    // log Γ against −π/b
    let slope = if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| -std::f64::consts::PI / r.b).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.gamma.ln()).collect();
        Some(linear_fit(&x, &y))
    } else {
        None
    };
    out.write_json("gamma_sweep.json", &json!({ "p": p, "dim": a.dim, "eta": a.eta, "fit": slope, "rows": rows }))?;
    Ok(0)
}

#[derive(Args, Debug, Serialize)]
pub struct SpectralArgs {
    #[arg(long = "N")]
    pub dim: usize,
    /// Must equal 1 + 4/N when given.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = SpectralOptions::default().h)]
    pub h: f64,
    #[arg(long, default_value_t = SpectralOptions::default().r_max)]
    pub rmax: f64,
    #[arg(long = "max-ell", default_value_t = SpectralOptions::default().max_ell)]
    pub max_ell: usize,
}

pub fn spectral(a: &SpectralArgs, out: &mut RunDir) -> Result<i32> {
    if let Some(p) = a.p {
        let pc = critical_exponent(a.dim);
        if (p - pc).abs() > 1e-12 {
            return usage(format!("the spectral check runs at p = 1 + 4/N = {pc}, got {p}"));
        }
    }
    let rep = verify_spectral_property(a.dim, SpectralOptions { h: a.h, r_max: a.rmax, max_ell: a.max_ell })?;
    let rows = rep.sectors.iter().map(|s| vec![s.ell as f64, s.part as f64, s.constraints as f64, s.minimum]);
    out.write("spectral.csv", &csv_bytes(&["ell", "part", "constraints", "minimum"], rows)?)?;
    out.write_json("spectral.json", &rep)?;
    Ok(if rep.delta1 > 0.0 { 0 } else { 1 })
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Analytic,
    Table,
}

#[derive(Args, Debug, Serialize)]
pub struct ReducedArgs {
    #[arg(long = "sigma-c")]
    pub sigma_c: f64,
    #[arg(long)]
    pub b0: f64,
    #[arg(long = "gamma-source", value_enum, default_value_t = GammaChoice::Analytic)]
    pub gamma_source: GammaChoice,
    /// Dimension of the radiation table.
    #[arg(long = "N", default_value_t = 2)]
    pub dim: usize,
    /// b values of the radiation table.
    #[arg(long = "table-b", default_value = "0.15,0.2,0.25,0.3,0.35,0.4")]
    pub table_b: String,
    #[arg(long = "c-virial", default_value_t = 1.0)]
    pub c_virial: f64,
    #[arg(long = "c-flux", default_value_t = 1.0)]
    pub c_flux: f64,
    #[arg(long, default_value_t = 1e5)]
    pub horizon: f64,
    #[arg(long = "lambda-floor", default_value_t = 1e-40)]
    pub lambda_floor: f64,
}

pub fn reduced(a: &ReducedArgs, out: &mut RunDir) -> Result<i32> {
    let mut params = ReducedParams::new(a.sigma_c);
    params.c_virial = a.c_virial;
    params.c_flux = a.c_flux;
    params.lambda_floor = a.lambda_floor;
    if let GammaChoice::Table = a.gamma_source {
        let bs = parse_list(&a.table_b)?;
        let gs = solve_ground_state(critical_exponent(a.dim), a.dim)?;
        let rows = gamma_sweep(&bs, &gs, &ProfileOptions::default(), &RadiationOptions::default())?;
        params.gamma = GammaSource::Table(GammaTable::from_summaries(&rows)?);
    }
    let traj = integrate_reduced(&params, ReducedState { s: 0.0, t: 0.0, b: a.b0, lambda: 1.0 }, a.horizon)?;
    let rows = traj.states.iter().zip(&traj.tau).map(|(s, tau)| vec![s.s, s.t, s.b, s.lambda, *tau]);
    out.write("reduced.csv", &csv_bytes(&["s", "t", "b", "lambda", "tau"], rows)?)?;
    let fixed = params.gamma.fixed_point(a.sigma_c, a.c_virial, a.c_flux).ok();
    let last = traj.final_state();
    out.write_json(
        "reduced.json",
        &json!({
            "params": params, "exit": traj.exit, "samples": traj.states.len(),
            "final": last, "blowup_time": traj.blowup_time,
            "blowup_time_fit": traj.blowup_time_fit, "lambda2_fit": traj.lambda2_fit,
            "bstar": fixed, "reparametrization_defect": traj.reparametrization_defect(),
        }),
    )?;
    Ok(0)
}

#[derive(Args, Debug, Serialize)]
pub struct BstarArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long = "N", default_value_t = 1)]
    pub dim: usize,
}

pub fn bstar(a: &BstarArgs, out: &mut RunDir) -> Result<i32> {
    let sigma = sigma_c(a.p, a.dim);
    let b = bstar_closed_form(sigma);
    out.write_json(
        "bstar.json",
        &json!({
            "p": a.p, "dim": a.dim, "p_c": critical_exponent(a.dim), "sigma_c": sigma,
            "bstar": b.as_ref().ok(),
            "bstar_10": b.as_ref().ok().map(|v| format!("{v:.10}")),
            "error": b.as_ref().err().map(|e| e.to_string()),
        }),
    )?;
    b.map(|_| 0)
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
}

/// Reads and validates a run configuration; any problem is a configuration error.
pub fn load_config(path: &std::path::Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    SimConfig::from_toml(&text)
}

pub fn simulate(cfg: &SimConfig, out: &mut RunDir) -> Result<i32> {
    let text = toml::to_string(cfg).map_err(|e| LabError::Config(e.to_string()))?;
    out.write("config.toml", text.as_bytes())?;
    let run = run_selfsimilar(cfg)?;
    let mut buf = Vec::new();
    write_trace(&mut buf, &run.trace)?;
    out.write("trace.csv", &buf)?;
    out.write_json("report.json", &run.report)?;
    if !run.snapshots.is_empty() {
        let mut buf = Vec::new();
        write_snapshots(&mut buf, &run.snapshots)?;
        out.write("snapshots.csv", &buf)?;
    }
    eprintln!("{:?}: {}", run.report.outcome, run.report.message);
    Ok(run.report.exit_code)
}

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Directory holding the report.json of a `simulate` run.
    #[arg(long)]
    pub run: PathBuf,
}

pub fn read_report(a: &ReportArgs) -> Result<(Vec<u8>, BlowupReport)> {
    let path = a.run.join("report.json");
    let bytes = std::fs::read(&path).map_err(|e| LabError::Usage(format!("{}: {e}", path.display())))?;
    let rep = serde_json::from_slice(&bytes)?;
    Ok((bytes, rep))
}

pub fn report(rep: &BlowupReport, out: &mut RunDir) -> Result<i32> {
    let checks = blowup_checks(rep);
    for c in &checks {
        let v = c.value.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        eprintln!("{} {} = {} in [{}, {}]", if c.pass { "PASS" } else { "FAIL" }, c.name, v, c.band.0, c.band.1);
    }
    let all = checks.iter().all(|c| c.pass);
    out.write_json("checks.json", &json!({ "outcome": rep.outcome, "all_pass": all, "checks": checks }))?;
    Ok(if all { 0 } else { 1 })
}
