//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use selfsim_core::dynamics::{bstar_closed_form, integrate_reduced, ReducedExit, ReducedParams, ReducedState};
use selfsim_core::groundstate::{kernel_checks, solve_ground_state, solve_rho};
use selfsim_core::nlse::config::{Frame, Shape, SimConfig, StopSpec};
use selfsim_core::nlse::run::{conservation_study, run_selfsimilar, RunOutput};
use selfsim_core::profiles::{build_profile, fit_c0, profile_invariants, ProfileOptions};
use selfsim_core::radiation::{gamma_sweep, theta, theta_quadrature, RadiationOptions};
use selfsim_core::spectral::{verify_spectral_property, SpectralOptions};
use selfsim_core::stats::linear_fit;
use selfsim_core::{critical_exponent, exponent_for_sigma, sigma_c, Result};
use std::f64::consts::{PI, SQRT_2};
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn ground_state_oracle() -> Result<Verdict> {
    let t0 = Instant::now();
    let gs = solve_ground_state(3.0, 1)?;
    let elapsed = t0.elapsed();
    let q0_err = (gs.q0 - SQRT_2).abs();
    let sup = gs.grid.r().iter().zip(&gs.q).map(|(r, q)| (q - SQRT_2 / r.cosh()).abs()).fold(0.0, f64::max);
    verdict(
        q0_err <= 1e-8 && sup <= 1e-6 && elapsed < Duration::from_secs(1),
        format!("|Q(0) − √2| = {q0_err:.2e}, sup |Q − √2 sech| = {sup:.2e}, {elapsed:.2?}"),
    )
}

fn kernel_identities() -> Result<Verdict> {
    let t0 = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for (dim, p) in [(1, 3.0), (2, 3.0), (3, 7.0 / 3.0)] {
        let k = kernel_checks(&solve_ground_state(p, dim)?)?;
        worst = (worst.0.max(k.l_minus_q), worst.1.max(k.l_plus_lambda_q));
    }
    let elapsed = t0.elapsed();
    verdict(
        worst.0 <= 1e-8 && worst.1 <= 1e-6 && elapsed < Duration::from_secs(5),
        format!("max |L₋Q|/|Q| = {:.2e}, max |L₊ΛQ + 2Q|/|Q| = {:.2e}, {elapsed:.2?}", worst.0, worst.1),
    )
}

fn rho_identity() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for (dim, p) in [(1, 5.2), (2, 3.1), (3, 7.0 / 3.0 + 0.05)] {
        let rho = solve_rho(&solve_ground_state(p, dim)?)?;
        worst = worst.max(((rho.two_rho_q - rho.predicted) / rho.predicted).abs());
    }
    verdict(worst <= 1e-5, format!("max relative mismatch of 2(ρ,Q) = {worst:.2e}"))
}

fn theta_closed_form() -> Result<Verdict> {
    let exact = theta(2.0)? == PI / 2.0;
    let dev = (0..=200).map(|k| 0.01 * k as f64).map(|w| (theta_quadrature(w) - theta(w).unwrap()).abs()).fold(0.0, f64::max);
    verdict(exact && dev <= 1e-10, format!("θ(2) = π/2 exactly: {exact}, max quadrature deviation {dev:.2e}"))
}

fn gamma_law() -> Result<Verdict> {
    let t0 = Instant::now();
    let bs = [0.30, 0.25, 0.20, 0.15];
    let gs = solve_ground_state(critical_exponent(2), 2)?;
    let rows = gamma_sweep(&bs, &gs, &ProfileOptions::default(), &RadiationOptions::default())?;
    let elapsed = t0.elapsed();
    let flat = rows.iter().map(|r| r.flatness).fold(0.0, f64::max);
    let x: Vec<f64> = bs.iter().map(|b| -2.0 * theta(2.0).unwrap() / b).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.gamma.ln()).collect();
    let slope = linear_fit(&x, &y).slope;
    let dev: Vec<f64> = rows.iter().map(|r| (r.log_ratio - 1.0).abs()).collect();
    let improving = dev.windows(2).all(|w| w[1] <= w[0]);
    let ratios: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.log_ratio)).collect();
    verdict(
        flat <= 1.25 && (0.8..=1.2).contains(&slope) && improving && elapsed < Duration::from_secs(120),
        format!(
            "plateau max/min {flat:.4}, slope {slope:.4}, −b·logΓ/π = [{}] improving: {improving}, {elapsed:.2?}",
            ratios.join(", ")
        ),
    )
}

fn spectral_property() -> Result<Verdict> {
    let t0 = Instant::now();
    let coarse = SpectralOptions::default();
    let fine = SpectralOptions { h: coarse.h / 2.0, ..coarse };
    let mut ok = true;
    let mut parts = Vec::new();
    for dim in 1..=5 {
        let a = verify_spectral_property(dim, coarse)?.delta1;
        let b = verify_spectral_property(dim, fine)?.delta1;
        let stable = ((a - b) / b).abs() <= 0.1;
        ok &= a > 0.0 && b > 0.0 && stable;
        parts.push(format!("N={dim}: {a:.4}/{b:.4}"));
    }
    let elapsed = t0.elapsed();
    verdict(ok && elapsed < Duration::from_secs(300), format!("δ₁ (h, h/2) {}, {elapsed:.2?}", parts.join("; ")))
}

fn profile_invariants_check() -> Result<Verdict> {
    let sigma = 0.005;
    let p = exponent_for_sigma(sigma, 1);
    let gs = solve_ground_state(p, 1)?;
    let opts = ProfileOptions::default();
    let bs = [0.1, 0.125, 0.15, 0.175, 0.2];
    let inv = bs
        .iter()
        .map(|&b| build_profile(b, &gs, sigma_c(p, 1), &opts).map(|pr| profile_invariants(&pr, &gs)))
        .collect::<Result<Vec<_>>>()?;
    let at = &inv[0];
    let momentum = inv.iter().map(|v| v.momentum.abs()).fold(0.0, f64::max);
    let virial = at.virial / at.virial_reference;
    let m: Vec<f64> = inv.iter().map(|v| v.mass_excess).collect();
    let c0 = fit_c0(&bs, &m);
    // quadratic: M(b)/b² close to c₀/2 across the sweep
    let quad = m.iter().zip(&bs).map(|(m, b)| (m / (b * b) / (c0 / 2.0) - 1.0).abs()).fold(0.0, f64::max);
    let gamma = (-PI / 0.1f64).exp();
    let e = at.energy_direct.abs();
    let ok = momentum <= 1e-10 && (virial - 1.0).abs() <= 0.1 && c0 > 0.0 && quad <= 0.1 && e < 1e-3 && e < 10.0 * (gamma + sigma);
    verdict(
        ok,
        format!(
            "max |momentum| {momentum:.1e}, virial ratio {virial:.4}, c₀ = {c0:.4} (max dev from b² law {quad:.3}), |E(Q_0.1)| = {e:.2e}"
        ),
    )
}

fn reduced_trapping() -> Result<Verdict> {
    let t0 = Instant::now();
    let sigma = 0.005;
    let bs = bstar_closed_form(sigma)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for f in [0.8, 1.2] {
        let tr = integrate_reduced(&ReducedParams::new(sigma), ReducedState { s: 0.0, t: 0.0, b: f * bs, lambda: 1.0 }, 1e5)?;
        let bdev = (tr.final_state().b / bs - 1.0).abs();
        let speed = tr.speed_ratio(bs);
        let idx = tr.final_decades(2.0);
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(speed[i]), b.max(speed[i])));
        ok &= tr.exit == ReducedExit::Floor && bdev <= 0.02 && lo >= 0.98 && hi <= 1.02;
        parts.push(format!("b0 = {f}b*: |b/b* − 1| = {bdev:.1e}, speed ratio [{lo:.6}, {hi:.6}]"));
    }
    let elapsed = t0.elapsed();
    verdict(ok && elapsed < Duration::from_secs(10), format!("{}, {elapsed:.2?}", parts.join("; ")))
}

fn flagship_checks(run: &RunOutput, elapsed: Duration) -> Result<Verdict> {
    let r = &run.report;
    let sig_ok = (3e-3..=1e-2).contains(&r.sigma);
    let corr = r.lambda2_correlation.unwrap_or(0.0);
    let band = r.b_band.unwrap_or(f64::INFINITY);
    let ratio = r.log_ratio.unwrap_or(f64::NAN);
    let eps = r.eps_ceiling.unwrap_or(f64::INFINITY);
    let ok = r.dim == 1
        && sig_ok
        && r.frame == Frame::Renormalized
        && r.decades >= 3.0
        && corr >= 0.999
        && band <= 0.1
        && (0.7..=1.3).contains(&ratio)
        && eps <= 0.3
        && elapsed < Duration::from_secs(1800);
    verdict(
        ok,
        format!(
            "σ_c = {}, {:.2} decades, corr(λ², t) = {corr:.8}, b band {band:.4}, log ratio {ratio:.4}, ε ceiling {eps:.4}, {elapsed:.2?}",
            r.sigma, r.decades
        ),
    )
}

fn concentration_plateau(run: &RunOutput) -> Result<Verdict> {
    match &run.report.concentration {
        Some(c) => {
            let first = c.rows.first().map_or(0.0, |r| r.0);
            let last = c.rows.last().map_or(0.0, |r| r.0);
            verdict(
                c.sufficient && c.flatness <= 1.5,
                format!(
                    "{} rows over R ∈ [{first:.3e}, {last:.3e}], max/min {:.4} ({:?})",
                    c.rows.len(),
                    c.flatness,
                    c.construction
                ),
            )
        }
        None => verdict(false, "no concentration scan in the report".into()),
    }
}

fn conservation() -> Result<Verdict> {
    let mut c = SimConfig::default();
    c.frame = Frame::Lab;
    c.initial.shape = Shape::Gaussian { amplitude: 0.5, width: 1.0 };
    c.grid.nodes = 1500;
    c.grid.r_max = 60.0;
    c.grid.sponge_strength = 0.0;
    c.time.dt_max = 0.004;
    c.stop = StopSpec { t_max: Some(0.5), ..Default::default() };
    c.diagnostics.every = 0.05;
    let r = conservation_study(&c)?;
    verdict(
        r.mass_ok && r.energy_ok,
        format!(
            "mass drift {:.2e} → {:.2e} (ratio {:.2}), energy drift {:.2e} → {:.2e} (ratio {:.2})",
            r.mass_drift.0, r.mass_drift.1, r.mass_ratio, r.energy_drift.0, r.energy_drift.1, r.energy_ratio
        ),
    )
}

fn report(k: usize, name: &str, v: Result<Verdict>, failures: &mut usize) {
    match v {
        Ok(v) => {
            println!("{} {k:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            *failures += usize::from(!v.pass);
        }
        Err(e) => {
            println!("FAIL {k:>2} {name}: error {e}");
            *failures += 1;
        }
    }
}

fn main() {
    let mut failures = 0;
    report(1, "ground-state oracle", ground_state_oracle(), &mut failures);
    report(2, "kernel identities", kernel_identities(), &mut failures);
    report(3, "ρ identity", rho_identity(), &mut failures);
    report(4, "θ closed form", theta_closed_form(), &mut failures);
    report(5, "Γ_b law", gamma_law(), &mut failures);
    report(6, "spectral property", spectral_property(), &mut failures);
    report(7, "profile invariants", profile_invariants_check(), &mut failures);
    report(8, "reduced-dynamics trapping", reduced_trapping(), &mut failures);
    let t0 = Instant::now();
    let flagship = run_selfsimilar(&SimConfig::default());
    let elapsed = t0.elapsed();
    match &flagship {
        Ok(run) => {
            report(9, "end-to-end collapse run", flagship_checks(run, elapsed), &mut failures);
            report(10, "concentration plateau", concentration_plateau(run), &mut failures);
        }
        Err(e) => {
            println!("FAIL  9 end-to-end collapse run: error {e}");
            println!("FAIL 10 concentration plateau: no run");
            failures += 2;
        }
    }
    report(11, "conservation regression", conservation(), &mut failures);
    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
