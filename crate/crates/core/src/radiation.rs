//! Outgoing radiation ζ_b of the linear problem Δζ − ζ + ibDζ = Ψ_b^(0),
//! its far-field amplitude Γ_b = lim r^N|ζ_b|², and the WKB phase θ.

use crate::banded::{relative_residual, BandMatrix};
use crate::error::{config, domain, solver, LabError, Result};
use crate::grid::{Parity, RadialField, RadialGrid};
use crate::groundstate::GroundState;
use crate::profiles::{radii, solve_p0, BaseProfile, Cutoff, ProfileOptions};
use crate::stats;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// θ(w) = ∫₀^w √(1−z²/4) dz on [0, 2], extended linearly by (θ(2)/2) w.
pub fn theta(w: f64) -> Result<f64> {
    if !(w >= 0.0) {
        return domain(format!("theta needs w ≥ 0, got {w}"));
    }
    Ok(if w <= 2.0 {
        w / 2.0 * (1.0 - w * w / 4.0).sqrt() + (w / 2.0).asin()
    } else {
        PI / 4.0 * w
    })
}

/// θ(w) for w ∈ [0, 2] by Gauss–Legendre quadrature after z = 2 sin t.
pub fn theta_quadrature(w: f64) -> f64 {
    const X: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_47,
        0.478_628_670_499_366_47,
        0.236_926_885_056_189_08,
        0.236_926_885_056_189_08,
    ];
    let top = (w.min(2.0) / 2.0).asin();
    let panels = 32;
    let dt = top / panels as f64;
    let mut s = 0.0;
    for k in 0..panels {
        let mid = (k as f64 + 0.5) * dt;
        for (x, wt) in X.iter().zip(W) {
            let t = mid + 0.5 * dt * x;
            s += 0.5 * dt * wt * 2.0 * t.cos() * t.cos();
        }
    }
    s
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiationOptions {
    /// r_max = factor · R_b².
    pub rmax_factor: f64,
    /// Nodes per local wavelength 2π/(b r) of the fast branch at r_max.
    pub points_per_wave: f64,
    /// Plateau window [lo, hi] · R_b².
    pub window: (f64, f64),
}

impl Default for RadiationOptions {
    fn default() -> Self {
        Self { rmax_factor: 4.5, points_per_wave: 20.0, window: (2.0, 4.0) }
    }
}

#[derive(Clone, Debug)]
pub struct RadiationSolution {
    pub b: f64,
    pub zeta: RadialField,
    pub gamma: f64,
    pub window: (f64, f64),
    pub flatness: f64,
    pub grad2: f64,
    pub residual: f64,
}

/// Summary record without the field samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiationSummary {
    pub b: f64,
    pub gamma: f64,
    /// −b log Γ_b / π, which tends to 1.
    pub log_ratio: f64,
    pub window: (f64, f64),
    pub flatness: f64,
    pub grad2: f64,
    pub residual: f64,
    pub nodes: usize,
    pub r_max: f64,
}

impl RadiationSolution {
    pub fn summary(&self) -> RadiationSummary {
        RadiationSummary {
            b: self.b,
            gamma: self.gamma,
            log_ratio: -self.b * self.gamma.ln() / PI,
            window: self.window,
            flatness: self.flatness,
            grad2: self.grad2,
            residual: self.residual,
            nodes: self.zeta.grid.len(),
            r_max: self.zeta.grid.r_max(),
        }
    }
}

/// Root of μ² + ((N−1)/r + ibr)μ + (ibN/2 − 1) = 0 with the smaller modulus
/// (amplitude ~ r^{−N/2}, finite gradient norm).
pub fn slow_root(dim: usize, b: f64, r: f64) -> Complex64 {
    let n = dim as f64;
    let i = Complex64::i();
    let bq = (n - 1.0) / r + i * (b * r);
    let c = i * (b * n / 2.0) - 1.0;
    let disc = (bq * bq - c * 4.0).sqrt();
    let m1 = (-bq + disc) / 2.0;
    let m2 = (-bq - disc) / 2.0;
    if m1.norm() < m2.norm() {
        m1
    } else {
        m2
    }
}

/// Solves ζ'' + ((N−1)/r + ibr)ζ' + (ibN/2 − 1)ζ = s(r) on a uniform grid
/// with even symmetry at 0 and ζ' = μ_slow ζ at r_max (second order).
pub fn solve_radiation_source(
    dim: usize,
    b: f64,
    r_max: f64,
    h: f64,
    source: impl Fn(f64) -> Complex64 + Sync,
) -> Result<(RadialField, f64)> {
    if !(b > 0.0) {
        return domain(format!("radiation needs b > 0, got {b}"));
    }
    if b * r_max < 8.0 {
        return config(format!("far-field closure ill-conditioned: b·r_max = {:.3} < 8", b * r_max));
    }
    let n = (r_max / h).ceil() as usize;
    let grid = RadialGrid::uniform(dim, n, r_max)?;
    let h = grid.xi_spacing();
    let nn = dim as f64;
    let i = Complex64::i();
    let d = i * (b * nn / 2.0) - 1.0;
    let mut a = BandMatrix::<Complex64>::zeros(n + 1, 1, 1);
    let rhs: Vec<Complex64> = grid.r().iter().map(|&r| source(r)).collect();
    let h2 = h * h;
    a.set(0, 0, Complex64::new(-2.0 * nn / h2, 0.0) + d);
    a.set(0, 1, Complex64::new(2.0 * nn / h2, 0.0));
    for k in 1..n {
        let r = grid.r()[k];
        let c = (nn - 1.0) / r + i * (b * r);
        a.set(k, k - 1, Complex64::new(1.0 / h2, 0.0) - c / (2.0 * h));
        a.set(k, k, Complex64::new(-2.0 / h2, 0.0) + d);
        a.set(k, k + 1, Complex64::new(1.0 / h2, 0.0) + c / (2.0 * h));
    }
    // ghost node ζ_{n+1} = ζ_{n−1} + 2hμζ_n
    let r = grid.r_max();
    let c = (nn - 1.0) / r + i * (b * r);
    let mu = slow_root(dim, b, r);
    a.set(n, n - 1, Complex64::new(2.0 / h2, 0.0));
    a.set(n, n, Complex64::new(-2.0 / h2, 0.0) + mu * (2.0 / h) + c * mu + d);
    let zeta = a.clone().factor().map_err(|e| LabError::Solver(format!("radiation system singular: {e}")))?.solve(&rhs);
    let residual = if rhs.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        0.0
    } else {
        relative_residual(&a, &zeta, &rhs)
    };
    if !(residual <= 1e-8) {
        return solver(format!("radiation solve residual {residual:e}"));
    }
    Ok((RadialField::new(grid, zeta)?, residual))
}

/// Ψ_b^(0)(r) evaluated from P0, P0' (interpolated on [0, R_b]) and the analytic cutoff.
pub fn psi0_at(base: &BaseProfile, r: f64) -> Complex64 {
    if r < base.r_minus || r > base.r_b {
        return Complex64::new(0.0, 0.0);
    }
    let c = Cutoff { r_minus: base.r_minus, r_b: base.r_b };
    let g = &base.core_grid;
    let m = base.layout.m;
    let v = g.interpolate(&base.p0[..=m], Parity::Even, r);
    let dv = g.interpolate(&base.dp0[..=m], Parity::Even, r);
    let f = c.phi(r);
    let psi = -(2.0 * c.dphi(r) * dv + v * c.laplacian(r, base.dim) + (f.powf(base.p) - f) * v.abs().powf(base.p));
    Complex64::from_polar(psi, -base.b * r * r / 4.0)
}

fn grid_spacing(b: f64, r_max: f64, opts: &RadiationOptions) -> f64 {
    2.0 * PI / (b * r_max * opts.points_per_wave)
}

/// Solves for ζ_b driven by the cutoff error of `base` and extracts Γ_b.
pub fn solve_radiation(base: &BaseProfile, opts: &RadiationOptions) -> Result<RadiationSolution> {
    let b = base.b;
    let r2 = base.r_b * base.r_b;
    let r_max = opts.rmax_factor * r2;
    if r_max < opts.window.1 * r2 {
        return config("radiation grid must extend past the plateau window");
    }
    let h = grid_spacing(b, r_max, opts);
    let (zeta, residual) = solve_radiation_source(base.dim, b, r_max, h, |r| psi0_at(base, r))?;
    let window = (opts.window.0 * r2, opts.window.1 * r2);
    let (gamma, flatness) = plateau(&zeta, window);
    let grad2 = gradient_norm2(&zeta);
    Ok(RadiationSolution { b, zeta, gamma, window, flatness, grad2, residual })
}

/// Median and max/min of r^N|ζ|² over the window.
pub fn plateau(zeta: &RadialField, window: (f64, f64)) -> (f64, f64) {
    let n = zeta.grid.dim() as i32;
    let vals: Vec<f64> = zeta
        .grid
        .r()
        .iter()
        .zip(&zeta.values)
        .filter(|(r, _)| **r >= window.0 && **r <= window.1)
        .map(|(r, v)| r.powi(n) * v.norm_sqr())
        .collect();
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    (stats::median(&vals), stats::flatness(&vals))
}

/// ∫|∇ζ|² with centred differences (one-sided at the ends).
fn gradient_norm2(zeta: &RadialField) -> f64 {
    let g = &zeta.grid;
    let h = g.xi_spacing();
    let v = &zeta.values;
    let n = v.len();
    let d: Vec<f64> = (0..n)
        .map(|k| {
            let dv = if k == 0 {
                Complex64::new(0.0, 0.0)
            } else if k == n - 1 {
                (v[k] - v[k - 1]) / h
            } else {
                (v[k + 1] - v[k - 1]) / (2.0 * h)
            };
            dv.norm_sqr()
        })
        .collect();
    g.integrate(&d)
}

/// Γ_b with the plateau check: flatness above 5/4 is a no-plateau failure.
pub fn extract_gamma(sol: &RadiationSolution) -> Result<f64> {
    if !(sol.gamma > 0.0) {
        return solver(format!("nonpositive Γ_b = {} at b = {}", sol.gamma, sol.b));
    }
    if !(sol.flatness <= 1.25) {
        return solver(format!(
            "no plateau: r^N|ζ|² varies by a factor {:.3} on [{:.1}, {:.1}] at b = {}",
            sol.flatness, sol.window.0, sol.window.1, sol.b
        ));
    }
    Ok(sol.gamma)
}

/// Smallest C with e^{−2(1+Cη)θ(2)/b} ≤ Γ_b ≤ e^{−2(1−Cη)θ(2)/b}.
pub fn fitted_c(b: f64, gamma: f64, eta: f64) -> f64 {
    ((-b * gamma.ln() / PI) - 1.0).abs() / eta
}

/// Γ_b for one b from scratch (P0 solve plus radiation solve).
pub fn gamma_for(b: f64, gs: &GroundState, popts: &ProfileOptions, ropts: &RadiationOptions) -> Result<RadiationSummary> {
    let base = solve_p0(b, gs, popts)?;
    Ok(solve_radiation(&base, ropts)?.summary())
}

/// Parallel Γ_b sweep; results in input order.
pub fn gamma_sweep(bs: &[f64], gs: &GroundState, popts: &ProfileOptions, ropts: &RadiationOptions) -> Result<Vec<RadiationSummary>> {
    bs.par_iter().map(|&b| gamma_for(b, gs, popts, ropts)).collect()
}

/// Γ_b interpolant: piecewise linear log Γ in 1/b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaTable {
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl GammaTable {
    pub fn new(mut rows: Vec<(f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return config("Γ table needs at least two rows");
        }
        if rows.iter().any(|(b, g)| !(*b > 0.0 && *g > 0.0)) {
            return config("Γ table rows need b > 0 and Γ > 0");
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { b: rows.iter().map(|r| r.0).collect(), gamma: rows.iter().map(|r| r.1).collect() })
    }

    pub fn from_summaries(rows: &[RadiationSummary]) -> Result<Self> {
        Self::new(rows.iter().map(|r| (r.b, r.gamma)).collect())
    }

    pub fn range(&self) -> (f64, f64) {
        (self.b[0], *self.b.last().unwrap())
    }

    /// Γ(b), clamped extrapolation of the end slopes outside the table.
    pub fn eval(&self, b: f64) -> f64 {
        let n = self.b.len();
        let k = match self.b.iter().position(|x| *x >= b) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => n - 2,
        };
        let (x0, x1) = (1.0 / self.b[k], 1.0 / self.b[k + 1]);
        let (y0, y1) = (self.gamma[k].ln(), self.gamma[k + 1].ln());
        let t = (1.0 / b - x0) / (x1 - x0);
        (y0 + t * (y1 - y0)).exp()
    }
}

/// Radiation layout summary used by diagnostics: r_max and spacing for b.
pub fn radiation_extent(b: f64, eta: f64, opts: &RadiationOptions) -> (f64, f64) {
    let (r_b, _) = radii(b, eta);
    let r_max = opts.rmax_factor * r_b * r_b;
    (r_max, grid_spacing(b, r_max, opts))
}
