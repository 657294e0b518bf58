//! Ground state Q_p of ΔQ − Q + Q^p = 0, the auxiliary profile ρ with
//! L_+ρ = |y|²Q/4, and the kernel identities of L_±.

use crate::error::{config, domain, solver, Result};
use crate::grid::{Parity, RadialField, RadialGrid, RightBc};
use crate::ode::{integrate, Flow, OdeOptions};
use crate::spectral;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GroundStateOptions {
    /// Spacing at the origin.
    pub h: f64,
    pub r_max: f64,
    pub nodes: usize,
    /// Relative width at which the Q(0) bisection stops.
    pub bisection_rtol: f64,
}

impl Default for GroundStateOptions {
    fn default() -> Self {
        Self { h: 0.02, r_max: 40.0, nodes: 1200, bisection_rtol: 4e-16 }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub p: f64,
    pub dim: usize,
    /// Q(0) from the shooting bisection.
    pub q0: f64,
    pub grid: Arc<RadialGrid>,
    /// Discrete solution on `grid` (Newton-polished).
    pub q: Vec<f64>,
    pub mass: f64,
    pub y2_mass: f64,
    pub grad2: f64,
    pub potential: f64,
    pub energy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shot {
    /// Q changed sign: Q(0) too large.
    Over,
    /// Q turned upward while positive: Q(0) too small.
    Under,
    Undecided,
}

fn rhs(dim: usize, p: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    move |r, y| [y[1], -(dim as f64 - 1.0) / r * y[1] + y[0] - y[0].abs().powf(p - 1.0) * y[0]]
}

/// Series start Q0 + a r² + c r⁴ at small r.
fn series_start(dim: usize, p: f64, q0: f64, r0: f64) -> [f64; 2] {
    let a = (q0 - q0.powf(p)) / (2.0 * dim as f64);
    let c = (1.0 - p * q0.powf(p - 1.0)) * a / (4.0 * (dim as f64 + 2.0));
    [q0 + a * r0 * r0 + c * r0.powi(4), 2.0 * a * r0 + 4.0 * c * r0.powi(3)]
}

fn ode_opts() -> OdeOptions {
    OdeOptions { rtol: 1e-13, atol: 1e-16, h0: 1e-3, h_max: 0.05, max_steps: 2_000_000 }
}

fn classify(dim: usize, p: f64, q0: f64, r_cap: f64) -> Result<Shot> {
    let r0 = 1e-3;
    let mut verdict = Shot::Undecided;
    integrate(rhs(dim, p), r0, series_start(dim, p, q0, r0), r_cap, ode_opts(), |_, y| {
        if y[0] < 0.0 {
            verdict = Shot::Over;
            Flow::Stop
        } else if y[1] > 0.0 {
            verdict = Shot::Under;
            Flow::Stop
        } else {
            Flow::Continue
        }
    })?;
    Ok(verdict)
}

pub fn check_exponent(p: f64, dim: usize) -> Result<()> {
    if !(1..=5).contains(&dim) {
        return domain(format!("dimension N = {dim} outside 1..=5"));
    }
    if !(p > 1.0) {
        return domain(format!("p = {p} must exceed 1"));
    }
    if dim >= 3 && p >= (dim as f64 + 2.0) / (dim as f64 - 2.0) {
        return domain(format!("p = {p} is not energy-subcritical in dimension {dim}"));
    }
    Ok(())
}

/// Bisection on Q(0) between the two non-decaying behaviours.
pub fn shoot_q0(p: f64, dim: usize, rtol: f64) -> Result<f64> {
    check_exponent(p, dim)?;
    let r_cap = 60.0;
    let guess = ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0)) * (1.0 + 0.5 * (dim as f64 - 1.0));
    let (mut lo, mut hi) = (guess, guess);
    let mut widen = 0;
    while classify(dim, p, lo, r_cap)? != Shot::Under {
        lo *= 0.5;
        widen += 1;
        if widen > 60 {
            return solver(format!("no undershooting Q(0) found below {guess}"));
        }
    }
    while classify(dim, p, hi, r_cap)? != Shot::Over {
        hi *= 2.0;
        widen += 1;
        if widen > 120 {
            return solver(format!("no overshooting Q(0) found above {guess}"));
        }
    }
    for _ in 0..200 {
        if hi - lo <= rtol * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match classify(dim, p, mid, r_cap)? {
            Shot::Over => hi = mid,
            Shot::Under => lo = mid,
            Shot::Undecided => {
                lo = mid;
                hi = mid;
            }
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Samples the shooting trajectory on grid nodes until it drops below
/// `cut·Q(0)`, then continues with the linear decaying tail.
fn trajectory_on_grid(p: f64, dim: usize, q0: f64, r: &[f64]) -> Result<Vec<f64>> {
    let cut = 1e-6;
    let mut q = vec![0.0; r.len()];
    q[0] = q0;
    let r0 = 1e-3;
    let mut t = r0;
    let mut y = series_start(dim, p, q0, r0);
    let mut i_cut = r.len();
    for i in 1..r.len() {
        if r[i] <= r0 {
            q[i] = series_start(dim, p, q0, r[i])[0];
            continue;
        }
        let (t1, y1) = integrate(rhs(dim, p), t, y, r[i], ode_opts(), |_, _| Flow::Continue)?;
        t = t1;
        y = y1;
        q[i] = y[0];
        if y[0] < cut * q0 || y[1] >= 0.0 {
            i_cut = i;
            break;
        }
    }
    if i_cut < r.len() {
        let tail = |x: f64| {
            let n = dim as f64;
            x.powf(-(n - 1.0) / 2.0) * (-x).exp() * (1.0 + (n - 1.0) * (n - 3.0) / (8.0 * x))
        };
        let a = q[i_cut - 1] / tail(r[i_cut - 1]);
        for i in i_cut..r.len() {
            q[i] = a * tail(r[i]);
        }
    }
    Ok(q)
}

/// Newton iterations on the discrete equation Δ_h Q − Q + |Q|^{p−1}Q = 0.
fn newton_polish(grid: &RadialGrid, p: f64, q: &mut [f64]) -> Result<()> {
    let op = grid.op(Parity::Even, RightBc::Zero);
    for _ in 0..30 {
        let lap = op.laplacian(q);
        let f: Vec<f64> = q.iter().zip(&lap).map(|(v, l)| l - v + v.abs().powf(p - 1.0) * v).collect();
        let diag: Vec<f64> = q.iter().map(|v| -1.0 + p * v.abs().powf(p - 1.0)).collect();
        let jac = grid.assemble(op, 1.0, None, &diag);
        let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
        jac.factor()?.solve_in_place(&mut dx);
        let step = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (v, d) in q.iter_mut().zip(&dx) {
            *v += d;
        }
        if step < 1e-15 * q[0].abs() {
            return Ok(());
        }
    }
    let lap = op.laplacian(q);
    let res = q.iter().zip(&lap).map(|(v, l)| (l - v + v.abs().powf(p - 1.0) * v).abs()).fold(0.0, f64::max);
    if res < 1e-11 * q[0] {
        Ok(())
    } else {
        solver(format!("ground-state Newton polish stalled (residual {res:e})"))
    }
}

pub fn solve_ground_state(p: f64, dim: usize) -> Result<GroundState> {
    solve_ground_state_with(p, dim, GroundStateOptions::default())
}

pub fn solve_ground_state_with(p: f64, dim: usize, opts: GroundStateOptions) -> Result<GroundState> {
    check_exponent(p, dim)?;
    let q0 = shoot_q0(p, dim, opts.bisection_rtol)?;
    let grid = RadialGrid::stretched(dim, opts.nodes, opts.r_max, opts.h)?;
    on_grid(p, dim, q0, grid)
}

/// Ground state sampled on a caller-supplied grid (used by profiles and nlse).
pub fn solve_ground_state_on(p: f64, grid: Arc<RadialGrid>) -> Result<GroundState> {
    let dim = grid.dim();
    check_exponent(p, dim)?;
    let q0 = shoot_q0(p, dim, GroundStateOptions::default().bisection_rtol)?;
    on_grid(p, dim, q0, grid)
}

fn on_grid(p: f64, dim: usize, q0: f64, grid: Arc<RadialGrid>) -> Result<GroundState> {
    if grid.r_max() < 20.0 {
        return config(format!("ground-state grid r_max = {} too small (need ≥ 20)", grid.r_max()));
    }
    let mut q = trajectory_on_grid(p, dim, q0, grid.r())?;
    newton_polish(&grid, p, &mut q)?;
    if q.iter().any(|v| *v <= 0.0) || q.windows(2).any(|w| w[1] > w[0]) {
        return solver("ground state is not positive and decreasing");
    }
    let field = RadialField::from_real(grid.clone(), &q)?;
    let mass = field.mass();
    let grad2 = field.gradient_norm2();
    let y2: Vec<f64> = q.iter().zip(grid.r()).map(|(v, r)| v * v * r * r).collect();
    let y2_mass = grid.integrate(&y2);
    let pot: Vec<f64> = q.iter().map(|v| v.powf(p + 1.0)).collect();
    let potential = grid.integrate(&pot);
    let energy = 0.5 * grad2 - potential / (p + 1.0);
    Ok(GroundState { p, dim, q0, grid, q, mass, y2_mass, grad2, potential, energy })
}

impl GroundState {
    pub fn sigma_c(&self) -> f64 {
        crate::sigma_c(self.p, self.dim)
    }

    pub fn field(&self) -> RadialField {
        RadialField::from_real(self.grid.clone(), &self.q).expect("ground state finite")
    }

    /// Q at an arbitrary radius (interpolated; asymptotic tail past r_max).
    pub fn eval(&self, r: f64) -> f64 {
        let rm = self.grid.r_max();
        if r <= rm {
            self.grid.interpolate(&self.q, Parity::Even, r)
        } else {
            let n = self.dim as f64;
            let q_end = *self.q.last().unwrap();
            q_end * (rm / r).powf((n - 1.0) / 2.0) * (rm - r).exp()
        }
    }

    /// ΛQ = (2/(p−1))Q + rQ'.
    pub fn lambda_q(&self) -> Vec<f64> {
        lambda_op(&self.grid, self.p, &self.q)
    }

    /// Pohozaev residuals (relative): pairing the equation with Q and with ΛQ.
    pub fn pohozaev(&self) -> (f64, f64) {
        let n = self.dim as f64;
        let p = self.p;
        let r1 = (self.grad2 + self.mass - self.potential) / self.potential;
        let r2 = ((n - 2.0) / 2.0 * self.grad2 + n / 2.0 * self.mass - n / (p + 1.0) * self.potential) / self.potential;
        (r1, r2)
    }
}

/// Λf = (2/(p−1)) f + r f' for real even samples.
pub fn lambda_op(grid: &RadialGrid, p: f64, f: &[f64]) -> Vec<f64> {
    let d = grid.even().d1(f);
    f.iter().zip(d.iter().zip(grid.r())).map(|(v, (dv, r))| 2.0 / (p - 1.0) * v + r * dv).collect()
}

#[derive(Clone, Debug)]
pub struct Rho {
    pub rho: Vec<f64>,
    pub residual: f64,
    /// 2(ρ, Q).
    pub two_rho_q: f64,
    /// ((1 + σ_c)/4)|yQ|².
    pub predicted: f64,
}

pub fn solve_rho(gs: &GroundState) -> Result<Rho> {
    let a = spectral::l_plus(gs);
    let src: Vec<f64> = gs.q.iter().zip(gs.grid.r()).map(|(q, r)| r * r * q / 4.0).collect();
    let lu = a.clone().factor().map_err(|e| crate::LabError::Solver(format!("L_+ singular: {e}")))?;
    let rho = lu.solve(&src);
    let residual = crate::banded::relative_residual(&a, &rho, &src);
    let two_rho_q = 2.0 * gs.grid.dot(&rho, &gs.q);
    let predicted = (1.0 + gs.sigma_c()) / 4.0 * gs.y2_mass;
    Ok(Rho { rho, residual, two_rho_q, predicted })
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    /// |L_−Q| / |Q|.
    pub l_minus_q: f64,
    /// |L_+ΛQ + 2Q| / |Q|.
    pub l_plus_lambda_q: f64,
    /// Lowest eigenvalue of L_+ in the ℓ = 1 sector (N ≥ 2), ideally 0.
    pub l_plus_l1_lowest: Option<f64>,
}

pub fn kernel_checks(gs: &GroundState) -> Result<KernelReport> {
    let g = &gs.grid;
    let qn = gs.mass.sqrt();
    let lm = spectral::l_minus(gs).matvec(&gs.q);
    let l_minus_q = g.norm2(&lm).sqrt() / qn;
    let lq = gs.lambda_q();
    let lp = spectral::l_plus(gs).matvec(&lq);
    let r: Vec<f64> = lp.iter().zip(&gs.q).map(|(a, q)| a + 2.0 * q).collect();
    let l_plus_lambda_q = g.norm2(&r).sqrt() / qn;
    let l_plus_l1_lowest = if gs.dim >= 2 {
        let pot: Vec<f64> = gs.q.iter().map(|q| 1.0 - gs.p * q.powf(gs.p - 1.0)).collect();
        let op = spectral::sector_operator(g, &pot, 1);
        Some(spectral::lowest_eigenpair(g, &op, -0.2)?.value)
    } else {
        None
    };
    Ok(KernelReport { l_minus_q, l_plus_lambda_q, l_plus_l1_lowest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn cubic_1d_closed_form() {
        let gs = solve_ground_state(3.0, 1).unwrap();
        assert!((gs.q0 - SQRT_2).abs() < 1e-12, "{}", gs.q0 - SQRT_2);
        let err = gs.grid.r().iter().zip(&gs.q).map(|(r, q)| (q - SQRT_2 / r.cosh()).abs()).fold(0.0, f64::max);
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn general_power_1d_closed_form() {
        for p in [2.0, 4.0, 5.0, 7.0] {
            let q0 = shoot_q0(p, 1, 1e-15).unwrap();
            let exact = ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0));
            assert!((q0 - exact).abs() < 1e-10 * exact, "p={p}");
        }
    }

    #[test]
    fn closed_form_satisfies_ode() {
        // residual oracle for Q = ((p+1)/2)^{1/(p−1)} sech^{2/(p−1)}((p−1)r/2)
        let p: f64 = 4.0;
        let q = |r: f64| ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0)) / ((p - 1.0) * r / 2.0).cosh().powf(2.0 / (p - 1.0));
        let h = 1e-3;
        for r in [0.3, 1.0, 2.5] {
            let d2 = (q(r + h) - 2.0 * q(r) + q(r - h)) / (h * h);
            assert!((d2 - q(r) + q(r).powf(p)).abs() < 1e-6);
        }
    }

    #[test]
    fn critical_energy_vanishes() {
        for dim in 1..=3 {
            let gs = solve_ground_state(crate::critical_exponent(dim), dim).unwrap();
            assert!(gs.energy.abs() < 1e-6 * gs.grad2, "N={dim}: E={}", gs.energy);
            let (a, b) = gs.pohozaev();
            assert!(a.abs() < 1e-6 && b.abs() < 1e-6);
        }
    }

    #[test]
    fn profile_is_positive_decreasing_and_decayed() {
        let gs = solve_ground_state(7.0 / 3.0, 3).unwrap();
        assert!(*gs.q.last().unwrap() < 1e-8 * gs.q0);
        assert!(gs.q.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rho_identity_and_residual() {
        let gs = solve_ground_state(3.0, 2).unwrap();
        let rho = solve_rho(&gs).unwrap();
        assert!(rho.residual < 1e-8);
        assert!(((rho.two_rho_q - rho.predicted) / rho.predicted).abs() < 1e-6);
        let sup = rho.rho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rho.rho.last().unwrap().abs() < 1e-6 * sup);
    }

    #[test]
    fn kernel_identities() {
        let gs = solve_ground_state(3.0, 2).unwrap();
        let k = kernel_checks(&gs).unwrap();
        assert!(k.l_minus_q < 1e-8);
        assert!(k.l_plus_lambda_q < 1e-6);
        assert!(k.l_plus_l1_lowest.unwrap().abs() < 1e-5);
    }

    #[test]
    fn q0_grid_independent_and_eval() {
        let a = solve_ground_state(3.0, 2).unwrap();
        let b = solve_ground_state_with(3.0, 2, GroundStateOptions { h: 0.01, nodes: 2400, ..Default::default() }).unwrap();
        assert!((a.q0 - b.q0).abs() < 1e-8 * a.q0);
        assert!((b.q[0] - a.q[0]).abs() < 1e-8);
        assert!((a.eval(1.234) - b.eval(1.234)).abs() < 1e-8);
    }

    #[test]
    fn out_of_range_exponent() {
        assert!(solve_ground_state(5.5, 3).is_err());
        assert!(solve_ground_state(1.0, 2).is_err());
    }
}
