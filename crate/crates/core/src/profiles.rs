//! Approximate self-similar profiles: the cut-off solution P0 of the
//! b-deformed ground-state equation, the O(σ_c) correction (T_b, μ_b), the
//! assembled Q_b = (P̃0 + σ_c T_b) e^{−ibr²/4}, and its invariants.
//!
//! Every profile for a given b lives on a uniform grid whose node `m` sits
//! exactly at R_b.  Neighbouring values b' reuse the same node count, so the
//! grids are rescaled copies and b-derivatives at fixed r follow from
//! index-aligned differences plus the chain-rule term r f'(r)/b.

use crate::banded::{relative_residual, BandMatrix};
use crate::error::{config, domain, solver, Result};
use crate::grid::{Parity, RadialField, RadialGrid, RightBc};
use crate::groundstate::{solve_rho, GroundState};
use crate::spectral::{lowest_eigenpair_from, sector_operator, LinearizedOperator};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOptions {
    /// Cutoff parameter: R_b = (2/|b|)√(1−η), R_b⁻ = √(1−η) R_b.
    pub eta: f64,
    /// Target spacing; refined so the cutoff band holds at least 16 intervals.
    pub h: f64,
    /// Extra domain beyond R_b where T_b and ξ_b decay like e^{−r}.
    pub tail: f64,
    /// Relative step of the centred differences in b.
    pub db_rel: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { eta: 0.1, h: 0.02, tail: 30.0, db_rel: 1e-3 }
    }
}

/// R_b and R_b⁻.
pub fn radii(b: f64, eta: f64) -> (f64, f64) {
    let r_b = 2.0 / b.abs() * (1.0 - eta).sqrt();
    (r_b, (1.0 - eta).sqrt() * r_b)
}

/// Quintic smoothstep cutoff: 1 on [0, R_b⁻], 0 on [R_b, ∞).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Cutoff {
    pub r_minus: f64,
    pub r_b: f64,
}

impl Cutoff {
    pub fn new(b: f64, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return domain(format!("eta = {eta} outside (0, 1)"));
        }
        if b == 0.0 || !b.is_finite() {
            return domain("cutoff needs a finite nonzero b");
        }
        let (r_b, r_minus) = radii(b, eta);
        Ok(Self { r_minus, r_b })
    }

    fn t(&self, r: f64) -> f64 {
        ((self.r_b - r) / (self.r_b - self.r_minus)).clamp(0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.r_b - self.r_minus
    }

    pub fn phi(&self, r: f64) -> f64 {
        let t = self.t(r);
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }

    pub fn dphi(&self, r: f64) -> f64 {
        let t = self.t(r);
        -30.0 * t * t * (1.0 - t) * (1.0 - t) / self.width()
    }

    pub fn d2phi(&self, r: f64) -> f64 {
        let t = self.t(r);
        60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (self.width() * self.width())
    }

    /// Δφ = φ'' + (N−1)/r φ'.
    pub fn laplacian(&self, r: f64, dim: usize) -> f64 {
        let d1 = self.dphi(r);
        let lap = self.d2phi(r);
        if r > 0.0 {
            lap + (dim as f64 - 1.0) / r * d1
        } else {
            lap
        }
    }
}

/// Samples φ_b on a grid after checking the transition band is resolved by ≥ 16 intervals.
pub fn build_cutoff(grid: &RadialGrid, b: f64, eta: f64) -> Result<Vec<f64>> {
    let c = Cutoff::new(b, eta)?;
    let inside = grid.r().iter().filter(|r| **r >= c.r_minus && **r <= c.r_b).count();
    if inside < 17 {
        return config(format!(
            "cutoff band [{:.4}, {:.4}] holds {inside} nodes (need ≥ 17)",
            c.r_minus, c.r_b
        ));
    }
    Ok(grid.r().iter().map(|&r| c.phi(r)).collect())
}

/// Node layout shared by a profile and its b-neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Index of the node at R_b.
    pub m: usize,
    /// Total number of intervals.
    pub n: usize,
}

impl Layout {
    pub fn choose(b: f64, opts: &ProfileOptions) -> Self {
        let (r_b, r_minus) = radii(b, opts.eta);
        let h = opts.h.min((r_b - r_minus) / 20.0);
        let m = (r_b / h).ceil() as usize;
        let h = r_b / m as f64;
        Self { m, n: m + (opts.tail / h).ceil() as usize }
    }
}

/// P0 and its cut-off version on the full profile grid.
#[derive(Clone, Debug)]
pub struct BaseProfile {
    pub b: f64,
    pub p: f64,
    pub dim: usize,
    pub eta: f64,
    pub r_b: f64,
    pub r_minus: f64,
    pub layout: Layout,
    pub grid: Arc<RadialGrid>,
    /// Nodes 0..=m of `grid` as a grid on [0, R_b] (one-sided stencils at R_b).
    pub core_grid: Arc<RadialGrid>,
    /// P0 on [0, R_b], zero beyond.
    pub p0: Vec<f64>,
    /// P0' on [0, R_b], zero beyond.
    pub dp0: Vec<f64>,
    pub phi: Vec<f64>,
    pub ptilde: Vec<f64>,
    pub dptilde: Vec<f64>,
    pub newton_iterations: usize,
}

fn p0_residual(sub: &RadialGrid, b: f64, p: f64, v: &[f64]) -> Vec<f64> {
    let m = v.len() - 1;
    let lap = sub.op(Parity::Even, RightBc::OneSided).laplacian(v);
    let mut f: Vec<f64> = (0..=m)
        .map(|i| {
            let r = sub.r()[i];
            lap[i] + (b * b * r * r / 4.0 - 1.0) * v[i] + v[i].abs().powf(p - 1.0) * v[i]
        })
        .collect();
    f[m] = v[m];
    f
}

fn p0_jacobian(sub: &RadialGrid, b: f64, p: f64, v: &[f64]) -> BandMatrix<f64> {
    let m = v.len() - 1;
    let op = sub.op(Parity::Even, RightBc::OneSided);
    let diag: Vec<f64> = (0..=m)
        .map(|i| {
            let r = sub.r()[i];
            b * b * r * r / 4.0 - 1.0 + p * v[i].abs().powf(p - 1.0)
        })
        .collect();
    let mut a = sub.assemble(op, 1.0, None, &diag);
    let (kl, _) = a.bandwidths();
    for j in m.saturating_sub(kl)..=m {
        a.set(m, j, if j == m { 1.0 } else { 0.0 });
    }
    a
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Damped Newton for ΔP − P + (b²r²/4)P + P^p = 0 on [0, R_b] with P(R_b) = 0.
fn newton_p0(sub: &RadialGrid, b: f64, p: f64, guess: Vec<f64>) -> Result<(Vec<f64>, usize)> {
    let mut v = guess;
    let mut f = p0_residual(sub, b, p, &v);
    let mut fn0 = max_abs(&f);
    for it in 1..=60 {
        let lu = p0_jacobian(sub, b, p, &v).factor()?;
        let dv = lu.solve(&f);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&dv).map(|(a, d)| a - step * d).collect();
            let ft = p0_residual(sub, b, p, &trial);
            let fnt = max_abs(&ft);
            if fnt.is_finite() && (fnt < fn0 || fnt < 1e-12 * max_abs(&trial)) {
                v = trial;
                f = ft;
                fn0 = fnt;
                break;
            }
            step *= 0.5;
            let h = sub.max_spacing();
            if fn0 <= 1e-13 * max_abs(&v) / (h * h) {
                // already at the rounding floor of the discrete Laplacian
                return Ok((v, it));
            }
            if step < 1e-4 {
                return solver(format!("P0 Newton stalled at b = {b} (residual {fn0:e})"));
            }
        }
        if step * max_abs(&dv) <= 1e-13 * max_abs(&v) {
            return Ok((v, it));
        }
    }
    solver(format!("P0 Newton did not converge at b = {b} (residual {fn0:e})"))
}

fn assemble_base(
    b: f64,
    p: f64,
    dim: usize,
    eta: f64,
    layout: Layout,
    p0_sub: Vec<f64>,
    iterations: usize,
) -> Result<BaseProfile> {
    let (r_b, r_minus) = radii(b, eta);
    let h = r_b / layout.m as f64;
    let sub = RadialGrid::uniform(dim, layout.m, r_b)?;
    let grid = RadialGrid::uniform(dim, layout.n, layout.n as f64 * h)?;
    let c = Cutoff::new(b, eta)?;
    let dsub = sub.op(Parity::Even, RightBc::OneSided).d1(&p0_sub);
    let total = layout.n + 1;
    let mut p0 = vec![0.0; total];
    let mut dp0 = vec![0.0; total];
    p0[..=layout.m].copy_from_slice(&p0_sub);
    dp0[..=layout.m].copy_from_slice(&dsub);
    p0[layout.m] = 0.0;
    let phi = build_cutoff(&grid, b, eta)?;
    let ptilde: Vec<f64> = phi.iter().zip(&p0).map(|(f, v)| f * v).collect();
    let dptilde: Vec<f64> = (0..total)
        .map(|i| c.dphi(grid.r()[i]) * p0[i] + phi[i] * dp0[i])
        .collect();
    Ok(BaseProfile {
        b,
        p,
        dim,
        eta,
        r_b,
        r_minus,
        layout,
        grid,
        core_grid: sub,
        p0,
        dp0,
        phi,
        ptilde,
        dptilde,
        newton_iterations: iterations,
    })
}

fn admissible(p0: &[f64], q0: f64) -> bool {
    let m = p0.len() - 1;
    p0[..m].iter().all(|v| *v > 0.0) && (p0[0] - q0).abs() < 0.5 * q0
}

/// Solves for P0 on a prescribed layout, starting from `guess` (index-aligned) or from Q_p.
pub fn solve_p0_on(b: f64, gs: &GroundState, eta: f64, layout: Layout, guess: Option<&[f64]>) -> Result<BaseProfile> {
    if b == 0.0 {
        return domain("solve_p0_on needs b ≠ 0; use solve_p0 for the b = 0 limit");
    }
    let (r_b, _) = radii(b, eta);
    let sub = RadialGrid::uniform(gs.dim, layout.m, r_b)?;
    let q_end = gs.eval(r_b);
    let from_q = |sub: &RadialGrid| -> Vec<f64> {
        sub.r().iter().map(|&r| gs.eval(r) - q_end * (r / r_b).powi(2)).collect()
    };
    let first = match guess {
        Some(g) => newton_p0(&sub, b, gs.p, g[..=layout.m].to_vec()),
        None => newton_p0(&sub, b, gs.p, from_q(&sub)),
    };
    let (v, it) = match first {
        Ok(s) if admissible(&s.0, gs.q0) => s,
        _ => {
            // continuation in b along rescaled copies of the same layout
            let steps = 8;
            let mut v: Option<Vec<f64>> = None;
            let mut total = 0;
            for k in 1..=steps {
                let bk = b * k as f64 / steps as f64;
                let (rk, _) = radii(bk, eta);
                let sk = RadialGrid::uniform(gs.dim, layout.m, rk)?;
                let g = match v.take() {
                    Some(prev) => prev,
                    None => {
                        let qe = gs.eval(rk);
                        sk.r().iter().map(|&r| gs.eval(r) - qe * (r / rk).powi(2)).collect()
                    }
                };
                let (vk, itk) = newton_p0(&sk, bk, gs.p, g)?;
                total += itk;
                v = Some(vk);
            }
            (v.unwrap(), total)
        }
    };
    if !admissible(&v, gs.q0) {
        return solver(format!(
            "no admissible P0(0) near Q_p(0) = {:.6} at b = {b}: b too large for eta = {eta}",
            gs.q0
        ));
    }
    assemble_base(b, gs.p, gs.dim, eta, layout, v, it)
}

/// P0 on the default layout for `b`; b = 0 returns Q_p sampled on a uniform grid.
pub fn solve_p0(b: f64, gs: &GroundState, opts: &ProfileOptions) -> Result<BaseProfile> {
    if !(opts.eta > 0.0 && opts.eta < 1.0) {
        return domain(format!("eta = {} outside (0, 1)", opts.eta));
    }
    if b == 0.0 {
        let grid = RadialGrid::with_spacing(gs.dim, opts.h, gs.grid.r_max())?;
        let q: Vec<f64> = grid.r().iter().map(|&r| gs.eval(r)).collect();
        let dq = grid.even().d1(&q);
        let n = grid.len() - 1;
        return Ok(BaseProfile {
            b,
            p: gs.p,
            dim: gs.dim,
            eta: opts.eta,
            r_b: f64::INFINITY,
            r_minus: f64::INFINITY,
            layout: Layout { m: n, n },
            core_grid: grid.clone(),
            p0: q.clone(),
            dp0: dq.clone(),
            phi: vec![1.0; n + 1],
            ptilde: q,
            dptilde: dq,
            grid,
            newton_iterations: 0,
        });
    }
    solve_p0_on(b, gs, opts.eta, Layout::choose(b, opts), None)
}

impl BaseProfile {
    /// Ψ̃^(0) = −(2φ'P0' + P0Δφ + (φ^p − φ)P0^p), supported in [R_b⁻, R_b].
    pub fn psi0_tilde(&self) -> Vec<f64> {
        if self.b == 0.0 {
            return vec![0.0; self.grid.len()];
        }
        let c = Cutoff { r_minus: self.r_minus, r_b: self.r_b };
        self.grid
            .r()
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                if r < self.r_minus || r > self.r_b {
                    return 0.0;
                }
                let f = self.phi[i];
                let v = self.p0[i];
                -(2.0 * c.dphi(r) * self.dp0[i] + v * c.laplacian(r, self.dim) + (f.powf(self.p) - f) * v.abs().powf(self.p))
            })
            .collect()
    }

    /// e^{−ibr²/4}.
    pub fn phase(&self) -> Vec<Complex64> {
        self.grid.r().iter().map(|&r| Complex64::from_polar(1.0, -self.b * r * r / 4.0)).collect()
    }
}

/// Ψ_b^(0) = Ψ̃^(0) e^{−ibr²/4}.
pub fn error_psi0(base: &BaseProfile) -> RadialField {
    let v = base.psi0_tilde().iter().zip(base.phase()).map(|(s, e)| e * *s).collect();
    RadialField::new(base.grid.clone(), v).expect("finite cutoff error")
}

/// ∂P̃0/∂b at fixed r from solves at b(1 ± δ) on rescaled copies of the layout.
pub fn dptilde_db(base: &BaseProfile, gs: &GroundState, rel_step: f64) -> Result<Vec<f64>> {
    let b = base.b;
    let db = rel_step * b;
    let plus = solve_p0_on(b + db, gs, base.eta, base.layout, Some(&base.p0))?;
    let minus = solve_p0_on(b - db, gs, base.eta, base.layout, Some(&base.p0))?;
    Ok((0..base.grid.len())
        .map(|i| (plus.ptilde[i] - minus.ptilde[i]) / (2.0 * db) + base.grid.r()[i] * base.dptilde[i] / b)
        .collect())
}

/// Full profile bundle for one b.
#[derive(Clone, Debug)]
pub struct SelfSimilarProfile {
    pub base: BaseProfile,
    pub sigma: f64,
    pub dptilde_db: Vec<f64>,
    /// Lowest eigenvalue and unit eigenvector of (L_−)_b.
    pub lambda_b: f64,
    pub xi: Vec<f64>,
    pub mu: f64,
    pub t: Vec<Complex64>,
    pub q_b: Vec<Complex64>,
    /// Relative residuals of the (L_+)_b and (L_−)_b solves.
    pub re_residual: f64,
    pub im_residual: f64,
}

fn transpose(a: &BandMatrix<f64>) -> BandMatrix<f64> {
    let n = a.n();
    let (kl, ku) = a.bandwidths();
    let mut t = BandMatrix::zeros(n, ku, kl);
    for i in 0..n {
        for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
            if a.in_band(i, j) {
                t.set(j, i, a.get(i, j));
            }
        }
    }
    t
}

/// Solves A x = f for A with a near-null right vector ξ and left vector ℓ, f ⊥ ℓ.
///
/// Each sweep pins x at the origin (dropping the one redundant equation),
/// removes the ξ component so that ⟨ℓ, x⟩ = 0, and refines on the residual;
/// the contraction factor is O(λ_b).
fn solve_deflated(a: &BandMatrix<f64>, f: &[f64], xi: &[f64], left: &[f64]) -> Result<Vec<f64>> {
    let mut pinned = a.clone();
    let (_, ku) = a.bandwidths();
    for j in 0..=ku.min(a.n() - 1) {
        pinned.set(0, j, if j == 0 { 1.0 } else { 0.0 });
    }
    let lu = pinned.factor()?;
    let plain = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let lx = plain(left, xi);
    let sweep = |r: &[f64]| {
        let mut rhs = r.to_vec();
        rhs[0] = 0.0;
        let mut x = lu.solve(&rhs);
        let c = plain(left, &x) / lx;
        x.iter_mut().zip(xi).for_each(|(v, e)| *v -= c * e);
        x
    };
    let mut x = sweep(f);
    for _ in 0..8 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = f.iter().zip(&ax).map(|(u, v)| u - v).collect();
        if max_abs(&r) <= 1e-13 * max_abs(f) {
            break;
        }
        let dx = sweep(&r);
        x.iter_mut().zip(&dx).for_each(|(v, d)| *v += d);
    }
    Ok(x)
}

/// Builds the corrected profile on a given layout.
pub fn build_profile_on(b: f64, gs: &GroundState, sigma: f64, opts: &ProfileOptions, layout: Layout) -> Result<SelfSimilarProfile> {
    let base = solve_p0_on(b, gs, opts.eta, layout, None)?;
    solve_correction(base, gs, sigma, opts.db_rel)
}

/// Profile for `b` on the default layout, with σ_c given independently of p.
pub fn build_profile(b: f64, gs: &GroundState, sigma: f64, opts: &ProfileOptions) -> Result<SelfSimilarProfile> {
    if b == 0.0 {
        return domain("the corrected profile needs b ≠ 0 (μ_b is a 0/0 ratio at b = 0)");
    }
    build_profile_on(b, gs, sigma, opts, Layout::choose(b, opts))
}

/// μ_b, T_b and Q_b for a solved P0.
pub fn solve_correction(base: BaseProfile, gs: &GroundState, sigma: f64, rel_step: f64) -> Result<SelfSimilarProfile> {
    let b = base.b;
    let grid = base.grid.clone();
    let p = base.p;
    let dpb = dptilde_db(&base, gs, rel_step)?;
    let lm = LinearizedOperator::profile_operator(grid.clone(), &base.ptilde, &base.phi, b, p, false);
    let am = sector_operator(&grid, &lm.potential, 0);
    let guess_norm = grid.norm2(&base.ptilde).sqrt();
    let guess: Vec<f64> = base.ptilde.iter().map(|v| v / guess_norm).collect();
    let aguess = am.matvec(&guess);
    let rq = grid.dot(&aguess, &guess);
    let eig = lowest_eigenpair_from(&grid, &am, rq - 1e-3, Some(&guess))?;
    let xi = eig.vector;
    // left null vector: the discrete operator is only approximately symmetric
    let left = lowest_eigenpair_from(&grid, &transpose(&am), eig.value - 1e-9, Some(&xi))?.vector;
    let plain = |f: &[f64], g: &[f64]| f.iter().zip(g).map(|(a, c)| a * c).sum::<f64>();
    let den = grid.dot(&dpb, &xi);
    if den.abs() < 1e-12 * grid.norm2(&dpb).sqrt() {
        return solver(format!("degenerate profile at b = {b}: (∂P̃0/∂b, ξ_b) = {den:e}"));
    }
    let mu = grid.dot(&base.ptilde, &xi) * b / den;
    // Im T: right side projected orthogonal to ξ_b (exactly, against the left vector)
    let raw: Vec<f64> = dpb.iter().zip(&base.ptilde).map(|(d, v)| mu * d - b * v).collect();
    let k = plain(&raw, &left) / plain(&xi, &left);
    let f_im: Vec<f64> = raw.iter().zip(&xi).map(|(r, e)| r - k * e).collect();
    let im_t = if eig.value.abs() > 1e-6 {
        am.clone().factor()?.solve(&f_im)
    } else {
        solve_deflated(&am, &f_im, &xi, &left)?
    };
    let im_residual = relative_residual(&am, &im_t, &f_im);
    let lp = LinearizedOperator::profile_operator(grid.clone(), &base.ptilde, &base.phi, b, p, true);
    let ap = sector_operator(&grid, &lp.potential, 0);
    let f_re: Vec<f64> = base.ptilde.iter().zip(grid.r()).map(|(v, r)| mu / 4.0 * r * r * v).collect();
    let re_t = ap.clone().factor()?.solve(&f_re);
    let re_residual = relative_residual(&ap, &re_t, &f_re);
    let t: Vec<Complex64> = re_t.iter().zip(&im_t).map(|(a, c)| Complex64::new(*a, *c)).collect();
    let q_b = base
        .phase()
        .iter()
        .zip(base.ptilde.iter().zip(&t))
        .map(|(e, (v, tt))| e * (tt * sigma + *v))
        .collect();
    Ok(SelfSimilarProfile {
        base,
        sigma,
        dptilde_db: dpb,
        lambda_b: eig.value,
        xi,
        mu,
        t,
        q_b,
        re_residual,
        im_residual,
    })
}

impl SelfSimilarProfile {
    pub fn b(&self) -> f64 {
        self.base.b
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.base.grid
    }

    pub fn field(&self) -> RadialField {
        RadialField::new(self.base.grid.clone(), self.q_b.clone()).expect("finite profile")
    }

    /// P_b = P̃0 + σ_c T_b (Q_b without the phase).
    pub fn p_b(&self) -> Vec<Complex64> {
        self.base.ptilde.iter().zip(&self.t).map(|(v, t)| t * self.sigma + *v).collect()
    }

    /// Left side of the generalized self-similar equation for P_b without Ψ̃_b,
    /// i.e. −Ψ̃_b, given ∂P_b/∂b.
    pub fn equation_residual(&self, dp_db: &[Complex64]) -> Vec<Complex64> {
        let g = &self.base.grid;
        let pb = self.p_b();
        let lap = g.even().laplacian(&pb);
        let (s, mu, b, p) = (self.sigma, self.mu, self.base.b, self.base.p);
        let i = Complex64::i();
        (0..g.len())
            .map(|k| {
                let r = g.r()[k];
                let v = pb[k];
                i * dp_db[k] * (s * mu) + lap[k] - v - i * v * (s * b)
                    + v * (0.25 * (b * b + s * mu) * r * r)
                    + v * v.norm().powf(p - 1.0)
            })
            .collect()
    }

    /// Full error Ψ_b = −iσ_cμ_b ∂Q_b/∂b − ΔQ_b + Q_b − ibΛQ_b − Q_b|Q_b|^{p−1}.
    pub fn psi_b(&self, dq_db: &[Complex64]) -> Vec<Complex64> {
        let g = &self.base.grid;
        let q = &self.q_b;
        let lap = g.even().laplacian(q);
        let lq = lambda_c(g, self.base.p, q);
        let i = Complex64::i();
        (0..g.len())
            .map(|k| {
                -i * dq_db[k] * (self.sigma * self.mu) - lap[k] + q[k] - i * lq[k] * self.base.b
                    - q[k] * q[k].norm().powf(self.base.p - 1.0)
            })
            .collect()
    }
}

/// Λf for complex samples.
pub fn lambda_c(grid: &RadialGrid, p: f64, f: &[Complex64]) -> Vec<Complex64> {
    let d = grid.even().d1(f);
    f.iter().zip(d.iter().zip(grid.r())).map(|(v, (dv, r))| v * (2.0 / (p - 1.0)) + dv * *r).collect()
}

/// Index-aligned centred difference in b of samples on rescaled grids, converted to fixed r.
pub fn derivative_in_b(
    b: f64,
    db: f64,
    grid: &RadialGrid,
    center: &[Complex64],
    plus: &[Complex64],
    minus: &[Complex64],
) -> Vec<Complex64> {
    let d = grid.even().d1(center);
    (0..grid.len())
        .map(|i| (plus[i] - minus[i]) / (2.0 * db) + d[i] * (grid.r()[i] / b))
        .collect()
}

/// Sup over r ≤ R_b⁻ (away from the cutoff band by the stencil width) of the
/// generalized self-similar equation residual, with ∂P_b/∂b at relative step `rel`.
pub fn residual_inside(profile: &SelfSimilarProfile, gs: &GroundState, opts: &ProfileOptions, rel: f64) -> Result<f64> {
    let b = profile.b();
    let db = rel * b;
    let layout = profile.base.layout;
    let plus = build_profile_on(b + db, gs, profile.sigma, opts, layout)?;
    let minus = build_profile_on(b - db, gs, profile.sigma, opts, layout)?;
    let dp = derivative_in_b(b, db, profile.grid(), &profile.p_b(), &plus.p_b(), &minus.p_b());
    let res = profile.equation_residual(&dp);
    let g = profile.grid();
    let h = g.max_spacing();
    let edge = profile.base.r_minus - (g.fd_order() as f64 / 2.0 + 1.0) * h;
    Ok(g.r()
        .iter()
        .zip(&res)
        .filter(|(r, _)| **r <= edge)
        .fold(0.0, |a, (_, v)| a.max(v.norm())))
}

/// Profile invariants for one b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileInvariants {
    pub b: f64,
    pub sigma: f64,
    pub mu: f64,
    /// 4|Q_p|²/((1+σ_c)|yQ_p|²), the limit of the defining ratio.
    pub mu_ratio_limit: f64,
    /// 8|Q_p|²/((1+2σ_c)|yQ_p|²), the alternative stated limit.
    pub mu_stated_limit: f64,
    pub lambda_b: f64,
    pub momentum: f64,
    pub virial: f64,
    /// −(b/2)|yQ_p|².
    pub virial_reference: f64,
    /// ∫|P̃0|² − ∫Q_p².
    pub mass_excess: f64,
    pub energy_direct: f64,
    pub energy_pohozaev: f64,
    pub re_residual: f64,
    pub im_residual: f64,
    /// |Im T_b|₂ / |Re T_b|₂.
    pub im_re_ratio: f64,
}

pub fn profile_invariants(profile: &SelfSimilarProfile, gs: &GroundState) -> ProfileInvariants {
    let g = profile.grid();
    let f = profile.field();
    let p = profile.base.p;
    let s = profile.sigma;
    let b = profile.b();
    let mass = f.mass();
    let energy_direct = f.energy(p);
    // 2E(1−σ) = Re(ΛQ, −ΔQ + Q − ibΛQ − |Q|^{p−1}Q) + σ∫|Q|²
    let q = &profile.q_b;
    let lap = g.even().laplacian(q);
    let lq = lambda_c(g, p, q);
    let w = g.weights();
    let x: f64 = (0..g.len())
        .map(|k| {
            let e = -lap[k] + q[k] - q[k] * q[k].norm().powf(p - 1.0);
            w[k] * (lq[k] * e.conj()).re
        })
        .sum();
    let energy_pohozaev = (x + s * mass) / (2.0 * (1.0 - s));
    let re: Vec<f64> = profile.t.iter().map(|v| v.re).collect();
    let im: Vec<f64> = profile.t.iter().map(|v| v.im).collect();
    let sg = gs.sigma_c();
    ProfileInvariants {
        b,
        sigma: s,
        mu: profile.mu,
        mu_ratio_limit: 4.0 * gs.mass / ((1.0 + sg) * gs.y2_mass),
        mu_stated_limit: 8.0 * gs.mass / ((1.0 + 2.0 * sg) * gs.y2_mass),
        lambda_b: profile.lambda_b,
        momentum: f.momentum(),
        virial: f.virial_moment(),
        virial_reference: -b / 2.0 * gs.y2_mass,
        mass_excess: g.norm2(&profile.base.ptilde) - gs.mass,
        energy_direct,
        energy_pohozaev,
        re_residual: profile.re_residual,
        im_residual: profile.im_residual,
        im_re_ratio: (g.norm2(&im) / g.norm2(&re)).sqrt(),
    }
}

/// |Q_p|²/(2(ρ, Q_p)), the b → 0 limit of μ_b computed from ρ.
pub fn mu_limit_from_rho(gs: &GroundState) -> Result<f64> {
    let rho = solve_rho(gs)?;
    Ok(gs.mass / rho.two_rho_q)
}

/// c₀ = M''(0) from a least-squares fit M(b) ≈ (c₀/2) b² + c b⁴.
pub fn fit_c0(bs: &[f64], mass_excess: &[f64]) -> f64 {
    let c = crate::stats::power_fit(bs, mass_excess, &[2, 4]);
    2.0 * c[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;
    use proptest::prelude::*;

    #[test]
    fn radii_values() {
        // R_b = (2/b)√0.9, R_b⁻ = 0.9·(2/b)
        let (r_b, r_m) = radii(0.5, 0.1);
        assert!((r_b - 3.794_733_192_202_055).abs() < 1e-14);
        assert!((r_m - 3.6).abs() < 1e-14);
        assert!(Cutoff::new(0.5, 1.0).is_err());
        assert!(Cutoff::new(0.0, 0.1).is_err());
    }

    #[test]
    fn fit_c0_recovers_quadratic_coefficient() {
        let bs = [0.1f64, 0.15, 0.2, 0.25];
        let m: Vec<f64> = bs.iter().map(|b| 0.4 * b * b + 3.0 * b.powi(4)).collect();
        assert!((fit_c0(&bs, &m) - 0.8).abs() < 1e-10);
    }

    #[test]
    fn small_b_limits() {
        let sigma = 0.005;
        let p = crate::exponent_for_sigma(sigma, 1);
        let gs = solve_ground_state(p, 1).unwrap();
        let opts = ProfileOptions::default();
        let lim = mu_limit_from_rho(&gs).unwrap();
        let mut dq = Vec::new();
        let mut dmu = Vec::new();
        for b in [0.1, 0.05] {
            let pr = build_profile(b, &gs, sigma, &opts).unwrap();
            dq.push((pr.base.p0[0] - gs.q0).abs());
            dmu.push((pr.mu / lim - 1.0).abs());
            let inv = profile_invariants(&pr, &gs);
            assert_eq!(inv.momentum, 0.0);
            assert!((inv.energy_direct - inv.energy_pohozaev).abs() < 1e-4 * inv.energy_direct.abs());
            assert!(pr.re_residual < 1e-9 && pr.im_residual < 1e-9);
            assert!(residual_inside(&pr, &gs, &opts, 1e-3).unwrap() < 1e-3);
        }
        // P0 − Q and μ_b − μ_0 are both O(b²)
        let r = dq[0] / dq[1];
        assert!((3.5..4.5).contains(&r), "P0(0) − Q(0) ratio {r}");
        assert!(dmu[1] < 0.02 && dmu[0] / dmu[1] > 3.0, "{dmu:?}");
    }

    proptest! {
        #[test]
        fn cutoff_is_a_monotone_smoothstep(b in 0.05f64..1.5, eta in 0.02f64..0.5, x in 0.0f64..1.5) {
            let c = Cutoff::new(b, eta).unwrap();
            let r = x * c.r_b;
            let f = c.phi(r);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(c.dphi(r) <= 0.0);
            if r <= c.r_minus { prop_assert_eq!(f, 1.0); }
            if r >= c.r_b { prop_assert_eq!(f, 0.0); }
            let h = 1e-6 * c.width();
            if r > c.r_minus + h && r < c.r_b - h {
                let fd = (c.phi(r + h) - c.phi(r - h)) / (2.0 * h);
                prop_assert!((fd - c.dphi(r)).abs() < 1e-6 / c.width());
            }
        }
    }
}
