//! Linearized operators around Q_p and around the self-similar profiles,
//! lowest eigenpairs, and numerical verification of the coercivity
//! (Spectral Property) of the virial quadratic form.

use crate::banded::BandMatrix;
use crate::error::{config, solver, Result};
use crate::grid::{sphere_area, Parity, RadialField, RadialGrid, RightBc};
use crate::groundstate::{solve_ground_state_with, GroundState, GroundStateOptions};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    LPlus,
    LMinus,
    LPlusB,
    LMinusB,
    CurlyL1,
    CurlyL2,
    HpReal,
    HpImag,
}

/// −Δ + V + ℓ(ℓ+N−2)/r² on a radial grid.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub kind: OperatorKind,
    pub grid: Arc<RadialGrid>,
    pub potential: Vec<f64>,
    pub ell: usize,
}

fn y_grad_q(gs: &GroundState) -> Vec<f64> {
    let d = gs.grid.even().d1(&gs.q);
    d.iter().zip(gs.grid.r()).map(|(dq, r)| r * dq).collect()
}

impl LinearizedOperator {
    fn new(kind: OperatorKind, grid: Arc<RadialGrid>, potential: Vec<f64>) -> Self {
        Self { kind, grid, potential, ell: 0 }
    }

    pub fn l_plus(gs: &GroundState) -> Self {
        let v = gs.q.iter().map(|q| 1.0 - gs.p * q.powf(gs.p - 1.0)).collect();
        Self::new(OperatorKind::LPlus, gs.grid.clone(), v)
    }

    pub fn l_minus(gs: &GroundState) -> Self {
        let v = gs.q.iter().map(|q| 1.0 - q.powf(gs.p - 1.0)).collect();
        Self::new(OperatorKind::LMinus, gs.grid.clone(), v)
    }

    /// (L_+)_b / (L_−)_b around the cut-off profile P̃: 1 − (b²/4)φ r² − {p,1}P̃^{p−1}.
    pub fn profile_operator(grid: Arc<RadialGrid>, ptilde: &[f64], phi: &[f64], b: f64, p: f64, plus: bool) -> Self {
        let c = if plus { p } else { 1.0 };
        let v = ptilde
            .iter()
            .zip(phi.iter().zip(grid.r()))
            .map(|(q, (f, r))| 1.0 - b * b / 4.0 * f * r * r - c * q.abs().powf(p - 1.0))
            .collect();
        Self::new(if plus { OperatorKind::LPlusB } else { OperatorKind::LMinusB }, grid, v)
    }

    /// ℒ₁ and ℒ₂ at the critical exponent: −Δ + (2/N)(4/N+1)Q^{4/N−1} y·∇Q and −Δ + (2/N)Q^{4/N−1} y·∇Q.
    pub fn curly(gs: &GroundState, first: bool) -> Self {
        let n = gs.dim as f64;
        let c = if first { 2.0 / n * (4.0 / n + 1.0) } else { 2.0 / n };
        let yq = y_grad_q(gs);
        let v = gs.q.iter().zip(&yq).map(|(q, y)| c * q.powf(4.0 / n - 1.0) * y).collect();
        Self::new(if first { OperatorKind::CurlyL1 } else { OperatorKind::CurlyL2 }, gs.grid.clone(), v)
    }

    /// Operators of the virial form H_p for the real and imaginary parts.
    pub fn hp(gs: &GroundState, real: bool) -> Self {
        let p = gs.p;
        let c = if real { p * (p - 1.0) / 2.0 } else { (p - 1.0) / 2.0 };
        let yq = y_grad_q(gs);
        let v = gs.q.iter().zip(&yq).map(|(q, y)| c * q.powf(p - 2.0) * y).collect();
        Self::new(if real { OperatorKind::HpReal } else { OperatorKind::HpImag }, gs.grid.clone(), v)
    }

    pub fn with_sector(mut self, ell: usize) -> Self {
        self.ell = ell;
        self
    }

    pub fn matrix(&self) -> BandMatrix<f64> {
        sector_operator(&self.grid, &self.potential, self.ell)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix().matvec(f)
    }
}

/// Banded −Δ + V + ℓ(ℓ+N−2)/r²; for ℓ ≥ 1 the origin row enforces f(0) = 0.
pub fn sector_operator(grid: &RadialGrid, potential: &[f64], ell: usize) -> BandMatrix<f64> {
    let n = grid.dim() as f64;
    let l = ell as f64;
    let parity = if ell % 2 == 0 { Parity::Even } else { Parity::Odd };
    let op = grid.op(parity, RightBc::Zero);
    let diag: Vec<f64> = potential
        .iter()
        .zip(grid.r())
        .map(|(v, r)| if ell > 0 && *r > 0.0 { v + l * (l + n - 2.0) / (r * r) } else { *v })
        .collect();
    let mut a = grid.assemble(op, -1.0, None, &diag);
    if ell > 0 {
        let (kl, ku) = a.bandwidths();
        for j in 0..=ku.min(grid.len() - 1) {
            a.set(0, j, if j == 0 { 1.0 } else { 0.0 });
        }
        let _ = kl;
    }
    a
}

pub fn l_plus(gs: &GroundState) -> BandMatrix<f64> {
    LinearizedOperator::l_plus(gs).matrix()
}

pub fn l_minus(gs: &GroundState) -> BandMatrix<f64> {
    LinearizedOperator::l_minus(gs).matrix()
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    /// Unit vector in the quadrature norm with ξ(0) > 0 (or first nonzero entry > 0).
    pub vector: Vec<f64>,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Eigenvalue nearest `shift` by inverse iteration, refined by Rayleigh-quotient shifts.
pub fn lowest_eigenpair(grid: &RadialGrid, a: &BandMatrix<f64>, shift: f64) -> Result<Eigenpair> {
    lowest_eigenpair_from(grid, a, shift, None)
}

pub fn lowest_eigenpair_from(grid: &RadialGrid, a: &BandMatrix<f64>, shift: f64, guess: Option<&[f64]>) -> Result<Eigenpair> {
    let n = a.n();
    let w = grid.weights();
    let wnorm = |x: &[f64]| x.iter().zip(w).map(|(v, wi)| wi.abs() * v * v).sum::<f64>().sqrt();
    let mut x: Vec<f64> = match guess {
        Some(g) => g.to_vec(),
        None => grid.r().iter().map(|r| (-r * r / 8.0).exp() * (1.0 + r)).collect(),
    };
    let nx = wnorm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut sigma = shift;
    let mut history = Vec::new();
    let mut value = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 0..60 {
        let mut m = a.clone();
        for i in 0..n {
            m.add(i, i, -sigma);
        }
        let lu = match m.factor() {
            Ok(lu) => lu,
            Err(_) => {
                sigma += 1e-10 * (1.0 + sigma.abs());
                continue;
            }
        };
        let mut y = lu.solve(&x);
        let ny = wnorm(&y);
        if !ny.is_finite() || ny == 0.0 {
            return solver("eigen-solve: iterate lost finiteness");
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let ay = a.matvec(&y);
        value = ay.iter().zip(&y).zip(w).map(|((u, v), wi)| wi.abs() * u * v).sum::<f64>();
        let r: Vec<f64> = ay.iter().zip(&y).map(|(u, v)| u - value * v).collect();
        residual = wnorm(&r);
        history.push(value);
        x = y;
        if residual < 1e-10 {
            break;
        }
        if it >= 2 && residual < 1e-3 {
            sigma = value;
        }
    }
    if residual > 1e-8 {
        return solver(format!("eigen-solve did not converge: residual {residual:e}, Ritz history {history:?}"));
    }
    let pivot = x.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
    if pivot < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(Eigenpair { value, vector: x, residual, history })
}

// ---------------------------------------------------------------------------
// Constrained Rayleigh quotients on a conservative second-order discretization

/// Symmetric finite-volume discretization of the quadratic forms on [0, r_max].
struct FvForms {
    dim: usize,
    r: Vec<f64>,
    vol: Vec<f64>,
    face: Vec<f64>,
}

impl FvForms {
    fn new(dim: usize, h: f64, r_max: f64) -> Self {
        let m = (r_max / h).round() as usize;
        let r: Vec<f64> = (0..m).map(|i| i as f64 * h).collect();
        let om = sphere_area(dim);
        let nn = dim as i32;
        let vol = (0..m)
            .map(|i| {
                let a = if i == 0 { 0.0 } else { (i as f64 - 0.5) * h };
                let b = (i as f64 + 0.5) * h;
                om * (b.powi(nn) - a.powi(nn)) / dim as f64
            })
            .collect();
        let face = (0..m).map(|i| om * ((i as f64 + 0.5) * h).powi(nn - 1) / h).collect();
        Self { dim, r, vol, face }
    }

    fn len(&self) -> usize {
        self.r.len()
    }

    /// Gradient form plus diag(vol·v); node m (r_max) carries a zero value.
    fn stiffness(&self, v: &[f64]) -> DMatrix<f64> {
        let m = self.len();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            let k = self.face[i];
            a[(i, i)] += k;
            if i + 1 < m {
                a[(i + 1, i + 1)] += k;
                a[(i, i + 1)] -= k;
                a[(i + 1, i)] -= k;
            }
            a[(i, i)] += self.vol[i] * v[i];
        }
        a
    }

    fn centrifugal(&self, ell: usize) -> Vec<f64> {
        let l = ell as f64;
        let n = self.dim as f64;
        self.r.iter().map(|r| if *r > 0.0 { l * (l + n - 2.0) / (r * r) } else { 0.0 }).collect()
    }

    fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.vol.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| w * a * b).sum()
    }
}

/// Smallest value of xᵀAx / xᵀBx on {x : Cᵀx = 0} (columns of C are constraint functionals).
fn constrained_min(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &[DVector<f64>]) -> Result<f64> {
    let n = a.nrows();
    let k = c.len();
    let (az, bz) = if c.is_empty() {
        (a.clone(), b.clone())
    } else {
        let qr = DMatrix::from_columns(c).qr();
        let rdiag: Vec<f64> = (0..k).map(|i| qr.r()[(i, i)].abs()).collect();
        let rmax = rdiag.iter().copied().fold(0.0, f64::max);
        let rmin = rdiag.iter().copied().fold(f64::INFINITY, f64::min);
        if rmin < 1e-10 * rmax {
            return solver("constraint Gram matrix ill-conditioned");
        }
        // QᵀMQ through the Householder reflectors; the trailing block spans the null space
        let project = |m: &DMatrix<f64>| {
            let mut t = m.clone();
            qr.q_tr_mul(&mut t);
            let mut t = t.transpose();
            qr.q_tr_mul(&mut t);
            t.view((k, k), (n - k, n - k)).into_owned()
        };
        (project(a), project(b))
    };
    let chol = bz.cholesky().ok_or_else(|| crate::LabError::Solver("denominator form not positive definite".into()))?;
    let l = chol.l();
    // M = L⁻¹ A L⁻ᵀ via two triangular solves
    let y = l.solve_lower_triangular(&az).ok_or_else(|| crate::LabError::Solver("singular Cholesky factor".into()))?;
    let m = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| crate::LabError::Solver("singular Cholesky factor".into()))?;
    let m = (&m + m.transpose()) * 0.5;
    Ok(m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectorMinimum {
    pub ell: usize,
    /// 1 for the ε₁ (ℒ₁) part, 2 for the ε₂ (ℒ₂) part.
    pub part: u8,
    pub constraints: usize,
    pub minimum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub dim: usize,
    pub p: f64,
    pub h: f64,
    pub r_max: f64,
    pub sectors: Vec<SectorMinimum>,
    pub delta1: f64,
    /// Per-part minima nondecreasing in ℓ over the unconstrained sectors ℓ ≥ 2.
    pub monotone_in_l: bool,
    /// Lowest value of the ℓ = 0 ℒ₂ quotient without constraints.
    pub unconstrained_l2_min: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub h: f64,
    pub r_max: f64,
    pub max_ell: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { h: 0.05, r_max: 25.0, max_ell: 4 }
    }
}

/// Ground-state data sampled on the finite-volume nodes.
struct Sampled {
    q: Vec<f64>,
    dq: Vec<f64>,
    lq: Vec<f64>,
    l2q: Vec<f64>,
}

fn sample_ground_state(gs: &GroundState, r: &[f64]) -> Sampled {
    let g = &gs.grid;
    let p = gs.p;
    let n = gs.dim as f64;
    let c = 2.0 / (p - 1.0);
    let dq_grid = g.even().d1(&gs.q);
    let q: Vec<f64> = r.iter().map(|&x| gs.eval(x)).collect();
    let dq: Vec<f64> = r.iter().map(|&x| g.interpolate(&dq_grid, Parity::Odd, x)).collect();
    // Q'' from the equation; at the origin Q''(0) = (Q − Q^p)/N
    let d2q: Vec<f64> = r
        .iter()
        .zip(q.iter().zip(&dq))
        .map(|(&x, (&qq, &d))| {
            let f = qq - qq.powf(p);
            if x > 0.0 {
                f - (n - 1.0) / x * d
            } else {
                f / n
            }
        })
        .collect();
    let lq: Vec<f64> = r.iter().zip(q.iter().zip(&dq)).map(|(x, (qq, d))| c * qq + x * d).collect();
    // (ΛQ)' = (c+1)Q' + rQ''
    let dlq: Vec<f64> = r.iter().zip(dq.iter().zip(&d2q)).map(|(x, (d, dd))| (c + 1.0) * d + x * dd).collect();
    let l2q = r.iter().zip(lq.iter().zip(&dlq)).map(|(x, (l, dl))| c * l + x * dl).collect();
    Sampled { q, dq, lq, l2q }
}

fn sector_forms(fv: &FvForms, s: &Sampled, dim: usize, ell: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = dim as f64;
    let cen = fv.centrifugal(ell);
    let yq: Vec<f64> = fv.r.iter().zip(&s.dq).map(|(r, d)| r * d).collect();
    let pot = |c: f64| -> Vec<f64> {
        s.q.iter().zip(yq.iter().zip(&cen)).map(|(q, (y, k))| c * q.powf(4.0 / n - 1.0) * y + k).collect()
    };
    let v1 = pot(2.0 / n * (4.0 / n + 1.0));
    let v2 = pot(2.0 / n);
    let denom: Vec<f64> = fv.r.iter().zip(&cen).map(|(r, k)| (-r).exp() + k).collect();
    let start = if ell > 0 { 1 } else { 0 };
    let restrict = |m: DMatrix<f64>| m.view((start, start), (fv.len() - start, fv.len() - start)).into_owned();
    let a1 = restrict(fv.stiffness(&v1));
    let a2 = restrict(fv.stiffness(&v2));
    let b = restrict(fv.stiffness(&denom));
    let functional = |f: &[f64]| {
        DVector::from_iterator(fv.len() - start, (start..fv.len()).map(|i| fv.vol[i] * f[i]))
    };
    let r_q: Vec<f64> = fv.r.iter().zip(&s.q).map(|(r, q)| r * q).collect();
    let (c1, c2) = match (ell, dim) {
        (0, _) => (vec![functional(&s.q), functional(&s.lq)], vec![functional(&s.lq), functional(&s.l2q)]),
        (1, _) => (vec![functional(&r_q)], vec![functional(&s.dq)]),
        _ => (vec![], vec![]),
    };
    (a1, a2, b, c1, c2)
}

/// Minimizes H(ε,ε)/(∫|∇ε|² + ∫|ε|²e^{−r}) sector by sector at p = p_c.
pub fn verify_spectral_property(dim: usize, opts: SpectralOptions) -> Result<SpectralReport> {
    if !(1..=5).contains(&dim) {
        return config(format!("spectral check needs 1 ≤ N ≤ 5, got {dim}"));
    }
    let p = crate::critical_exponent(dim);
    let gs = solve_ground_state_with(p, dim, GroundStateOptions::default())?;
    let fv = FvForms::new(dim, opts.h, opts.r_max);
    if fv.len() < 50 {
        return config("spectral grid too coarse");
    }
    let s = sample_ground_state(&gs, &fv.r);
    let max_ell = if dim == 1 { 1 } else { opts.max_ell };
    let jobs: Vec<(usize, u8)> = (0..=max_ell).flat_map(|l| [(l, 1u8), (l, 2u8)]).collect();
    let results: Vec<Result<SectorMinimum>> = jobs
        .par_iter()
        .map(|&(ell, part)| {
            let (a1, a2, b, c1, c2) = sector_forms(&fv, &s, dim, ell);
            let (a, c) = if part == 1 { (a1, c1) } else { (a2, c2) };
            let minimum = constrained_min(&a, &b, &c)?;
            Ok(SectorMinimum { ell, part, constraints: c.len(), minimum })
        })
        .collect();
    let sectors: Vec<SectorMinimum> = results.into_iter().collect::<Result<_>>()?;
    let delta1 = sectors.iter().map(|s| s.minimum).fold(f64::INFINITY, f64::min);
    let monotone_in_l = [1u8, 2u8].iter().all(|&part| {
        let v: Vec<f64> = sectors.iter().filter(|s| s.part == part && s.ell >= 2).map(|s| s.minimum).collect();
        v.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    });
    let (_, a2, b, _, _) = sector_forms(&fv, &s, dim, 0);
    let unconstrained_l2_min = constrained_min(&a2, &b, &[])?;
    Ok(SpectralReport { dim, p, h: opts.h, r_max: opts.r_max, sectors, delta1, monotone_in_l, unconstrained_l2_min })
}

/// H_p(ε,ε) = ∫|∇ε|² + (p(p−1)/2)∫ y·∇Q Q^{p−2} ε₁² + ((p−1)/2)∫ y·∇Q Q^{p−2} ε₂².
pub fn virial_form_hp(eps: &RadialField, gs: &GroundState) -> Result<f64> {
    if !eps.grid.same_as(&gs.grid) {
        return Err(crate::LabError::Usage("ε must live on the ground-state grid".into()));
    }
    let p = gs.p;
    let yq = y_grad_q(gs);
    let w = gs.grid.weights();
    let mut pot = 0.0;
    for i in 0..w.len() {
        let base = yq[i] * gs.q[i].powf(p - 2.0);
        let v = eps.values[i];
        pot += w[i] * base * (p * (p - 1.0) / 2.0 * v.re * v.re + (p - 1.0) / 2.0 * v.im * v.im);
    }
    Ok(eps.gradient_norm2() + pot)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub dim: usize,
    /// Constrained minimum of H̃ / (∫|∇ε|² + ∫|ε|²e^{−r}) over radial ε.
    pub eigen_minimum: f64,
    /// Smallest ratio seen over random constrained samples.
    pub sample_minimum: f64,
    pub samples: usize,
}

/// Coercivity of H̃ = H − (ε₁, L_+D²Q)(ε₁, DQ)/|DQ|² on radial ε with
/// ε₁ ⊥ Q, |y|²Q and ε₂ ⊥ DQ, D²Q (the b → 0 form of the orthogonality conditions).
pub fn htilde_coercivity(dim: usize, samples: usize, seed: u64) -> Result<CoercivityReport> {
    let p = crate::critical_exponent(dim);
    let gs = solve_ground_state_with(p, dim, GroundStateOptions::default())?;
    let opts = SpectralOptions::default();
    let fv = FvForms::new(dim, opts.h, opts.r_max);
    let s = sample_ground_state(&gs, &fv.r);
    let (a1, a2, b, _, _) = sector_forms(&fv, &s, dim, 0);
    let m = fv.len();
    // at p_c, Λ = D
    let dq = DVector::from_column_slice(&s.lq);
    let d2q = DVector::from_column_slice(&s.l2q);
    let lplus_pot: Vec<f64> = s.q.iter().map(|q| 1.0 - p * q.powf(p - 1.0)).collect();
    let lp = fv.stiffness(&lplus_pot);
    let u = &lp * &d2q; // functional ε₁ ↦ (ε₁, L_+D²Q)
    let v = DVector::from_iterator(m, (0..m).map(|i| fv.vol[i] * s.lq[i]));
    let dq_norm2 = fv.dot(dq.as_slice(), dq.as_slice());
    let rank = (&u * v.transpose() + &v * u.transpose()) * (0.5 / dq_norm2);
    let mut a = DMatrix::zeros(2 * m, 2 * m);
    a.view_mut((0, 0), (m, m)).copy_from(&(a1 - rank));
    a.view_mut((m, m), (m, m)).copy_from(&a2);
    let mut bb = DMatrix::zeros(2 * m, 2 * m);
    bb.view_mut((0, 0), (m, m)).copy_from(&b);
    bb.view_mut((m, m), (m, m)).copy_from(&b);
    let pad = |f: &[f64], second: bool| {
        let mut c = DVector::zeros(2 * m);
        for i in 0..m {
            c[if second { m + i } else { i }] = fv.vol[i] * f[i];
        }
        c
    };
    let y2q: Vec<f64> = fv.r.iter().zip(&s.q).map(|(r, q)| r * r * q).collect();
    let cons = vec![pad(&s.q, false), pad(&y2q, false), pad(&s.lq, true), pad(&s.l2q, true)];
    let eigen_minimum = constrained_min(&a, &bb, &cons)?;

    // random smooth samples projected onto the constraint null space
    let cm = DMatrix::from_columns(&cons);
    let gram = cm.transpose() * &cm;
    let gram_inv = gram.try_inverse().ok_or_else(|| crate::LabError::Solver("singular constraint Gram".into()))?;
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut uniform = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    };
    let mut sample_minimum = f64::INFINITY;
    for _ in 0..samples {
        let mut x = DVector::zeros(2 * m);
        for part in 0..2 {
            for _ in 0..4 {
                let amp = uniform() * 2.0 - 1.0;
                let width = 0.5 + 4.0 * uniform();
                let center = 6.0 * uniform();
                for i in 0..m {
                    let z = (fv.r[i] - center) / width;
                    x[part * m + i] += amp * (-z * z).exp();
                }
            }
        }
        let x = &x - &cm * (&gram_inv * (cm.transpose() * &x));
        let num = x.dot(&(&a * &x));
        let den = x.dot(&(&bb * &x));
        if den > 0.0 {
            sample_minimum = sample_minimum.min(num / den);
        }
    }
    Ok(CoercivityReport { dim, eigen_minimum, sample_minimum, samples })
}
