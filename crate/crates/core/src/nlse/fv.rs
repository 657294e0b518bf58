//! Finite-volume radial discretization used by the time-dependent solver.
//!
//! Node i owns the shell between the faces r_{i−½} and r_{i+½} (r_{−½} = 0),
//! so Σ W_i |v_i|² is the discrete mass and the Laplacian is W-symmetric with
//! zero flux through the outer face.

use crate::banded::BandMatrix;
use crate::error::{config, Result};
use crate::grid::{sphere_area, RadialGrid};
use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct FvGrid {
    dim: usize,
    r: Vec<f64>,
    /// Shell volumes.
    w: Vec<f64>,
    /// ω r_f^{N−1}/(r_{i+1} − r_i) on interior faces.
    kappa: Vec<f64>,
    /// ω r_f^N / 2 on interior faces.
    alpha: Vec<f64>,
}

impl FvGrid {
    pub fn from_nodes(dim: usize, r: Vec<f64>) -> Result<Self> {
        if r.len() < 4 || r[0] != 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return config("finite-volume nodes must start at 0 and increase strictly");
        }
        let n = r.len();
        let om = sphere_area(dim);
        let nd = dim as i32;
        let mut faces = Vec::with_capacity(n + 1);
        faces.push(0.0);
        for i in 0..n - 1 {
            faces.push(0.5 * (r[i] + r[i + 1]));
        }
        faces.push(r[n - 1] + 0.5 * (r[n - 1] - r[n - 2]));
        let w = (0..n).map(|i| om * (faces[i + 1].powi(nd) - faces[i].powi(nd)) / dim as f64).collect();
        let kappa = (0..n - 1).map(|i| om * faces[i + 1].powi(nd - 1) / (r[i + 1] - r[i])).collect();
        let alpha = (0..n - 1).map(|i| om * faces[i + 1].powi(nd) / 2.0).collect();
        Ok(Self { dim, r, w, kappa, alpha })
    }

    /// Sinh-stretched nodes with spacing `h0` at the origin and `n` intervals up to `r_max`.
    pub fn stretched(dim: usize, n: usize, r_max: f64, h0: f64) -> Result<Self> {
        let g = RadialGrid::stretched(dim, n, r_max, h0)?;
        Self::from_nodes(dim, g.r().to_vec())
    }

    pub fn uniform(dim: usize, n: usize, r_max: f64) -> Result<Self> {
        Self::from_nodes(dim, (0..=n).map(|i| r_max * i as f64 / n as f64).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.r.len()
    }
    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
    pub fn r(&self) -> &[f64] {
        &self.r
    }
    pub fn volumes(&self) -> &[f64] {
        &self.w
    }
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }
    pub fn h0(&self) -> f64 {
        self.r[1]
    }

    pub fn laplacian(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut f = vec![Complex64::new(0.0, 0.0); v.len()];
        for i in 0..v.len() - 1 {
            let d = (v[i + 1] - v[i]) * self.kappa[i];
            f[i] += d;
            f[i + 1] -= d;
        }
        f.iter_mut().zip(&self.w).for_each(|(x, w)| *x /= *w);
        f
    }

    /// Dilation generator D = N/2 + r∂_r, skew-adjoint in the discrete inner product.
    pub fn dilation(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut f = vec![Complex64::new(0.0, 0.0); v.len()];
        for i in 0..v.len() - 1 {
            f[i] += v[i + 1] * self.alpha[i];
            f[i + 1] -= v[i] * self.alpha[i];
        }
        f.iter_mut().zip(&self.w).for_each(|(x, w)| *x /= *w);
        f
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.w).map(|(a, w)| a * w).sum()
    }

    pub fn mass(&self, v: &[Complex64]) -> f64 {
        v.iter().zip(&self.w).map(|(a, w)| a.norm_sqr() * w).sum()
    }

    /// Re Σ W u v̄.
    pub fn pairing(&self, u: &[Complex64], v: &[Complex64]) -> f64 {
        (0..u.len()).map(|i| self.w[i] * (u[i] * v[i].conj()).re).sum()
    }

    pub fn gradient_norm2(&self, v: &[Complex64]) -> f64 {
        (0..v.len() - 1).map(|i| self.kappa[i] * (v[i + 1] - v[i]).norm_sqr()).sum()
    }

    pub fn energy(&self, v: &[Complex64], p: f64) -> f64 {
        let pot: f64 = v.iter().zip(&self.w).map(|(a, w)| w * a.norm().powf(p + 1.0)).sum();
        0.5 * self.gradient_norm2(v) - pot / (p + 1.0)
    }

    /// Σ over interior faces of ω r_f^{N−1} g(r_f) Im((v_{i+1} − v_i) v̄_f),
    /// the discrete Im∫ g ∂_r v v̄ with face-averaged v.
    pub fn flux_pairing(&self, v: &[Complex64], g: impl Fn(f64) -> f64) -> f64 {
        (0..v.len() - 1)
            .map(|i| {
                let rf = 0.5 * (self.r[i] + self.r[i + 1]);
                let avg = (v[i] + v[i + 1]) * 0.5;
                self.kappa[i] * (self.r[i + 1] - self.r[i]) * g(rf) * ((v[i + 1] - v[i]) * avg.conj()).im
            })
            .sum()
    }

    /// ∫_{|y| ≤ radius} |v|², taking the cut shell in proportion to its volume.
    pub fn ball_mass(&self, v: &[Complex64], radius: f64) -> f64 {
        let om = sphere_area(self.dim);
        let nd = self.dim as i32;
        let mut acc = 0.0;
        let mut inner = 0.0f64;
        for i in 0..self.len() {
            let outer = if i + 1 < self.len() { 0.5 * (self.r[i] + self.r[i + 1]) } else { f64::INFINITY };
            if outer <= radius {
                acc += self.w[i] * v[i].norm_sqr();
            } else {
                acc += om * (radius.powi(nd) - inner.powi(nd)) / self.dim as f64 * v[i].norm_sqr();
                break;
            }
            inner = outer;
        }
        acc
    }

    /// Piecewise-linear interpolation (constant continuation to the left of r_1 is exact by symmetry).
    pub fn interpolate(&self, v: &[Complex64], x: f64) -> Complex64 {
        if x >= self.r_max() {
            return if x == self.r_max() { v[v.len() - 1] } else { Complex64::new(0.0, 0.0) };
        }
        let j = self.r.partition_point(|&r| r <= x).saturating_sub(1);
        let t = (x - self.r[j]) / (self.r[j + 1] - self.r[j]);
        v[j] * (1.0 - t) + v[j + 1] * t
    }

    /// Matrix of the operator iΔ − b_f D + diag(c − damping).
    fn linear_operator(&self, b_frame: f64, c: Complex64, damping: &[f64]) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let n = self.len();
        let i = Complex64::i();
        let mut diag: Vec<Complex64> = (0..n).map(|k| c - damping[k]).collect();
        let mut up = vec![Complex64::new(0.0, 0.0); n - 1];
        let mut lo = vec![Complex64::new(0.0, 0.0); n - 1];
        for k in 0..n - 1 {
            let kap = self.kappa[k];
            diag[k] -= i * kap / self.w[k];
            diag[k + 1] -= i * kap / self.w[k + 1];
            up[k] = (i * kap - b_frame * self.alpha[k]) / self.w[k];
            lo[k] = (i * kap + b_frame * self.alpha[k]) / self.w[k + 1];
        }
        (diag, up, lo)
    }

    /// Crank–Nicolson step of length `dt` for v_t = (iΔ − b_f D + c − damping) v.
    pub fn crank_nicolson(&self, v: &mut [Complex64], dt: f64, b_frame: f64, c: Complex64, damping: &[f64]) -> Result<()> {
        let n = self.len();
        let (diag, up, lo) = self.linear_operator(b_frame, c, damping);
        let h = 0.5 * dt;
        let mut rhs: Vec<Complex64> = (0..n).map(|k| v[k] + diag[k] * v[k] * h).collect();
        for k in 0..n - 1 {
            rhs[k] += up[k] * v[k + 1] * h;
            rhs[k + 1] += lo[k] * v[k] * h;
        }
        let mut a = BandMatrix::<Complex64>::zeros(n, 1, 1);
        for k in 0..n {
            a.set(k, k, Complex64::new(1.0, 0.0) - diag[k] * h);
        }
        for k in 0..n - 1 {
            a.set(k, k + 1, -up[k] * h);
            a.set(k + 1, k, -lo[k] * h);
        }
        a.factor()?.solve_in_place(&mut rhs);
        v.copy_from_slice(&rhs);
        Ok(())
    }
}

/// Exact flow of v_t = i|v|^{p−1}v over `dt`.
pub fn phase_rotation(v: &mut [Complex64], p: f64, dt: f64) {
    for x in v.iter_mut() {
        let a = x.norm().powf(p - 1.0) * dt;
        *x *= Complex64::from_polar(1.0, a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(g: &FvGrid) -> Vec<Complex64> {
        g.r().iter().map(|r| Complex64::new((-r * r).exp(), 0.3 * r * r)).collect()
    }

    #[test]
    fn shell_volumes_sum_to_ball() {
        for dim in 1..=3 {
            let g = FvGrid::stretched(dim, 400, 50.0, 0.02).unwrap();
            let faces_end = g.r_max() + 0.5 * (g.r_max() - g.r()[g.len() - 2]);
            let ball = sphere_area(dim) * faces_end.powi(dim as i32) / dim as f64;
            let total: f64 = g.volumes().iter().sum();
            assert!((total / ball - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn operators_are_consistent() {
        // Δ(e^{−r²}) = (4r² − 2N) e^{−r²};  D(e^{−r²}) = (N/2 − 2r²) e^{−r²}
        for dim in 1..=3 {
            let n = dim as f64;
            let mut errs = vec![];
            for &m in &[400usize, 800] {
                let g = FvGrid::uniform(dim, m, 8.0).unwrap();
                let v: Vec<Complex64> = g.r().iter().map(|r| Complex64::new((-r * r).exp(), 0.0)).collect();
                let lap = g.laplacian(&v);
                let dil = g.dilation(&v);
                let e = (1..m - 10)
                    .map(|i| {
                        let r = g.r()[i];
                        let ex = (4.0 * r * r - 2.0 * n) * (-r * r).exp();
                        let ed = (n / 2.0 - 2.0 * r * r) * (-r * r).exp();
                        (lap[i].re - ex).abs().max((dil[i].re - ed).abs())
                    })
                    .fold(0.0, f64::max);
                errs.push(e);
            }
            assert!(errs[1] < 0.3 * errs[0], "dim {dim}: {errs:?}");
            assert!(errs[1] < 1e-3);
        }
    }

    #[test]
    fn discrete_laplacian_is_symmetric_and_dilation_skew() {
        let g = FvGrid::stretched(2, 300, 40.0, 0.05).unwrap();
        let u = gaussian(&g);
        let v: Vec<Complex64> = g.r().iter().map(|r| Complex64::new(1.0 / (1.0 + r * r), (-r).exp())).collect();
        let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
            (0..a.len()).map(|i| a[i] * b[i].conj() * g.volumes()[i]).sum()
        };
        let l1 = dot(&g.laplacian(&u), &v);
        let l2 = dot(&u, &g.laplacian(&v));
        assert!((l1 - l2).norm() < 1e-12 * l1.norm());
        let d1 = dot(&g.dilation(&u), &v);
        let d2 = dot(&u, &g.dilation(&v));
        assert!((d1 + d2).norm() < 1e-12 * d1.norm());
    }

    #[test]
    fn linear_step_is_unitary() {
        let g = FvGrid::stretched(1, 500, 60.0, 0.02).unwrap();
        let mut v = gaussian(&g);
        let zero = vec![0.0; g.len()];
        let m0 = g.mass(&v);
        for _ in 0..100 {
            g.crank_nicolson(&mut v, 0.01, 0.4, Complex64::new(0.0, -1.0), &zero).unwrap();
        }
        assert!((g.mass(&v) / m0 - 1.0).abs() < 1e-12 * 100.0);
        let e0 = g.gradient_norm2(&gaussian(&g));
        let mut w = gaussian(&g);
        for _ in 0..100 {
            g.crank_nicolson(&mut w, 0.01, 0.0, Complex64::new(0.0, 0.0), &zero).unwrap();
        }
        assert!((g.gradient_norm2(&w) / e0 - 1.0).abs() < 1e-11);
    }

    #[test]
    fn rotation_preserves_modulus() {
        let g = FvGrid::uniform(1, 50, 5.0).unwrap();
        let mut v = gaussian(&g);
        let before: Vec<f64> = v.iter().map(|x| x.norm()).collect();
        phase_rotation(&mut v, 3.0, 0.7);
        for (a, b) in v.iter().zip(&before) {
            assert!((a.norm() - b).abs() < 1e-15);
        }
    }
}
