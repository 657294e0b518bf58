//! Radial meshes on ℝ^N, high-order finite differences and quadrature.
//!
//! Nodes are images r_i = g(ξ_i) of a uniform ξ-grid under an odd map g with
//! g'(0) = 1, so even/odd reflection through the origin is exact in ξ.

mod fd;
mod field;
mod quad;

pub use fd::{fornberg, lagrange_weights, DiffOp, Parity, RightBc, StencilRow};
pub use field::{FieldEnvelope, RadialField};
pub use quad::gregory_weights;

use crate::error::{config, Result};
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mapping {
    Uniform,
    /// r = c·sinh(ξ/c); spacing grows geometrically once r ≫ c.
    Sinh { scale: f64 },
}

impl Mapping {
    pub fn r(&self, xi: f64) -> f64 {
        match *self {
            Mapping::Uniform => xi,
            Mapping::Sinh { scale } => scale * (xi / scale).sinh(),
        }
    }
    pub fn dr(&self, xi: f64) -> f64 {
        match *self {
            Mapping::Uniform => 1.0,
            Mapping::Sinh { scale } => (xi / scale).cosh(),
        }
    }
    pub fn d2r(&self, xi: f64) -> f64 {
        match *self {
            Mapping::Uniform => 0.0,
            Mapping::Sinh { scale } => (xi / scale).sinh() / scale,
        }
    }
    pub fn xi(&self, r: f64) -> f64 {
        match *self {
            Mapping::Uniform => r,
            Mapping::Sinh { scale } => scale * (r / scale).asinh(),
        }
    }
}

/// Area of the unit sphere in ℝ^N (ω_1 = 2).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        4 => 2.0 * std::f64::consts::PI.powi(2),
        5 => 8.0 * std::f64::consts::PI.powi(2) / 3.0,
        _ => panic!("dimension {dim} outside 1..=5"),
    }
}

pub const DEFAULT_FD_ORDER: usize = 6;

#[derive(Debug)]
pub struct RadialGrid {
    dim: usize,
    mapping: Mapping,
    xi_h: f64,
    order: usize,
    r: Vec<f64>,
    dr: Vec<f64>,
    d2r: Vec<f64>,
    weights: Vec<f64>,
    ops: [OnceLock<DiffOp>; 4],
}

impl RadialGrid {
    fn build(dim: usize, mapping: Mapping, n: usize, xi_h: f64, order: usize) -> Result<Arc<Self>> {
        if !(1..=5).contains(&dim) {
            return config(format!("dimension N = {dim} outside 1..=5"));
        }
        if n < 4 {
            return config(format!("grid too coarse: {} nodes (need at least 5)", n + 1));
        }
        if !matches!(order, 2 | 4 | 6 | 8) {
            return config(format!("finite-difference order {order} not in {{2,4,6,8}}"));
        }
        let xs: Vec<f64> = (0..=n).map(|i| i as f64 * xi_h).collect();
        let r: Vec<f64> = xs.iter().map(|&x| mapping.r(x)).collect();
        let dr: Vec<f64> = xs.iter().map(|&x| mapping.dr(x)).collect();
        let d2r: Vec<f64> = xs.iter().map(|&x| mapping.d2r(x)).collect();
        let omega = sphere_area(dim);
        let g = gregory_weights(n, true, true);
        let weights = (0..=n)
            .map(|i| xi_h * g[i] * dr[i] * omega * r[i].powi(dim as i32 - 1))
            .collect();
        Ok(Arc::new(Self {
            dim,
            mapping,
            xi_h,
            order,
            r,
            dr,
            d2r,
            weights,
            ops: Default::default(),
        }))
    }

    /// Uniform grid with `n` intervals on [0, r_max].
    pub fn uniform(dim: usize, n: usize, r_max: f64) -> Result<Arc<Self>> {
        Self::uniform_with_order(dim, n, r_max, DEFAULT_FD_ORDER)
    }

    pub fn uniform_with_order(dim: usize, n: usize, r_max: f64, order: usize) -> Result<Arc<Self>> {
        if !(r_max > 0.0 && r_max.is_finite()) {
            return config(format!("r_max = {r_max} must be positive"));
        }
        Self::build(dim, Mapping::Uniform, n, r_max / n.max(1) as f64, order)
    }

    /// Uniform grid of spacing close to `h` reaching at least `r_max`.
    pub fn with_spacing(dim: usize, h: f64, r_max: f64) -> Result<Arc<Self>> {
        let n = (r_max / h).ceil() as usize;
        Self::build(dim, Mapping::Uniform, n, h, DEFAULT_FD_ORDER)
    }

    /// Sinh-stretched grid: spacing `h0` at the origin, `n` intervals, last node at `r_max`.
    pub fn stretched(dim: usize, n: usize, r_max: f64, h0: f64) -> Result<Arc<Self>> {
        Self::stretched_with_order(dim, n, r_max, h0, DEFAULT_FD_ORDER)
    }

    pub fn stretched_with_order(dim: usize, n: usize, r_max: f64, h0: f64, order: usize) -> Result<Arc<Self>> {
        let l = n as f64 * h0;
        if !(h0 > 0.0) || n < 4 {
            return config("stretched grid needs h0 > 0 and at least 5 nodes");
        }
        if l >= r_max {
            return Self::uniform_with_order(dim, n, r_max, order);
        }
        // c·sinh(L/c) decreases to L as c → ∞; bisect in ln c
        let f = |c: f64| c * (l / c).sinh() - r_max;
        let (mut lo, mut hi) = (l / 700.0, l * 1e6);
        if f(lo) < 0.0 {
            return config("stretched grid: r_max too large for n·h0");
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::build(dim, Mapping::Sinh { scale: (lo * hi).sqrt() }, n, h0, order)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn mapping(&self) -> Mapping {
        self.mapping
    }
    pub fn xi_spacing(&self) -> f64 {
        self.xi_h
    }
    pub fn fd_order(&self) -> usize {
        self.order
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
    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }
    pub fn jacobian(&self) -> &[f64] {
        &self.dr
    }
    /// Quadrature weights for ∫_{ℝ^N} f(|y|) dy.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Largest local spacing r_{i+1} − r_i.
    pub fn max_spacing(&self) -> f64 {
        self.r.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn same_as(&self, other: &RadialGrid) -> bool {
        std::ptr::eq(self, other)
            || (self.dim == other.dim && self.mapping == other.mapping && self.xi_h == other.xi_h && self.r.len() == other.r.len())
    }

    /// Cached stencils for the default order.
    pub fn op(&self, parity: Parity, right: RightBc) -> &DiffOp {
        let slot = match (parity, right) {
            (Parity::Even, RightBc::Zero) => 0,
            (Parity::Odd, RightBc::Zero) => 1,
            (Parity::Even, RightBc::OneSided) => 2,
            (Parity::Odd, RightBc::OneSided) => 3,
        };
        self.ops[slot].get_or_init(|| self.diff_op(self.order, parity, right))
    }

    pub fn diff_op(&self, order: usize, parity: Parity, right: RightBc) -> DiffOp {
        DiffOp::build(self.xi_h, &self.r, &self.dr, &self.d2r, self.dim, order, parity, right)
    }

    /// Banded matrix of  lap·Δ + adv_i·∂_r + diag_i  on this grid.
    pub fn assemble<T: crate::scalar::Scalar>(
        &self,
        op: &DiffOp,
        lap: T,
        adv: Option<&[T]>,
        diag: &[T],
    ) -> crate::banded::BandMatrix<T> {
        let hw = op.half_width();
        let n = self.len();
        let mut a = crate::banded::BandMatrix::zeros(n, hw, hw);
        for (i, row) in op.rows.iter().enumerate() {
            for (t, w) in row.lap.iter().enumerate() {
                a.add(i, row.start + t, lap * *w);
            }
            if let Some(c) = adv {
                for (t, w) in row.d1.iter().enumerate() {
                    a.add(i, row.start + t, c[i] * *w);
                }
            }
            a.add(i, i, diag[i]);
        }
        a
    }

    pub fn even(&self) -> &DiffOp {
        self.op(Parity::Even, RightBc::Zero)
    }

    /// ∫ f over ℝ^N for real samples.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Real pairing ∫ f g.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| w * a * b).sum()
    }

    pub fn norm2(&self, f: &[f64]) -> f64 {
        self.dot(f, f)
    }

    /// Interpolates samples at radius `r` with local Lagrange polynomials in ξ.
    /// Beyond r_max returns zero.
    pub fn interpolate<T: crate::scalar::Scalar>(&self, f: &[T], parity: Parity, r: f64) -> T {
        let r = r.abs();
        if r > self.r_max() {
            return T::zero();
        }
        let m = self.len() as isize - 1;
        let xi = self.mapping.xi(r) / self.xi_h;
        let k = (self.order / 2 + 1) as isize;
        let i0 = xi.floor() as isize;
        let (mut lo, mut hi) = (i0 - k + 1, i0 + k);
        if hi > m {
            lo -= hi - m;
            hi = m;
        }
        let xs: Vec<f64> = (lo..=hi).map(|j| j as f64).collect();
        let w = lagrange_weights(xi, &xs);
        let mut acc = T::zero();
        for (t, j) in (lo..=hi).enumerate() {
            let (col, s) = if j < 0 { ((-j) as usize, parity.sign()) } else { (j as usize, 1.0) };
            acc += f[col] * (w[t] * s);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gamma_fn(n: usize) -> f64 {
        (1..n).map(|k| k as f64).product()
    }

    #[test]
    fn sphere_areas() {
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn gaussian_mass_1d() {
        let g = RadialGrid::stretched(1, 800, 20.0, 0.02).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| (-r * r / 2.0).exp()).collect();
        let m = g.norm2(&f);
        assert!((m - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exponential_moments_all_dimensions() {
        for dim in 1..=5 {
            let g = RadialGrid::stretched(dim, 1500, 60.0, 0.02).unwrap();
            let f: Vec<f64> = g.r().iter().map(|r| (-r).exp()).collect();
            // ∫_{ℝ^N} e^{-|y|} = ω_N Γ(N)
            let exact = sphere_area(dim) * gamma_fn(dim);
            let rel = (g.integrate(&f) - exact).abs() / exact;
            // e^{-r} has a kink at the origin for odd extensions; still high order
            assert!(rel < 1e-8, "N={dim}: rel {rel}");
        }
    }

    #[test]
    fn laplacian_gaussian_3d() {
        let g = RadialGrid::stretched(3, 600, 15.0, 0.02).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| (-r * r / 2.0).exp()).collect();
        let lap = g.even().laplacian(&f);
        let err = g
            .r()
            .iter()
            .zip(&lap)
            .map(|(r, l)| (l - (r * r - 3.0) * (-r * r / 2.0).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn laplacian_of_constant_vanishes_inside() {
        let g = RadialGrid::uniform(2, 100, 10.0).unwrap();
        let f = vec![1.0; g.len()];
        let lap = g.op(Parity::Even, RightBc::OneSided).laplacian(&f);
        assert!(lap.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn laplacian_sech_1d() {
        let g = RadialGrid::uniform(1, 1000, 20.0).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| 1.0 / r.cosh()).collect();
        let lap = g.even().laplacian(&f);
        for (r, l) in g.r().iter().zip(&lap).filter(|(r, _)| **r < 15.0) {
            let s = 1.0 / r.cosh();
            assert!((l - (s - 2.0 * s * s * s)).abs() < 1e-8);
        }
    }

    fn lap_error(order: usize, n: usize) -> f64 {
        let g = RadialGrid::stretched_with_order(2, n, 12.0, 12.0 / n as f64 * 0.6, order).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| (-r * r / 2.0).exp()).collect();
        let lap = g.diff_op(order, Parity::Even, RightBc::Zero).laplacian(&f);
        g.r()
            .iter()
            .zip(&lap)
            .map(|(r, l)| (l - (r * r - 2.0) * (-r * r / 2.0).exp()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_order_refinement_factor_four() {
        let ratio = lap_error(2, 200) / lap_error(2, 400);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn interpolation_reproduces_smooth_function() {
        let g = RadialGrid::stretched(3, 400, 20.0, 0.03).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| (-r * r / 4.0).exp()).collect();
        for &r in &[0.0, 0.011, 0.5, 3.3333, 7.9, 19.99] {
            let v = g.interpolate(&f, Parity::Even, r);
            assert!((v - (-r * r / 4.0_f64).exp()).abs() < 1e-9, "r={r}");
        }
    }

    proptest! {
        #[test]
        fn laplacian_self_adjoint(dim in 1usize..=5, a in 0.3f64..2.0, c in 0.3f64..2.0) {
            let g = RadialGrid::stretched(dim, 500, 20.0, 0.03).unwrap();
            let f: Vec<f64> = g.r().iter().map(|r| (-a * r * r).exp()).collect();
            let h: Vec<f64> = g.r().iter().map(|r| (1.0 + r * r) * (-c * r * r).exp()).collect();
            let lf = g.even().laplacian(&f);
            let lh = g.even().laplacian(&h);
            let s1 = g.dot(&lf, &h);
            let s2 = g.dot(&f, &lh);
            prop_assert!((s1 - s2).abs() <= 1e-7 * (s1.abs() + 1.0));
        }

        #[test]
        fn quadrature_exact_on_gaussians(dim in 1usize..=5, a in 0.2f64..3.0) {
            let g = RadialGrid::stretched(dim, 600, 30.0, 0.025).unwrap();
            let f: Vec<f64> = g.r().iter().map(|r| (-a * r * r).exp()).collect();
            let exact = (std::f64::consts::PI / a).powf(dim as f64 / 2.0);
            let rel = (g.integrate(&f) - exact).abs() / exact;
            prop_assert!(rel < 1e-10, "rel {}", rel);
        }
    }
}
