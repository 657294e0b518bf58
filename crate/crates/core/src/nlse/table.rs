//! Tabulated leading-order profiles Q̃_b = P̃_b e^{−ibr²/4} for the modulation decomposition.

use crate::error::{config, LabError, Result};
use crate::grid::{Parity, RadialField, RadialGrid};
use crate::groundstate::GroundState;
use crate::profiles::{lambda_c, solve_p0, BaseProfile, ProfileOptions};
use num_complex::Complex64;
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct ProfileEntry {
    pub b: f64,
    pub r_b: f64,
    pub grid: Arc<RadialGrid>,
    pub q: Vec<Complex64>,
    pub lq: Vec<Complex64>,
    pub l2q: Vec<Complex64>,
    /// ∫|Q̃_b|² − ∫Q_p².
    pub mass_excess: f64,
    /// ∫|∇Q̃_b|² + ∫|Q̃_b|² e^{−r}.
    pub local_norm: f64,
}

impl ProfileEntry {
    pub fn from_base(base: &BaseProfile, gs: &GroundState) -> Result<Self> {
        let g = base.grid.clone();
        let phase = base.phase();
        let q: Vec<Complex64> = base.ptilde.iter().zip(&phase).map(|(a, e)| e * *a).collect();
        let lq = lambda_c(&g, base.p, &q);
        let l2q = lambda_c(&g, base.p, &lq);
        let f = RadialField::new(g.clone(), q.clone())?;
        let weighted: f64 = g.weights().iter().zip(g.r()).zip(&q).map(|((w, r), v)| w * v.norm_sqr() * (-r).exp()).sum();
        Ok(Self {
            b: base.b,
            r_b: base.r_b.min(g.r_max()),
            mass_excess: f.mass() - gs.mass,
            local_norm: f.gradient_norm2() + weighted,
            grid: g,
            q,
            lq,
            l2q,
        })
    }

    fn at(&self, z: f64) -> [Complex64; 3] {
        if z > self.r_b {
            return [Complex64::new(0.0, 0.0); 3];
        }
        let g = &self.grid;
        [
            g.interpolate(&self.q, Parity::Even, z),
            g.interpolate(&self.lq, Parity::Even, z),
            g.interpolate(&self.l2q, Parity::Even, z),
        ]
    }
}

/// Q̃_b, ΛQ̃_b, Λ²Q̃_b sampled at a set of radii.
#[derive(Clone, Debug, Default)]
pub struct ProfileSample {
    pub q: Vec<Complex64>,
    pub lq: Vec<Complex64>,
    pub l2q: Vec<Complex64>,
}

/// Profiles on a uniform b-grid, interpolated in b by cubic Lagrange polynomials.
#[derive(Clone, Debug)]
pub struct ProfileTable {
    pub p: f64,
    pub dim: usize,
    pub entries: Vec<ProfileEntry>,
}

impl ProfileTable {
    pub fn build(gs: &GroundState, b_min: f64, b_max: f64, db: f64, opts: &ProfileOptions) -> Result<Self> {
        if !(b_min > 0.0 && b_max > b_min + 3.0 * db && db > 0.0) {
            return config(format!("profile table needs 0 < b_min < b_max − 3db (got {b_min}, {b_max}, {db})"));
        }
        let n = ((b_max - b_min) / db).round() as usize;
        let bs: Vec<f64> = (0..=n).map(|k| b_min + db * k as f64).collect();
        let entries = bs
            .par_iter()
            .map(|&b| ProfileEntry::from_base(&solve_p0(b, gs, opts)?, gs))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p: gs.p, dim: gs.dim, entries })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.entries[0].b, self.entries.last().unwrap().b)
    }

    fn stencil(&self, b: f64) -> Result<(usize, [f64; 4])> {
        let (lo, hi) = self.range();
        if !(b >= lo && b <= hi) {
            return Err(LabError::Range(format!("b = {b} outside the profile table [{lo}, {hi}]")));
        }
        let db = self.entries[1].b - self.entries[0].b;
        let n = self.entries.len();
        let k = (((b - lo) / db).floor() as usize).clamp(1, n - 3) - 1;
        let x = (b - self.entries[k].b) / db;
        let mut w = [1.0; 4];
        for (i, wi) in w.iter_mut().enumerate() {
            for j in 0..4 {
                if i != j {
                    *wi *= (x - j as f64) / (i as f64 - j as f64);
                }
            }
        }
        Ok((k, w))
    }

    /// Largest support radius among the entries used at `b`.
    pub fn support(&self, b: f64) -> Result<f64> {
        let (k, _) = self.stencil(b)?;
        Ok(self.entries[k..k + 4].iter().map(|e| e.r_b).fold(0.0, f64::max))
    }

    pub fn sample(&self, b: f64, z: &[f64]) -> Result<ProfileSample> {
        let (k, w) = self.stencil(b)?;
        let mut out = ProfileSample {
            q: vec![Complex64::new(0.0, 0.0); z.len()],
            lq: vec![Complex64::new(0.0, 0.0); z.len()],
            l2q: vec![Complex64::new(0.0, 0.0); z.len()],
        };
        for (j, e) in self.entries[k..k + 4].iter().enumerate() {
            for (i, &x) in z.iter().enumerate() {
                let [a, c, d] = e.at(x);
                out.q[i] += a * w[j];
                out.lq[i] += c * w[j];
                out.l2q[i] += d * w[j];
            }
        }
        Ok(out)
    }

    fn scalar(&self, b: f64, f: impl Fn(&ProfileEntry) -> f64) -> Result<f64> {
        let (k, w) = self.stencil(b)?;
        Ok((0..4).map(|j| w[j] * f(&self.entries[k + j])).sum())
    }

    pub fn mass_excess(&self, b: f64) -> Result<f64> {
        self.scalar(b, |e| e.mass_excess)
    }

    pub fn local_norm(&self, b: f64) -> Result<f64> {
        self.scalar(b, |e| e.local_norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;

    #[test]
    fn table_reproduces_nodes_and_interpolates_smoothly() {
        let gs = solve_ground_state(3.0, 1).unwrap();
        let opts = ProfileOptions::default();
        let t = ProfileTable::build(&gs, 0.3, 0.5, 0.02, &opts).unwrap();
        let z: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        let at_node = t.sample(0.36, &z).unwrap();
        let e = &t.entries[3];
        for (i, &x) in z.iter().enumerate() {
            assert!((at_node.q[i] - e.at(x)[0]).norm() < 1e-12);
        }
        // midpoint against a directly computed profile
        let mid = ProfileEntry::from_base(&solve_p0(0.37, &gs, &opts).unwrap(), &gs).unwrap();
        let s = t.sample(0.37, &z).unwrap();
        let err = z.iter().enumerate().map(|(i, &x)| (s.q[i] - mid.at(x)[0]).norm()).fold(0.0, f64::max);
        assert!(err < 1e-4, "interpolation error {err}");
        assert!(t.sample(0.2, &z).is_err());
    }
}
