use super::{Parity, RadialGrid, RightBc};
use crate::error::{LabError, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Complex samples of a radial function on a shared grid.
#[derive(Clone, Debug)]
pub struct RadialField {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<Complex64>,
    pub parity: Parity,
}

/// JSON form of a field with enough grid metadata to rebuild the nodes.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct FieldEnvelope {
    pub dim: usize,
    pub mapping: super::Mapping,
    pub xi_spacing: f64,
    pub nodes: usize,
    pub r: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::Usage(format!(
                "field has {} samples but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(LabError::Domain("non-finite field sample".into()));
        }
        Ok(Self { grid, values, parity: Parity::Even })
    }

    pub fn from_real(grid: Arc<RadialGrid>, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.r().iter().map(|&r| f(r)).collect();
        Self { grid, values, parity: Parity::Even }
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    fn check_same(&self, other: &RadialField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(LabError::Usage("fields live on different grids".into()))
        }
    }

    fn with_values(&self, values: Vec<Complex64>) -> Self {
        Self { grid: self.grid.clone(), values, parity: self.parity }
    }

    pub fn laplacian(&self) -> RadialField {
        let v = self.grid.op(self.parity, RightBc::Zero).laplacian(&self.values);
        self.with_values(v)
    }

    pub fn radial_derivative(&self) -> Vec<Complex64> {
        self.grid.op(self.parity, RightBc::Zero).d1(&self.values)
    }

    /// (Λf, Df) with Λf = (2/(p−1))f + r f', Df = (N/2)f + r f'.
    pub fn scale_generators(&self, p: f64) -> Result<(RadialField, RadialField)> {
        if !(p > 1.0) {
            return Err(LabError::Domain(format!("p = {p} must exceed 1")));
        }
        let n = self.grid.dim() as f64;
        let d = self.radial_derivative();
        let rd: Vec<Complex64> = self.grid.r().iter().zip(&d).map(|(r, v)| v * *r).collect();
        let lam = self.values.iter().zip(&rd).map(|(f, g)| f * (2.0 / (p - 1.0)) + g).collect();
        let dil = self.values.iter().zip(&rd).map(|(f, g)| f * (n / 2.0) + g).collect();
        Ok((self.with_values(lam), self.with_values(dil)))
    }

    /// ∫|f|².
    pub fn mass(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, v)| w * v.norm_sqr()).sum()
    }

    /// ∫|∇f|².
    pub fn gradient_norm2(&self) -> f64 {
        let d = self.radial_derivative();
        self.grid.weights().iter().zip(&d).map(|(w, v)| w * v.norm_sqr()).sum()
    }

    /// E(f) = ½∫|∇f|² − 1/(p+1) ∫|f|^{p+1}.
    pub fn energy(&self, p: f64) -> f64 {
        let pot: f64 = self
            .grid
            .weights()
            .iter()
            .zip(&self.values)
            .map(|(w, v)| w * v.norm().powf(p + 1.0))
            .sum();
        0.5 * self.gradient_norm2() - pot / (p + 1.0)
    }

    /// Complex pairing ∫ f ḡ.
    pub fn inner(&self, g: &RadialField) -> Result<Complex64> {
        self.check_same(g)?;
        Ok(self
            .grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(&g.values))
            .map(|(w, (a, b))| a * b.conj() * *w)
            .sum())
    }

    /// Real scalar product (f, g) = Re ∫ f ḡ = ∫ (f₁g₁ + f₂g₂).
    pub fn pairing(&self, g: &RadialField) -> Result<f64> {
        Ok(self.inner(g)?.re)
    }

    /// ∫|f|² e^{−r}.
    pub fn weighted_mass(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(self.grid.r()))
            .map(|(w, (v, r))| w * v.norm_sqr() * (-r).exp())
            .sum()
    }

    /// Im ∫ y·∇f f̄.
    pub fn virial_moment(&self) -> f64 {
        let d = self.radial_derivative();
        self.grid
            .weights()
            .iter()
            .zip(d.iter().zip(self.values.iter().zip(self.grid.r())))
            .map(|(w, (df, (f, r)))| w * r * (df * f.conj()).im)
            .sum()
    }

    /// First component of the momentum Im ∫ ∇f f̄ for a radial field.
    ///
    /// The radial part Im(f' f̄) r^{N−1} is paired with the angular average of
    /// y₁/|y| evaluated by a symmetric rule, which cancels exactly.
    pub fn momentum(&self) -> f64 {
        let d = self.radial_derivative();
        let radial: f64 = self
            .grid
            .weights()
            .iter()
            .zip(d.iter().zip(&self.values))
            .map(|(w, (df, f))| w * (df * f.conj()).im)
            .sum();
        // nodes cos θ_k = ±t_k symmetric about zero; weights equal in pairs
        let n_ang = 8;
        let mut ang = 0.0;
        for k in 0..n_ang {
            let t = ((k as f64 + 0.5) / n_ang as f64) * 2.0 - 1.0;
            ang += t / n_ang as f64;
        }
        radial * ang
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "re", "im"])?;
        for (r, v) in self.grid.r().iter().zip(&self.values) {
            wr.write_record([fmt(*r), fmt(v.re), fmt(v.im)])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn envelope(&self) -> FieldEnvelope {
        FieldEnvelope {
            dim: self.grid.dim(),
            mapping: self.grid.mapping(),
            xi_spacing: self.grid.xi_spacing(),
            nodes: self.grid.len(),
            r: self.grid.r().to_vec(),
            re: self.re(),
            im: self.im(),
        }
    }
}

/// Shortest round-trip representation; deterministic across runs.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gauss(dim: usize) -> RadialField {
        let g = RadialGrid::stretched(dim, 600, 20.0, 0.025).unwrap();
        RadialField::from_fn(g, |r| Complex64::new((-r * r / 2.0).exp(), 0.0))
    }

    #[test]
    fn gaussian_mass_is_sqrt_pi() {
        assert!((gauss(1).mass() - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn real_field_has_zero_momentum_and_virial() {
        let f = gauss(2);
        assert_eq!(f.virial_moment(), 0.0);
        assert!(f.momentum().abs() < 1e-15);
    }

    #[test]
    fn critical_exponent_gives_equal_generators() {
        let f = gauss(2);
        let (l, d) = f.scale_generators(3.0).unwrap();
        for (a, b) in l.values.iter().zip(&d.values) {
            assert_eq!(a, b);
        }
        assert!(f.scale_generators(1.0).is_err());
    }

    #[test]
    fn dilation_antisymmetric_1d() {
        let g = RadialGrid::stretched(1, 800, 40.0, 0.02).unwrap();
        let f = RadialField::from_fn(g.clone(), |r| Complex64::new(r * r * (-r).exp(), 0.0));
        let h = RadialField::from_fn(g, |r| Complex64::new((-r * r / 3.0).exp() * (1.0 + r), 0.0));
        let (_, df) = f.scale_generators(3.0).unwrap();
        let (_, dh) = h.scale_generators(3.0).unwrap();
        let lhs = df.pairing(&h).unwrap();
        let rhs = -f.pairing(&dh).unwrap();
        // r²e^{−r} has a non-smooth odd extension; second order suffices
        assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }

    #[test]
    fn chirped_gaussian_virial() {
        // f = e^{−r²/2 − i b r²/4}: Im∫ r f' f̄ = −(b/2)∫ r² |f|²
        let b = 0.3;
        let g = RadialGrid::stretched(3, 600, 20.0, 0.025).unwrap();
        let f = RadialField::from_fn(g.clone(), |r| Complex64::from_polar((-r * r / 2.0).exp(), -b * r * r / 4.0));
        let y2: Vec<f64> = g.r().iter().map(|r| r * r * (-r * r).exp()).collect();
        let expect = -(b / 2.0) * g.integrate(&y2);
        assert!((f.virial_moment() - expect).abs() < 1e-9);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = gauss(1);
        let b = gauss(2);
        assert!(a.pairing(&b).is_err());
    }

    #[test]
    fn csv_roundtrip_format() {
        let f = gauss(1);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("r,re,im\n0e0,1e0,0e0\n"));
    }

    proptest! {
        #[test]
        fn phase_invariance_of_mass_energy(theta in 0.0f64..6.2, dim in 1usize..=3) {
            let f = gauss(dim);
            let rot = RadialField { values: f.values.iter().map(|v| v * Complex64::from_polar(1.0, theta)).collect(), ..f.clone() };
            prop_assert!((rot.mass() - f.mass()).abs() < 1e-12);
            prop_assert!((rot.energy(3.0) - f.energy(3.0)).abs() < 1e-12);
        }

        #[test]
        fn generator_identity(p in 1.2f64..6.0, dim in 1usize..=5) {
            let f = gauss(dim);
            let (l, d) = f.scale_generators(p).unwrap();
            let sigma = dim as f64 / 2.0 - 2.0 / (p - 1.0);
            for ((a, b), v) in l.values.iter().zip(&d.values).zip(&f.values) {
                prop_assert!((b - (a + v * sigma)).norm() < 1e-12);
            }
        }
    }
}
