//! Numerical laboratory for self-similar blow-up of the slightly
//! L²-supercritical focusing NLS  i u_t = −Δu − |u|^{p−1}u  in radial symmetry.
//!
//! Exponent conventions: p_c = 1 + 4/N and σ_c = N/2 − 2/(p−1).

pub mod banded;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod groundstate;
pub mod nlse;
pub mod ode;
pub mod profiles;
pub mod radiation;
pub mod scalar;
pub mod spectral;
pub mod stats;

pub use error::{LabError, Result};

/// L²-critical exponent 1 + 4/N.
pub fn critical_exponent(dim: usize) -> f64 {
    1.0 + 4.0 / dim as f64
}

/// σ_c = N/2 − 2/(p−1).
pub fn sigma_c(p: f64, dim: usize) -> f64 {
    dim as f64 / 2.0 - 2.0 / (p - 1.0)
}

/// Inverse of [`sigma_c`]: the exponent p with the given σ_c.
pub fn exponent_for_sigma(sigma: f64, dim: usize) -> f64 {
    1.0 + 2.0 / (dim as f64 / 2.0 - sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_roundtrip() {
        for dim in 1..=5 {
            assert!(sigma_c(critical_exponent(dim), dim).abs() < 1e-15);
            let p = exponent_for_sigma(0.005, dim);
            assert!((sigma_c(p, dim) - 0.005).abs() < 1e-14);
            // alternative form N(p − p_c)/(2(p − 1))
            let alt = dim as f64 * (p - critical_exponent(dim)) / (2.0 * (p - 1.0));
            assert!((alt - 0.005).abs() < 1e-14);
        }
    }
}
