//! Banded matrices and LU factorization with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: column-major band with `kl`
//! extra rows on top to absorb pivoting fill-in.

use crate::error::{solver, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct BandMatrix<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    ab: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ldab, ab: vec![T::zero(); ldab * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab + self.kl + self.ku + i - j
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    /// Adds `v` to entry (i, j); panics if the entry is outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band kl={} ku={}", self.kl, self.ku);
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i},{j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] = v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::zero(); self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            let mut acc = T::zero();
            for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
                acc += self.ab[self.idx(i, j)] * *xj;
            }
            *yi = acc;
        }
        y
    }

    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let kl = self.kl;
        let kv = self.kl + self.ku;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = -1.0;
            for t in 0..=km {
                let m = self.ab[self.idx(j + t, j)].modulus();
                if m > best {
                    best = m;
                    jp = t;
                }
            }
            ipiv[j] = j + jp;
            let piv = self.ab[self.idx(j + jp, j)];
            if piv.modulus() == 0.0 || !piv.is_finite_value() {
                return solver(format!("banded LU: zero or non-finite pivot in column {j}"));
            }
            ju = ju.max((j + self.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let a = self.idx(j, c);
                    let b = self.idx(j + jp, c);
                    self.ab.swap(a, b);
                }
            }
            let inv = T::from_real(1.0) / self.ab[self.idx(j, j)];
            for t in 1..=km {
                let k = self.idx(j + t, j);
                self.ab[k] = self.ab[k] * inv;
            }
            for c in (j + 1)..=ju {
                let ujc = self.ab[self.idx(j, c)];
                if ujc == T::zero() {
                    continue;
                }
                for t in 1..=km {
                    let l = self.ab[self.idx(j + t, j)];
                    let k = self.idx(j + t, c);
                    self.ab[k] -= l * ujc;
                }
            }
        }
        let _ = kv;
        Ok(BandLu { m: self, ipiv })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu<T: Scalar> {
    m: BandMatrix<T>,
    ipiv: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.m.n;
        assert_eq!(b.len(), n);
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        for j in 0..n {
            let p = self.ipiv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            for t in 1..=km {
                b[j + t] -= self.m.ab[self.m.idx(j + t, j)] * bj;
            }
        }
        for j in (0..n).rev() {
            b[j] = b[j] / self.m.ab[self.m.idx(j, j)];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= self.m.ab[self.m.idx(i, j)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Euclidean relative residual |Ax − b| / |b|.
pub fn relative_residual<T: Scalar>(a: &BandMatrix<T>, x: &[T], b: &[T]) -> f64 {
    let ax = a.matvec(x);
    let num: f64 = ax.iter().zip(b).map(|(u, v)| (*u - *v).modulus().powi(2)).sum::<f64>();
    let den: f64 = b.iter().map(|v| v.modulus().powi(2)).sum::<f64>();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let v = nalgebra::DVector::from_column_slice(b);
        m.lu().solve(&v).unwrap().as_slice().to_vec()
    }

    #[test]
    fn tridiagonal_poisson() {
        let n = 50;
        let mut a = BandMatrix::<f64>::zeros(n, 1, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        let b = vec![1.0; n];
        let lu = a.clone().factor().unwrap();
        let x = lu.solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-13);
    }

    #[test]
    fn pivoting_needed() {
        // zero on the diagonal forces a row swap
        let mut a = BandMatrix::<f64>::zeros(3, 1, 1);
        a.set(0, 0, 0.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 0.0);
        a.set(1, 2, 1.0);
        a.set(2, 1, 1.0);
        a.set(2, 2, 1.0);
        let b = [1.0, 2.0, 3.0];
        let x = a.clone().factor().unwrap().solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn complex_band() {
        let n = 40;
        let mut a = BandMatrix::<Complex64>::zeros(n, 2, 3);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 3).min(n - 1) {
                let v = Complex64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, ((i + j) % 3) as f64);
                a.set(i, j, v);
            }
            a.add(i, i, Complex64::new(0.5, 1.0));
        }
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let x = a.clone().factor().unwrap().solve(&b);
        assert!(relative_residual(&a, &x, &b) < 1e-11);
    }

    #[test]
    fn singular_detected() {
        let a = BandMatrix::<f64>::zeros(4, 1, 1);
        assert!(a.factor().is_err());
    }

    proptest! {
        #[test]
        fn matches_dense_lu(seed in proptest::collection::vec(-1.0f64..1.0, 8 * 8), kl in 0usize..3, ku in 0usize..3) {
            let n = 8;
            let mut band = BandMatrix::<f64>::zeros(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    if band.in_band(i, j) {
                        let v = seed[i * n + j] + if i == j { 3.0 } else { 0.0 };
                        band.set(i, j, v);
                        dense[i][j] = v;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let x = band.factor().unwrap().solve(&b);
            let y = dense_solve(&dense, &b);
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
