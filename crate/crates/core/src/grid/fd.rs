//! Finite-difference weights (Fornberg) and radial stencil assembly.

use crate::scalar::Scalar;

/// Weights for derivatives 0..=m at `z` from nodes `x` (Fornberg 1988).
/// Returns `c[k][j]`: weight of node j for derivative k.
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Behaviour of stencils that would reach past the last node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RightBc {
    /// Values beyond r_max are zero (decayed fields).
    Zero,
    /// Shift the stencil inward and use only existing nodes.
    OneSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

/// One row of a folded stencil: weights for columns `start..start+w.len()`.
#[derive(Clone, Debug)]
pub struct StencilRow {
    pub start: usize,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub lap: Vec<f64>,
}

/// Radial first/second derivative and Laplacian stencils on a mapped grid.
#[derive(Clone, Debug)]
pub struct DiffOp {
    pub rows: Vec<StencilRow>,
    pub order: usize,
    pub parity: Parity,
    pub right: RightBc,
    half_width: usize,
}

impl DiffOp {
    pub(crate) fn build(
        xi_h: f64,
        r: &[f64],
        dr: &[f64],
        d2r: &[f64],
        dim: usize,
        order: usize,
        parity: Parity,
        right: RightBc,
    ) -> Self {
        let k = order / 2;
        let m = r.len() - 1;
        let mut rows = Vec::with_capacity(m + 1);
        for i in 0..=m {
            // stencil offsets in xi-index space
            let (lo, hi): (isize, isize) = if i + k <= m || right == RightBc::Zero {
                (i as isize - k as isize, (i + k) as isize)
            } else {
                let width = 2 * k + 1;
                ((m + 1) as isize - width as isize - 1, m as isize)
            };
            let xs: Vec<f64> = (lo..=hi).map(|j| j as f64 * xi_h).collect();
            let c = fornberg(i as f64 * xi_h, &xs, 2);
            let mut col_lo = usize::MAX;
            let mut col_hi = 0usize;
            let mut acc: Vec<(usize, f64, f64)> = Vec::new();
            for (t, j) in (lo..=hi).enumerate() {
                let (col, sgn) = if j < 0 { ((-j) as usize, parity.sign()) } else { (j as usize, 1.0) };
                if col > m {
                    continue;
                }
                col_lo = col_lo.min(col);
                col_hi = col_hi.max(col);
                acc.push((col, sgn * c[1][t], sgn * c[2][t]));
            }
            let width = col_hi - col_lo + 1;
            let mut w1 = vec![0.0; width];
            let mut w2 = vec![0.0; width];
            for (col, a, b) in acc {
                w1[col - col_lo] += a;
                w2[col - col_lo] += b;
            }
            // chain rule: f_r = f_xi / r', f_rr = (f_xixi - r'' f_r) / r'^2
            let d1: Vec<f64> = w1.iter().map(|w| w / dr[i]).collect();
            let d2: Vec<f64> = w2.iter().zip(&d1).map(|(w, a)| (w - d2r[i] * a) / (dr[i] * dr[i])).collect();
            let lap: Vec<f64> = if i == 0 {
                match parity {
                    Parity::Even => d2.iter().map(|w| dim as f64 * w).collect(),
                    Parity::Odd => vec![0.0; width],
                }
            } else {
                d2.iter().zip(&d1).map(|(a, b)| a + (dim as f64 - 1.0) / r[i] * b).collect()
            };
            rows.push(StencilRow { start: col_lo, d1, d2, lap });
        }
        let half_width = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let last = row.start + row.d1.len() - 1;
                (i.abs_diff(row.start)).max(last.abs_diff(i))
            })
            .max()
            .unwrap_or(0);
        Self { rows, order, parity, right, half_width }
    }

    /// Largest |column − row| over all rows; the band half-width of assembled operators.
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    fn apply_with<T: Scalar>(&self, f: &[T], pick: impl Fn(&StencilRow) -> &[f64]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                let w = pick(row);
                let mut acc = T::zero();
                for (t, wt) in w.iter().enumerate() {
                    acc += f[row.start + t] * *wt;
                }
                acc
            })
            .collect()
    }

    pub fn d1<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        self.apply_with(f, |r| &r.d1)
    }

    pub fn d2<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        self.apply_with(f, |r| &r.d2)
    }

    pub fn laplacian<T: Scalar>(&self, f: &[T]) -> Vec<T> {
        self.apply_with(f, |r| &r.lap)
    }
}

/// Local Lagrange interpolation through `x` at `z`.
pub fn lagrange_weights(z: f64, x: &[f64]) -> Vec<f64> {
    fornberg(z, x, 0).swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_centered_second_derivative() {
        let c = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(c[2], vec![1.0, -2.0, 1.0]);
        assert_eq!(c[1], vec![-0.5, 0.0, 0.5]);
        let c = fornberg(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 2);
        let expect = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in c[2].iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn one_sided_exact_for_polynomials() {
        let x: Vec<f64> = (0..7).map(|j| j as f64 * 0.3).collect();
        let z = 1.8;
        let c = fornberg(z, &x, 2);
        for deg in 0..=6i32 {
            let d2: f64 = x.iter().zip(&c[2]).map(|(xj, w)| w * xj.powi(deg)).sum();
            let exact = if deg >= 2 { (deg * (deg - 1)) as f64 * z.powi(deg - 2) } else { 0.0 };
            assert!((d2 - exact).abs() < 1e-8 * (1.0 + exact.abs()), "deg {deg}");
        }
    }
}
