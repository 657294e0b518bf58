//! Endpoint-corrected trapezoid (Gregory) weights on a uniform index grid.

const GREGORY: [f64; 7] = [
    1.0 / 12.0,
    1.0 / 24.0,
    19.0 / 720.0,
    3.0 / 160.0,
    863.0 / 60480.0,
    275.0 / 24192.0,
    33953.0 / 3628800.0,
];

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Unit-spacing weights for `n + 1` nodes. `left`/`right` toggle the end corrections.
pub fn gregory_weights(n: usize, left: bool, right: bool) -> Vec<f64> {
    let mut w = vec![1.0; n + 1];
    w[0] = 0.5;
    w[n] = 0.5;
    let terms = if n >= 16 { GREGORY.len() } else { 0 };
    for (idx, g) in GREGORY.iter().enumerate().take(terms) {
        let k = idx + 1;
        // forward difference Δ^k f_0 and backward ∇^k f_n
        for j in 0..=k {
            let c = binom(k, j);
            if left {
                let fwd = if (k - j) % 2 == 0 { c } else { -c };
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                w[j] += sign * g * fwd;
            }
            if right {
                let bwd = if j % 2 == 0 { c } else { -c };
                w[n - j] -= g * bwd;
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_low_degree_polynomials() {
        let n = 40;
        let w = gregory_weights(n, true, true);
        for deg in 0..=7i32 {
            let approx: f64 = w.iter().enumerate().map(|(j, wj)| wj * (j as f64).powi(deg)).sum();
            let exact = (n as f64).powi(deg + 1) / (deg + 1) as f64;
            assert!((approx - exact).abs() < 1e-8 * exact.max(1.0), "degree {deg}: {approx} vs {exact}");
        }
    }

    #[test]
    fn one_sided_correction_matches_even_extension() {
        // with only the right end corrected, trapezoid at the left is exact for
        // integrands even about the left end
        let n = 60;
        let w = gregory_weights(n, false, true);
        let h = 0.1;
        let approx: f64 = w.iter().enumerate().map(|(j, wj)| h * wj * (-((j as f64 * h).powi(2))).exp()).sum();
        let exact = 0.5 * std::f64::consts::PI.sqrt();
        assert!((approx - exact).abs() < 1e-9);
    }
}
