//! Small fitting helpers used by diagnostics.

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub correlation: f64,
}

/// Ordinary least squares y ≈ slope·x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    let slope = sxy / sxx;
    let correlation = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 1.0 };
    LineFit { slope, intercept: my - slope * mx, correlation }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// max/min of a positive sample.
pub fn flatness(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::MIN, f64::max);
    let mn = v.iter().copied().fold(f64::MAX, f64::min);
    mx / mn
}

/// Pearson correlation of two samples.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    linear_fit(x, y).correlation
}

/// Least-squares coefficients for y ≈ Σ c_k x^k, k in `powers`.
pub fn power_fit(x: &[f64], y: &[f64], powers: &[i32]) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_fn(x.len(), powers.len(), |i, j| x[i].powi(powers[j]));
    let v = nalgebra::DVector::from_column_slice(y);
    let sol = m.svd(true, true).solve(&v, 1e-14).expect("svd solve");
    sol.as_slice().to_vec()
}
