//! Reduced modulation dynamics  b_s = c_v σ_c − c_f Γ(b),  λ_s = −bλ,  t_s = λ²,
//! the nonlinear eigenvalue b*(σ_c), and self-similar speed diagnostics.

use crate::error::{domain, Result};
use crate::ode::{integrate, Flow, OdeOptions};
use crate::radiation::GammaTable;
use crate::stats::{linear_fit, LineFit};
use crate::LabError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return domain(format!("σ_c = {sigma} outside (0, 1)"));
    }
    Ok(())
}

/// b* = π / log(1/σ_c), the fixed point of σ_c = e^{−π/b}.
pub fn bstar_closed_form(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(PI / (1.0 / sigma).ln())
}

/// Root of σ_c = Γ(b) on the table range, by bisection to 1e−10 in b.
pub fn bstar_from_table(sigma: f64, table: &GammaTable) -> Result<f64> {
    check_sigma(sigma)?;
    let (mut lo, mut hi) = table.range();
    let f = |b: f64| table.eval(b).ln() - sigma.ln();
    let (flo, fhi) = (f(lo), f(hi));
    if flo * fhi > 0.0 {
        return Err(LabError::Range(format!(
            "Γ table on b ∈ [{lo}, {hi}] spans [{:.3e}, {:.3e}], not bracketing σ_c = {sigma:e}",
            table.eval(lo),
            table.eval(hi)
        )));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) * flo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    /// Γ(b) = e^{−π/b}.
    #[default]
    Analytic,
    Table(GammaTable),
}

impl GammaSource {
    pub fn eval(&self, b: f64) -> f64 {
        match self {
            GammaSource::Analytic => {
                if b > 0.0 {
                    (-PI / b).exp()
                } else {
                    0.0
                }
            }
            GammaSource::Table(t) => t.eval(b),
        }
    }

    /// Fixed point of c_v σ = c_f Γ(b).
    pub fn fixed_point(&self, sigma: f64, c_virial: f64, c_flux: f64) -> Result<f64> {
        let target = c_virial * sigma / c_flux;
        match self {
            GammaSource::Analytic => bstar_closed_form(target),
            GammaSource::Table(t) => bstar_from_table(target, t),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedParams {
    pub sigma: f64,
    pub c_virial: f64,
    pub c_flux: f64,
    #[serde(default)]
    pub gamma: GammaSource,
    /// Upper edge of the admissible b interval.
    pub b_max: f64,
    pub lambda_floor: f64,
    /// Largest step in s.
    pub ds_max: f64,
}

impl ReducedParams {
    pub fn new(sigma: f64) -> Self {
        Self { sigma, c_virial: 1.0, c_flux: 1.0, gamma: GammaSource::Analytic, b_max: 5.0, lambda_floor: 1e-40, ds_max: 0.05 }
    }

    pub fn rhs(&self, b: f64) -> f64 {
        self.c_virial * self.sigma - self.c_flux * self.gamma.eval(b)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReducedState {
    pub s: f64,
    pub t: f64,
    pub b: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedExit {
    /// λ reached the floor.
    Floor,
    /// s horizon reached first.
    Horizon,
    /// b left (0, b_max) through the lower edge.
    TrapLow,
    TrapHigh,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedTrajectory {
    pub states: Vec<ReducedState>,
    pub exit: ReducedExit,
    /// T − t at every sample, accumulated backwards from the end.
    pub tau: Vec<f64>,
    /// T = t_end + τ_end.
    pub blowup_time: f64,
    /// λ² ≈ slope·t + intercept on the last 30% of samples.
    pub lambda2_fit: LineFit,
    pub blowup_time_fit: f64,
}

/// Integrates (b, log λ, t) in s from `state0` for at most `horizon` units of s.
pub fn integrate_reduced(params: &ReducedParams, state0: ReducedState, horizon: f64) -> Result<ReducedTrajectory> {
    if !(state0.lambda > 0.0) {
        return domain("λ₀ must be positive");
    }
    if !(state0.b > 0.0 && state0.b < params.b_max) {
        return domain(format!("b₀ = {} outside (0, {})", state0.b, params.b_max));
    }
    let opts = OdeOptions { rtol: 1e-11, atol: 1e-14, h0: 1e-3, h_max: params.ds_max, max_steps: 50_000_000 };
    let floor = params.lambda_floor.ln();
    let mut states = vec![state0];
    let mut exit = ReducedExit::Horizon;
    let y0 = [state0.b, state0.lambda.ln(), state0.t];
    integrate(
        |_, y: &[f64; 3]| [params.rhs(y[0]), -y[0], (2.0 * y[1]).exp()],
        state0.s,
        y0,
        state0.s + horizon,
        opts,
        |s, y| {
            states.push(ReducedState { s, t: y[2], b: y[0], lambda: y[1].exp() });
            if y[0] <= 0.0 {
                exit = ReducedExit::TrapLow;
                Flow::Stop
            } else if y[0] >= params.b_max {
                exit = ReducedExit::TrapHigh;
                Flow::Stop
            } else if y[1] <= floor {
                exit = ReducedExit::Floor;
                Flow::Stop
            } else {
                Flow::Continue
            }
        },
    )?;
    let tau = remaining_time(&states);
    let last = states.last().unwrap();
    let blowup_time = last.t + tau.last().unwrap();
    let start = states.len() * 7 / 10;
    let t: Vec<f64> = states[start..].iter().map(|s| s.t).collect();
    let l2: Vec<f64> = states[start..].iter().map(|s| s.lambda * s.lambda).collect();
    let lambda2_fit = linear_fit(&t, &l2);
    let blowup_time_fit = -lambda2_fit.intercept / lambda2_fit.slope;
    Ok(ReducedTrajectory { states, exit, tau, blowup_time, lambda2_fit, blowup_time_fit })
}

/// T − t_i = λ_end²/(2b_end) + ∫_{s_i}^{s_end} λ² ds, each step integrated as an
/// exponential so that no difference of nearly equal times is formed.
pub fn remaining_time(states: &[ReducedState]) -> Vec<f64> {
    let n = states.len();
    let mut tau = vec![0.0; n];
    let last = states[n - 1];
    tau[n - 1] = last.lambda * last.lambda / (2.0 * last.b);
    for i in (0..n - 1).rev() {
        let (a, c) = (states[i], states[i + 1]);
        let ds = c.s - a.s;
        let k = (a.lambda / c.lambda).ln();
        let seg = if k.abs() < 1e-12 {
            a.lambda * a.lambda * ds
        } else {
            (a.lambda * a.lambda - c.lambda * c.lambda) * ds / (2.0 * k)
        };
        tau[i] = tau[i + 1] + seg;
    }
    tau
}

impl ReducedTrajectory {
    pub fn final_state(&self) -> ReducedState {
        *self.states.last().unwrap()
    }

    /// λ/√(2 b_ref (T − t)) at every sample.
    pub fn speed_ratio(&self, b_ref: f64) -> Vec<f64> {
        self.states.iter().zip(&self.tau).map(|(s, t)| s.lambda / (2.0 * b_ref * t).sqrt()).collect()
    }

    /// Indices of samples within the final `decades` of λ.
    pub fn final_decades(&self, decades: f64) -> Vec<usize> {
        let l_end = self.final_state().lambda;
        let top = l_end * 10f64.powf(decades);
        (0..self.states.len()).filter(|&i| self.states[i].lambda <= top).collect()
    }

    /// Largest relative mismatch between −d(λ²/2)/dt over a step and the mean b,
    /// using the integrated lab time (segments where t has lost precision are skipped).
    pub fn reparametrization_defect(&self) -> f64 {
        self.states
            .windows(2)
            .filter(|w| w[1].t - w[0].t > 1e-8 * w[1].t.abs())
            .map(|w| {
                let v = (w[0].lambda.powi(2) - w[1].lambda.powi(2)) / (2.0 * (w[1].t - w[0].t));
                (v / (0.5 * (w[0].b + w[1].b)) - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Critical case σ_c = 0:  b_s = −c_f e^{−π/b}.
pub fn loglog_limit(b0: f64, c_flux: f64, horizon: f64) -> Result<ReducedTrajectory> {
    let mut params = ReducedParams::new(0.0);
    params.c_flux = c_flux;
    params.lambda_floor = 1e-300;
    params.ds_max = 0.5;
    integrate_reduced(&params, ReducedState { s: 0.0, t: 0.0, b: b0, lambda: 1.0 }, horizon)
}

/// Log-log compensator λ² log|log τ| / τ, which tends to 2π.
pub fn loglog_compensator(traj: &ReducedTrajectory) -> Vec<(f64, f64)> {
    traj.states
        .iter()
        .zip(&traj.tau)
        .filter(|(_, t)| **t < 1e-2)
        .map(|(s, t)| (*t, s.lambda * s.lambda * (-t.ln()).ln() / t))
        .collect()
}
