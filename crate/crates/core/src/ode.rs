//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use crate::error::{solver, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h0: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h0: 1e-3, h_max: f64::INFINITY, max_steps: 10_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates y' = f(t, y) from `t0` towards `t1`, calling `observe` after
/// every accepted step. Returns the final (t, y).
pub fn integrate<const D: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [f64; D],
    t1: f64,
    opts: OdeOptions,
    mut observe: O,
) -> Result<(f64, [f64; D])>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
    O: FnMut(f64, &[f64; D]) -> Flow,
{
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h0.abs().min(opts.h_max) * dir;
    let mut k = [[0.0; D]; 7];
    k[0] = f(t, &y);
    for _ in 0..opts.max_steps {
        if (t1 - t) * dir <= 0.0 {
            return Ok((t, y));
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for (d, v) in ys.iter_mut().enumerate() {
                for (j, a) in A[s].iter().enumerate().take(s) {
                    *v += h * a * k[j][d];
                }
            }
            k[s] = f(t + C[s] * h, &ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for d in 0..D {
            let mut inc5 = 0.0;
            let mut inc4 = 0.0;
            for s in 0..7 {
                inc5 += B5[s] * k[s][d];
                inc4 += B4[s] * k[s][d];
            }
            y5[d] = y[d] + h * inc5;
            let sc = opts.atol + opts.rtol * y[d].abs().max(y5[d].abs());
            err = err.max((h * (inc5 - inc4) / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.25;
            if h.abs() < 1e-300 {
                return solver("ode: step size underflow");
            }
            continue;
        }
        if err <= 1.0 {
            t += h;
            y = y5;
            k[0] = k[6];
            if observe(t, &y) == Flow::Stop {
                return Ok((t, y));
            }
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * fac).abs().min(opts.h_max) * dir;
        if h.abs() < 1e-14 * t.abs().max(1e-300) {
            return solver(format!("ode: step size collapsed at t = {t}"));
        }
    }
    solver("ode: maximum number of steps exceeded")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let (t, y) = integrate(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            OdeOptions::default(),
            |_, _| Flow::Continue,
        )
        .unwrap();
        assert!((t - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8);
    }

    #[test]
    fn stop_event() {
        let (t, _) = integrate(|_, _: &[f64; 1]| [1.0], 0.0, [0.0], 10.0, OdeOptions::default(), |_, y| {
            if y[0] > 3.0 {
                Flow::Stop
            } else {
                Flow::Continue
            }
        })
        .unwrap();
        assert!(t > 3.0 && t < 10.0);
    }
}
