//! Strang splitting: exact phase rotation for the nonlinearity around a
//! Crank–Nicolson step of the linear part. Every substep is unitary (up to the
//! σ_c growth and the absorbing layer in the renormalized frame).

use super::config::Frame;
use super::fv::{phase_rotation, FvGrid};
use crate::error::Result;
use num_complex::Complex64;

/// Compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub fn new(x: f64) -> Self {
        Self { sum: x, comp: 0.0 }
    }
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Field plus frame parameters. In the lab frame λ_f = 1 and γ_f = 0 throughout.
#[derive(Clone, Debug)]
pub struct FrameState {
    pub v: Vec<Complex64>,
    /// Frame time: s in the renormalized frame, t in the lab frame.
    pub s: f64,
    pub t: Kahan,
    pub ln_lambda: f64,
    pub gamma: f64,
    /// Frame b used in the last step.
    pub b: f64,
}

impl FrameState {
    pub fn lambda(&self) -> f64 {
        self.ln_lambda.exp()
    }
}

/// Non-finite or overflowing field; carries the last valid state.
#[derive(Clone, Debug)]
pub struct BlowupSignal {
    pub last: FrameState,
}

pub struct Evolver {
    pub grid: FvGrid,
    pub p: f64,
    pub sigma: f64,
    pub frame: Frame,
    pub damping: Vec<f64>,
    pub feedback: f64,
    /// |v(s,0)| held fixed by the frame feedback.
    pub amplitude: f64,
    pub nonlinear: bool,
}

impl Evolver {
    pub fn new(grid: FvGrid, p: f64, frame: Frame) -> Self {
        let n = grid.len();
        Self {
            grid,
            p,
            sigma: 0.0,
            frame,
            damping: vec![0.0; n],
            feedback: 1.0,
            amplitude: 1.0,
            nonlinear: true,
        }
    }

    /// strength·((r − start)/(r_max − start))² beyond start = fraction·r_max.
    pub fn with_sponge(mut self, fraction: f64, strength: f64) -> Self {
        let r_max = self.grid.r_max();
        let start = fraction * r_max;
        self.damping = self
            .grid
            .r()
            .iter()
            .map(|&r| if r > start { strength * ((r - start) / (r_max - start)).powi(2) } else { 0.0 })
            .collect();
        self
    }

    /// b from d|v(s,0)|²/ds = 0, plus a drift back to the reference amplitude.
    pub fn frame_b(&self, v: &[Complex64]) -> f64 {
        let g = &self.grid;
        let c = 2.0 / (self.p - 1.0);
        // node 0 only couples to node 1
        let lap0 = g.laplacian(&v[..3])[0];
        let dil0 = g.dilation(&v[..3])[0];
        let lam0 = dil0 - v[0] * self.sigma;
        let num = -(v[0].conj() * lap0).im;
        let den = (v[0].conj() * lam0).re;
        num / den + self.feedback * (v[0].norm() / self.amplitude).ln() / c
    }

    /// One step of length `ds` (frame time).
    pub fn step(&self, state: &FrameState, ds: f64) -> std::result::Result<FrameState, BlowupSignal> {
        let mut next = state.clone();
        let ok = self.advance(&mut next, ds).is_ok() && next.v.iter().all(|x| x.re.is_finite() && x.im.is_finite() && x.norm() < 1e150);
        if ok {
            Ok(next)
        } else {
            Err(BlowupSignal { last: state.clone() })
        }
    }

    fn advance(&self, st: &mut FrameState, ds: f64) -> Result<()> {
        let (b, c) = match self.frame {
            Frame::Renormalized => {
                let b = self.frame_b(&st.v);
                (b, Complex64::new(b * self.sigma, -1.0))
            }
            Frame::Lab => (0.0, Complex64::new(0.0, 0.0)),
        };
        if self.nonlinear {
            phase_rotation(&mut st.v, self.p, 0.5 * ds);
        }
        self.grid.crank_nicolson(&mut st.v, ds, b, c, &self.damping)?;
        if self.nonlinear {
            phase_rotation(&mut st.v, self.p, 0.5 * ds);
        }
        match self.frame {
            Frame::Renormalized => {
                st.t.add((2.0 * st.ln_lambda).exp() * ds);
                st.ln_lambda -= b * ds;
                st.gamma += ds;
            }
            Frame::Lab => st.t.add(ds),
        }
        st.s += ds;
        st.b = b;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;

    fn lab_state(v: Vec<Complex64>) -> FrameState {
        FrameState { v, s: 0.0, t: Kahan::new(0.0), ln_lambda: 0.0, gamma: 0.0, b: 0.0 }
    }

    #[test]
    fn linear_flow_conserves_mass_per_step() {
        let g = FvGrid::stretched(1, 800, 60.0, 0.02).unwrap();
        let v: Vec<Complex64> = g.r().iter().map(|r| Complex64::new((-r * r).exp(), 0.0)).collect();
        let mut ev = Evolver::new(g, 3.0, Frame::Lab);
        ev.nonlinear = false;
        let mut st = lab_state(v);
        let m0 = ev.grid.mass(&st.v);
        for _ in 0..50 {
            let m = ev.grid.mass(&st.v);
            st = ev.step(&st, 0.01).unwrap();
            assert!((ev.grid.mass(&st.v) - m).abs() <= 1e-12 * m);
        }
        assert!((ev.grid.mass(&st.v) / m0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standing_wave_stays_put() {
        // cubic 1D soliton u = Q e^{it}
        let gs = solve_ground_state(3.0, 1).unwrap();
        let g = FvGrid::stretched(1, 3000, 80.0, 0.005).unwrap();
        let q: Vec<Complex64> = g.r().iter().map(|&r| Complex64::new(gs.eval(r), 0.0)).collect();
        let ev = Evolver::new(g, 3.0, Frame::Lab);
        let mut st = lab_state(q.clone());
        let dt = 2e-3;
        let mut worst = 0.0f64;
        for _ in 0..500 {
            st = ev.step(&st, dt).unwrap();
            let rot = Complex64::from_polar(1.0, -st.t.value());
            let d: Vec<Complex64> = st.v.iter().zip(&q).map(|(a, b)| a * rot - b).collect();
            worst = worst.max(ev.grid.mass(&d).sqrt());
        }
        assert!((st.t.value() - 1.0).abs() < 1e-12);
        assert!(worst <= 1e-4, "drift from Q: {worst:e}");
    }

    #[test]
    fn overflow_returns_last_state() {
        let g = FvGrid::uniform(1, 50, 5.0).unwrap();
        let v = vec![Complex64::new(f64::NAN, 0.0); g.len()];
        let ev = Evolver::new(g, 3.0, Frame::Lab);
        let st = lab_state(v);
        let err = ev.step(&st, 0.1).unwrap_err();
        assert_eq!(err.last.s, 0.0);
    }
}
