//! Simulation configuration.

use crate::error::{config, LabError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    /// Dynamic rescaling: v(s, y) = λ^{2/(p−1)} u(t, λy) e^{−iγ} with γ_s = 1.
    #[default]
    Renormalized,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Number of intervals.
    pub nodes: usize,
    pub r_max: f64,
    /// Spacing at the origin (sinh stretching beyond).
    pub h0: f64,
    /// Absorbing layer on r > sponge_start·r_max with rate strength·x², x ∈ [0, 1].
    pub sponge_start: f64,
    pub sponge_strength: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nodes: 4000, r_max: 400.0, h0: 0.02, sponge_start: 0.6, sponge_strength: 5.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSpec {
    /// Step in s (renormalized frame).
    pub ds: f64,
    /// Lab frame: dt = min(dt_max, cfl·λ²).
    pub cfl: f64,
    pub dt_max: f64,
    /// Gain of the drift term that holds |v(s,0)| at its initial value.
    pub feedback: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self { ds: 0.005, cfl: 0.005, dt_max: 1e-3, feedback: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Perturbation {
    None,
    /// a·(1 − (y/radius)²)³₊ with a given amplitude.
    Bump { amplitude: f64, radius: f64 },
    /// Same shape, amplitude root-solved so that E(Q_b₀ + ε₀) = 0.
    #[default]
    EnergyCancel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Shape {
    /// λ₀^{−2/(p−1)}(Q̃_b₀ + ε₀)(r/λ₀)e^{iγ₀}.
    #[default]
    SelfSimilar,
    /// amplitude·e^{−(r/width)²}; no modulation diagnostics.
    Gaussian { amplitude: f64, width: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSpec {
    pub shape: Shape,
    /// Defaults to the root of Γ_b = σ_c on the tabulated range, else π/ln(1/σ_c).
    pub b0: Option<f64>,
    pub lambda0: f64,
    pub gamma0: f64,
    pub perturbation: Perturbation,
    /// Support radius of the energy-cancelling bump.
    pub bump_radius: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { shape: Shape::SelfSimilar, b0: None, lambda0: 1.0, gamma0: 0.0, perturbation: Perturbation::EnergyCancel, bump_radius: 3.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopSpec {
    pub lambda_floor: f64,
    /// Budget in frame time s (renormalized) or lab time t.
    pub s_max: f64,
    pub t_max: Option<f64>,
    /// Lab frame: resolution is exhausted once λ < resolve·h0.
    pub resolve: f64,
}

impl Default for StopSpec {
    fn default() -> Self {
        Self { lambda_floor: 1e-6, s_max: 200.0, t_max: None, resolve: 10.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticSpec {
    /// Sampling interval in s (renormalized) or in modulated s (lab).
    pub every: f64,
    /// Flux radius A = e^{2aθ(2)/b}.
    pub a: f64,
    pub c2: f64,
    pub c3: f64,
    pub lyapunov: bool,
    /// Include the localized radiation in f̃₁ for b ≥ this value.
    pub lyapunov_radiation_from: f64,
    pub decompose_tol: f64,
    /// Field snapshots when λ first drops below 10^{−k}.
    pub snapshot_decades: Vec<u32>,
}

impl Default for DiagnosticSpec {
    fn default() -> Self {
        Self {
            every: 0.1,
            a: 0.5,
            c2: 1.0,
            c3: 1.0,
            lyapunov: true,
            lyapunov_radiation_from: 0.25,
            decompose_tol: 1e-10,
            snapshot_decades: vec![],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    pub b_min: f64,
    pub b_max: f64,
    pub db: f64,
    pub eta: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self { b_min: 0.3, b_max: 0.75, db: 0.01, eta: 0.1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Must equal [`SCHEMA_VERSION`].
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Exactly one of `sigma` and `p`.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub frame: Frame,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub stop: StopSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticSpec,
    #[serde(default)]
    pub table: TableSpec,
}

/// Version of the configuration layout accepted by [`SimConfig::from_toml`].
pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_dim() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            dim: 1,
            sigma: Some(0.005),
            p: None,
            frame: Frame::default(),
            grid: GridSpec::default(),
            time: TimeSpec::default(),
            initial: InitialSpec::default(),
            stop: StopSpec::default(),
            diagnostics: DiagnosticSpec::default(),
            table: TableSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// (p, σ_c).
    pub fn exponents(&self) -> Result<(f64, f64)> {
        match (self.p, self.sigma) {
            (Some(p), None) => Ok((p, crate::sigma_c(p, self.dim))),
            (None, Some(s)) => Ok((crate::exponent_for_sigma(s, self.dim), s)),
            _ => config("give exactly one of `p` and `sigma`"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return config(format!("schema = {} not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        if !(1..=5).contains(&self.dim) {
            return config(format!("dim = {} outside 1..=5", self.dim));
        }
        let (p, s) = self.exponents()?;
        if !(p > 1.0 && s >= 0.0 && s < 0.5) {
            return config(format!("need p > 1 and 0 ≤ σ_c < 1/2 (p = {p}, σ_c = {s})"));
        }
        let g = &self.grid;
        if g.nodes < 16 || !(g.r_max > 0.0) || !(g.h0 > 0.0) {
            return config("grid needs nodes ≥ 16 and positive r_max, h0");
        }
        if !(0.0..1.0).contains(&g.sponge_start) || g.sponge_strength < 0.0 {
            return config("sponge_start must lie in [0, 1) and sponge_strength ≥ 0");
        }
        let t = &self.time;
        if !(t.ds > 0.0 && t.cfl > 0.0 && t.dt_max > 0.0 && t.feedback >= 0.0) {
            return config("time steps must be positive");
        }
        let i = &self.initial;
        if !(i.lambda0 > 0.0) {
            return config("lambda0 must be positive");
        }
        if let Some(b) = i.b0 {
            if !(b > 0.0) {
                return config("b0 must be positive");
            }
        }
        if let Shape::Gaussian { amplitude, width } = i.shape {
            if !(amplitude.is_finite() && width > 0.0) {
                return config("gaussian needs a finite amplitude and positive width");
            }
        }
        if !(i.bump_radius > 0.0) {
            return config("bump_radius must be positive");
        }
        if let Perturbation::Bump { radius, .. } = i.perturbation {
            if !(radius > 0.0) {
                return config("bump radius must be positive");
            }
        }
        let st = &self.stop;
        if !(st.lambda_floor > 0.0 && st.lambda_floor < i.lambda0 && st.s_max > 0.0 && st.resolve > 0.0) {
            return config("stop rule needs 0 < lambda_floor < lambda0 and positive budgets");
        }
        let d = &self.diagnostics;
        if !(d.every > 0.0 && d.a > 0.0 && d.decompose_tol > 0.0) {
            return config("diagnostic cadence, a and tolerance must be positive");
        }
        let tb = &self.table;
        if !(tb.b_min > 0.0 && tb.b_max > tb.b_min + 3.0 * tb.db && tb.db > 0.0 && tb.eta > 0.0 && tb.eta < 1.0) {
            return config("profile table needs 0 < b_min < b_max − 3db and η ∈ (0, 1)");
        }
        Ok(())
    }
}
