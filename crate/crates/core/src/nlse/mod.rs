//! Time-dependent radial NLS: lab and dynamic-rescaling frames, modulation
//! decomposition and blow-up diagnostics.

pub mod decompose;
pub mod diagnostics;
pub mod fv;
pub mod table;
pub mod config;
pub mod evolve;
pub mod run;
