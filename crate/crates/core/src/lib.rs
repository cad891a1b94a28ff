//! Numerical lab for the mean-field equation Δu = 8π − 8πh e^u on a
//! unit-area conformal torus with a possibly sign-changing weight h.

pub mod blowup;
pub mod error;
pub mod fixtures;
pub mod functional;
pub mod greens;
pub mod io;
pub mod pipeline;
pub mod solver;
pub mod spectral;
pub mod surface;
pub mod testfn;

pub use blowup::{BlowupReport, DiagnosticsConfig};
pub use error::{KwError, Result};
pub use functional::{FunctionalContext, ThresholdReport};
pub use greens::GreenData;
pub use solver::{SolverOptions, SolverState, Trajectory};
pub use surface::{GridSpec, Node, ScalarField, SurfaceGrid};
