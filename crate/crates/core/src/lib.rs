//! Physics-informed and operator-learning surrogates for a bowed
//! single-degree-of-freedom oscillator, with the finite-difference
//! reference solver, training drivers and loss-landscape diagnostics.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod fdm;
pub mod friction;
pub mod mat;
pub mod nets;
pub mod spectra;
pub mod train;

pub use autodiff::{Dual, Layout, ParamVector, Tape, Var};
pub use error::{Error, Result};
pub use fdm::{InitialCondition, OscillatorConfig, Trajectory};
pub use friction::{FrictionParams, PhaseLabel};
pub use mat::Mat;
