//! Soft static friction characteristic of the bow.
//!
//! `φ(η) = √(2a) · η · exp(−aη² + 1/2)` is odd in the relative velocity `η`
//! and peaks at `|φ| = 1` for `η = ±1/√(2a)`. The strongly nonlinear band is
//! bounded by the two local minima of `dφ/dη`, at `η = ±√(3/(2a))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub a: f64,
}

impl FrictionParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::config(format!("friction shape parameter must be finite and > 0, got {a}")));
        }
        Ok(Self { a })
    }

    /// `φ(η)` without input validation; for inner loops.
    #[inline]
    pub fn phi(&self, eta: f64) -> f64 {
        (2.0 * self.a).sqrt() * eta * (-self.a * eta * eta + 0.5).exp()
    }

    #[inline]
    pub fn dphi(&self, eta: f64) -> f64 {
        let ae2 = self.a * eta * eta;
        (2.0 * self.a).sqrt() * (-ae2 + 0.5).exp() * (1.0 - 2.0 * ae2)
    }

    /// `d²φ/dη² = √(2a) · e^{−aη²+1/2} · 2aη · (2aη² − 3)`
    #[inline]
    pub fn d2phi(&self, eta: f64) -> f64 {
        let ae2 = self.a * eta * eta;
        (2.0 * self.a).sqrt() * (-ae2 + 0.5).exp() * 2.0 * self.a * eta * (2.0 * ae2 - 3.0)
    }

    /// Location of the maximum of `φ`.
    pub fn peak(&self) -> f64 {
        1.0 / (2.0 * self.a).sqrt()
    }

    /// Positive local minimizer of `dφ/dη`.
    pub fn boundary(&self) -> f64 {
        (1.5 / self.a).sqrt()
    }

    pub fn phase(&self, eta: f64) -> PhaseLabel {
        if eta.abs() <= self.boundary() {
            PhaseLabel::Stick
        } else {
            PhaseLabel::Slip
        }
    }
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self { a: 100.0 }
    }
}

/// Bow-mass interaction phase. Small `|η|` (inside the nonlinear band) is
/// stick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseLabel {
    Stick,
    Slip,
}

fn finite(eta: f64) -> Result<f64> {
    if eta.is_finite() {
        Ok(eta)
    } else {
        Err(Error::Domain(format!("relative velocity must be finite, got {eta}")))
    }
}

pub fn phi(eta: f64, params: FrictionParams) -> Result<f64> {
    finite(eta).map(|e| params.phi(e))
}

pub fn dphi_deta(eta: f64, params: FrictionParams) -> Result<f64> {
    finite(eta).map(|e| params.dphi(e))
}

pub fn nonlinear_boundary(params: FrictionParams) -> f64 {
    params.boundary()
}

pub fn classify_phase(eta: f64, params: FrictionParams) -> Result<PhaseLabel> {
    finite(eta).map(|e| params.phase(e))
}
