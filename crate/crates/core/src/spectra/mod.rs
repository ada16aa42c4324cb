//! Hessian spectra (Lanczos extremes and stochastic Lanczos quadrature
//! densities) and two-dimensional loss landscapes around trained parameters.

mod density;
mod lanczos;
mod landscape;

pub use density::{spectrum_density, spectrum_density_of, DensityEstimate, RitzQuadrature, SlqSettings};
pub use lanczos::{top_eigenpairs, top_eigenpairs_of, EigenPair, HvpOperator, LanczosSettings, MAX_EIGENPAIRS};
pub use landscape::{axis, landscape, normalize_layerwise, random_direction, LandscapeGrid, LANDSCAPE_RANGE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Objective, ParamVector};
use crate::error::Result;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianSpectrum {
    /// Descending.
    pub top: Vec<EigenPair>,
    pub density: DensityEstimate,
    pub probes: usize,
    pub depth: usize,
}

/// Top-`k` eigenpairs and the SLQ density from one recorded graph.
pub fn hessian_spectrum<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    k: usize,
    lanczos: &LanczosSettings,
    slq: &SlqSettings,
) -> Result<HessianSpectrum> {
    let op = HvpOperator::new(objective, params)?;
    let top = top_eigenpairs_of(&op, k, lanczos)?;
    let density = spectrum_density_of(&op, slq)?;
    Ok(HessianSpectrum { top, density, probes: slq.probes, depth: slq.depth.min(op.dim()) })
}
