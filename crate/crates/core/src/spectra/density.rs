use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lanczos::{HvpOperator, Lanczos};
use crate::autodiff::{Objective, ParamVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlqSettings {
    /// Rademacher probes, `n_v`.
    pub probes: usize,
    /// Lanczos steps per probe, `m`.
    pub depth: usize,
    /// Gaussian kernel width; `None` means `(λ_max − λ_min) / 200`.
    pub bandwidth: Option<f64>,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for SlqSettings {
    fn default() -> Self {
        Self { probes: 8, depth: 100, bandwidth: None, grid_points: 1001, seed: 0 }
    }
}

/// Gauss quadrature of one probe's spectral measure: Ritz values and the
/// squared first components of the tridiagonal eigenvectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RitzQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Extreme Ritz values over all probes.
    pub support: (f64, f64),
    pub quadratures: Vec<RitzQuadrature>,
}

impl DensityEstimate {
    /// Trapezoid integral of the smoothed density over its grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Unsmoothed spectral mass in `[lo, hi)`, averaged over probes.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        let total: f64 = self
            .quadratures
            .iter()
            .flat_map(|q| q.nodes.iter().zip(&q.weights))
            .filter(|(x, _)| **x >= lo && **x < hi)
            .map(|(_, w)| w)
            .sum();
        total / self.quadratures.len() as f64
    }

    /// CSV `eigenvalue,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "eigenvalue,density")?;
        for (x, d) in self.grid.iter().zip(&self.density) {
            writeln!(w, "{x:.16e},{d:.16e}")?;
        }
        Ok(())
    }
}

fn rademacher(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let s = 1.0 / (n as f64).sqrt();
    (0..n).map(|_| if rng.random_bool(0.5) { s } else { -s }).collect()
}

/// Stochastic Lanczos quadrature estimate of the Hessian eigenvalue density.
pub fn spectrum_density<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    settings: &SlqSettings,
) -> Result<DensityEstimate> {
    let op = HvpOperator::new(objective, params)?;
    spectrum_density_of(&op, settings)
}

pub fn spectrum_density_of(op: &HvpOperator, settings: &SlqSettings) -> Result<DensityEstimate> {
    if settings.probes == 0 || settings.depth < 10 {
        return Err(Error::config(format!(
            "SLQ needs probes >= 1 and depth >= 10, got {} and {}",
            settings.probes, settings.depth
        )));
    }
    if settings.grid_points < 2 || settings.bandwidth.is_some_and(|b| !(b > 0.0)) {
        return Err(Error::config("SLQ grid needs >= 2 points and a positive bandwidth"));
    }
    let n = op.dim();
    let depth = settings.depth.min(n);
    let apply = |x: &[f64]| op.apply(x);
    let mut rng = super::rng(settings.seed, 1);
    let mut quadratures = Vec::with_capacity(settings.probes);
    for _ in 0..settings.probes {
        let mut lz = Lanczos::new(rademacher(&mut rng, n))?;
        // a breakdown leaves an invariant Krylov space, on which the
        // quadrature is already exact
        while lz.len() < depth && !lz.exhausted {
            lz.step(&apply, None)?;
        }
        let (nodes, s) = lz.ritz()?;
        let weights = (0..nodes.len()).map(|i| s[(0, i)] * s[(0, i)]).collect();
        quadratures.push(RitzQuadrature { nodes, weights });
    }

    let all = quadratures.iter().flat_map(|q| q.nodes.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let bandwidth = settings.bandwidth.unwrap_or_else(|| {
        let w = (hi - lo) / 200.0;
        if w > 0.0 {
            w
        } else {
            1e-2 * hi.abs().max(1.0)
        }
    });
    let (g0, g1) = (lo - 6.0 * bandwidth, hi + 6.0 * bandwidth);
    let m = settings.grid_points;
    let grid: Vec<f64> = (0..m).map(|i| g0 + (g1 - g0) * i as f64 / (m - 1) as f64).collect();
    let norm = 1.0 / (settings.probes as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .iter()
        .map(|&x| {
            let s: f64 = quadratures
                .iter()
                .flat_map(|q| q.nodes.iter().zip(&q.weights))
                .map(|(&t, &w)| w * (-0.5 * ((x - t) / bandwidth).powi(2)).exp())
                .sum();
            norm * s
        })
        .collect();
    Ok(DensityEstimate { grid, density, bandwidth, support: (lo, hi), quadratures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::spectra::testing::quadratic;

    fn diag(values: &[f64]) -> Mat {
        Mat::from_fn(values.len(), values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[test]
    fn identity_hessian_concentrates_at_one() {
        let n = 50;
        let theta = ParamVector::single("theta", vec![0.1; n]);
        let d = spectrum_density(&quadratic(Mat::identity(n)), &theta, &SlqSettings::default()).unwrap();
        assert!((d.mass(0.99, 1.01) - 1.0).abs() < 1e-12);
        let peak = d.grid.iter().zip(&d.density).fold((0.0, 0.0), |b, (x, y)| if *y > b.1 { (*x, *y) } else { b });
        assert!((peak.0 - 1.0f64).abs() < 0.01);
        assert!((d.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn clustered_diagonal_has_nine_to_one_mass() {
        let mut values = vec![0.0; 180];
        values.extend(vec![10.0; 20]);
        let theta = ParamVector::single("theta", vec![0.0; 200]);
        let d = spectrum_density(&quadratic(diag(&values)), &theta, &SlqSettings::default()).unwrap();
        // oracle: histogram of the known spectrum
        let low = values.iter().filter(|&&v| v < 5.0).count() as f64 / 200.0;
        assert!((d.mass(-5.0, 5.0) - low).abs() < 1e-10);
        assert!((d.mass(5.0, 15.0) - (1.0 - low)).abs() < 1e-10);
        assert!((d.integral() - 1.0).abs() < 0.01);
        assert!(d.density.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn bad_settings_are_rejected() {
        let theta = ParamVector::single("theta", vec![0.0; 20]);
        let q = quadratic(Mat::identity(20));
        let bad = SlqSettings { depth: 5, ..Default::default() };
        assert!(matches!(spectrum_density(&q, &theta, &bad), Err(Error::Config(_))));
        let bad = SlqSettings { probes: 0, ..Default::default() };
        assert!(matches!(spectrum_density(&q, &theta, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn csv_has_header_and_one_row_per_grid_point() {
        let theta = ParamVector::single("theta", vec![0.0; 12]);
        let settings = SlqSettings { grid_points: 11, depth: 10, ..Default::default() };
        let d = spectrum_density(&quadratic(diag(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0])), &theta, &settings)
            .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("eigenvalue,density"));
        assert_eq!(text.lines().count(), 12);
    }
}
