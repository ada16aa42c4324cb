use std::io::Write;

use crate::autodiff::{value, Objective, ParamVector};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Half-width of the perturbation range on both axes.
pub const LANDSCAPE_RANGE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `loss[(j, i)]` is the loss at `(alpha[i], beta[j])`.
    pub loss: Mat,
    pub direction1: ParamVector,
    pub direction2: ParamVector,
}

impl LandscapeGrid {
    /// CSV matrix: the header row lists α, each following row starts with β.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "beta\\alpha")?;
        for a in &self.alpha {
            write!(w, ",{a:.16e}")?;
        }
        writeln!(w)?;
        for (j, b) in self.beta.iter().enumerate() {
            write!(w, "{b:.16e}")?;
            for v in self.loss.row(j) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Rescales every layer block of `direction` to the Frobenius norm of the
/// matching block of `params`. Zero blocks stay zero.
pub fn normalize_layerwise(direction: &ParamVector, params: &ParamVector) -> Result<ParamVector> {
    params.check_same_layout(direction)?;
    let mut out = direction.clone();
    for l in 0..params.layers().len() {
        let dn = direction.block_norm(l);
        if dn == 0.0 {
            continue;
        }
        let s = params.block_norm(l) / dn;
        out.block_mut(l).iter_mut().for_each(|x| *x *= s);
    }
    Ok(out)
}

/// Gaussian direction shaped like `params`.
pub fn random_direction(params: &ParamVector, seed: u64, stream: u64) -> ParamVector {
    let mut rng = super::rng(seed, stream);
    let data = super::lanczos::gaussian_vector(&mut rng, params.len());
    ParamVector::from_flat(params.layout(), data).expect("same length by construction")
}

/// `n` points on `[−0.5, 0.5]`, symmetric about an exact 0 at the centre.
pub fn axis(n: usize) -> Vec<f64> {
    let half = (n - 1) as f64;
    (0..n).map(|i| LANDSCAPE_RANGE * (2.0 * i as f64 - half) / half).collect()
}

/// Loss on the plane `θ + αε₁ + βε₂` with layer-normalized directions.
/// `grid_n` must be odd so that the unperturbed point is on the grid.
pub fn landscape<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    e1: &ParamVector,
    e2: &ParamVector,
    grid_n: usize,
) -> Result<LandscapeGrid> {
    if grid_n < 3 || grid_n % 2 == 0 {
        return Err(Error::config(format!("landscape grid size must be odd and >= 3, got {grid_n}")));
    }
    let d1 = normalize_layerwise(e1, params)?;
    let d2 = normalize_layerwise(e2, params)?;
    let alpha = axis(grid_n);
    let beta = alpha.clone();
    let mut loss = Mat::zeros(grid_n, grid_n);
    let mut theta = params.clone();
    for (j, &b) in beta.iter().enumerate() {
        for (i, &a) in alpha.iter().enumerate() {
            let v = if a == 0.0 && b == 0.0 {
                value(objective, params)?
            } else {
                for (((t, p), x), y) in
                    theta.as_mut_slice().iter_mut().zip(params.as_slice()).zip(d1.as_slice()).zip(d2.as_slice())
                {
                    *t = p + a * x + b * y;
                }
                value(objective, &theta)?
            };
            loss.set(j, i, v);
        }
    }
    Ok(LandscapeGrid { alpha, beta, loss, direction1: d1, direction2: d2 })
}
