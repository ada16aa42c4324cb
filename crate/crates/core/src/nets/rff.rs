use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mat::{gemm, Mat};

/// Frozen random Fourier features `x ↦ [cos(2π xB), sin(2π xB)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffEmbedding {
    b: Mat,
    sigma_prime: f64,
}

impl RffEmbedding {
    /// Draws `B` (`input_dim x c_rff`) with entries `N(0, σ'²)`. The same
    /// `(seed, stream)` always yields the same matrix.
    pub fn new(input_dim: usize, c_rff: usize, sigma_prime: f64, seed: u64, stream: u64) -> Result<Self> {
        if input_dim == 0 || c_rff == 0 {
            return Err(Error::config("RFF dimensions must be positive"));
        }
        let normal = Normal::new(0.0, sigma_prime)
            .map_err(|e| Error::config(format!("RFF scale {sigma_prime}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let data = (0..input_dim * c_rff).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { b: Mat::from_vec(input_dim, c_rff, data), sigma_prime })
    }

    pub fn from_matrix(b: Mat, sigma_prime: f64) -> Self {
        Self { b, sigma_prime }
    }

    pub fn matrix(&self) -> &Mat {
        &self.b
    }

    pub fn sigma_prime(&self) -> f64 {
        self.sigma_prime
    }

    pub fn input_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn c_rff(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.cols()
    }

    fn phases(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "RFF expects {} input columns, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut z = Mat::zeros(x.rows(), self.c_rff());
        gemm(2.0 * PI, x, false, &self.b, false, 0.0, &mut z);
        Ok(z)
    }

    /// Embeds a batch (`n x input_dim`) to `n x 2c_rff`.
    pub fn embed(&self, x: &Mat) -> Result<Mat> {
        let z = self.phases(x)?;
        let c = self.c_rff();
        Ok(Mat::from_fn(x.rows(), 2 * c, |r, k| {
            if k < c {
                z.get(r, k).cos()
            } else {
                z.get(r, k - c).sin()
            }
        }))
    }

    /// Features and their derivative along `dx` (same shape as `x`).
    pub fn embed_with_tangent(&self, x: &Mat, dx: &Mat) -> Result<(Mat, Mat)> {
        if dx.shape() != x.shape() {
            return Err(Error::shape("RFF tangent must match the input shape"));
        }
        let z = self.phases(x)?;
        let dz = self.phases(dx)?;
        let c = self.c_rff();
        let mut f = Mat::zeros(x.rows(), 2 * c);
        let mut df = Mat::zeros(x.rows(), 2 * c);
        for r in 0..x.rows() {
            for k in 0..c {
                let (s, co) = z.get(r, k).sin_cos();
                let d = dz.get(r, k);
                f.set(r, k, co);
                f.set(r, c + k, s);
                df.set(r, k, -s * d);
                df.set(r, c + k, co * d);
            }
        }
        Ok((f, df))
    }
}

/// Embeds a single input vector.
pub fn rff_embed(x: &[f64], emb: &RffEmbedding) -> Result<Vec<f64>> {
    emb.embed(&Mat::row_vector(x)).map(Mat::into_vec)
}
