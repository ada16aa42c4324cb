use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Objective, ParamVector, Tape, Var};
use crate::error::{Error, Result};

/// `v ↦ H v` for the Hessian of a recorded scalar loss. The graph is
/// recorded once and swept per product.
pub struct HvpOperator {
    tape: Tape,
    loss: Var,
    params: ParamVector,
}

impl HvpOperator {
    pub fn new<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<Self> {
        let (mut tape, vars) = Tape::with_params(params);
        let loss = objective.record(&mut tape, &vars)?;
        if tape.shape(loss) != (1, 1) {
            return Err(Error::shape(format!("objective must be scalar, got {:?}", tape.shape(loss))));
        }
        Ok(Self { tape, loss, params: params.clone() })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn loss(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = ParamVector::from_flat(self.params.layout(), x.to_vec())?;
        let (_, hv) = self.tape.gradient_and_hvp(self.loss, &v)?;
        Ok(hv.into_vec())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Two passes of classical Gram-Schmidt against `basis`.
fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            axpy(w, -c, q);
        }
    }
}

pub(crate) fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lanczos recurrence with full reorthogonalization.
pub(crate) struct Lanczos {
    pub basis: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// `beta[j]` couples `basis[j]` and `basis[j + 1]`; after the last step it
    /// holds the norm of the unnormalized residual.
    pub beta: Vec<f64>,
    next: Option<Vec<f64>>,
    /// Set when the Krylov space became invariant with no restart vector.
    pub exhausted: bool,
    scale: f64,
}

/// Below this fraction of the largest diagonal entry, `β` counts as zero.
const BREAKDOWN: f64 = 1e-10;

impl Lanczos {
    pub fn new(start: Vec<f64>) -> Result<Self> {
        let nrm = norm(&start);
        if !(nrm > 0.0 && nrm.is_finite()) {
            return Err(Error::Spectral { reason: "zero or non-finite start vector".into(), residuals: vec![] });
        }
        let q: Vec<f64> = start.iter().map(|x| x / nrm).collect();
        Ok(Self { basis: vec![], alpha: vec![], beta: vec![], next: Some(q), exhausted: false, scale: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    /// One step. On breakdown, continues from `restart` (orthogonalized
    /// against the basis) when given; otherwise marks the space exhausted.
    pub fn step<F>(&mut self, apply: &F, restart: Option<&mut dyn FnMut() -> Vec<f64>>) -> Result<()>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        let Some(q) = self.next.take() else {
            return Ok(());
        };
        let mut w = apply(&q)?;
        if w.len() != q.len() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Spectral { reason: "non-finite Hessian-vector product".into(), residuals: vec![] });
        }
        let a = dot(&q, &w);
        self.scale = self.scale.max(a.abs()).max(norm(&w));
        self.basis.push(q);
        self.alpha.push(a);
        orthogonalize(&mut w, &self.basis);
        let b = norm(&w);
        let n = self.basis[0].len();
        if self.basis.len() == n {
            self.beta.push(b);
            self.exhausted = true;
            return Ok(());
        }
        if b > BREAKDOWN * self.scale.max(f64::MIN_POSITIVE) {
            self.beta.push(b);
            self.next = Some(w.iter().map(|x| x / b).collect());
            return Ok(());
        }
        self.beta.push(0.0);
        match restart {
            Some(draw) => {
                for _ in 0..3 {
                    let mut r = draw();
                    orthogonalize(&mut r, &self.basis);
                    let rn = norm(&r);
                    if rn > 1e-8 {
                        self.next = Some(r.iter().map(|x| x / rn).collect());
                        return Ok(());
                    }
                }
                self.exhausted = true;
            }
            None => self.exhausted = true,
        }
        Ok(())
    }

    /// Ritz values (descending) and the eigenvectors of the tridiagonal
    /// matrix as columns in the same order.
    pub fn ritz(&self) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let m = self.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = self.alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        let eig = SymmetricEigen::try_new(t, 1e-15, 10_000).ok_or_else(|| Error::Spectral {
            reason: "tridiagonal eigendecomposition did not converge".into(),
            residuals: vec![],
        })?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok((values, vectors))
    }

    /// Residual estimate `|β_m s_{m,i}|` of Ritz pair `i`.
    pub fn residual_estimate(&self, s: &DMatrix<f64>, i: usize) -> f64 {
        let m = self.len();
        (self.beta[m - 1] * s[(m - 1, i)]).abs()
    }

    pub fn ritz_vector(&self, s: &DMatrix<f64>, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.basis[0].len()];
        for (j, q) in self.basis.iter().enumerate() {
            axpy(&mut y, s[(j, i)], q);
        }
        let n = norm(&y);
        y.iter_mut().for_each(|x| *x /= n);
        // deterministic sign: largest component positive
        let big = y.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            y.iter_mut().for_each(|x| *x = -*x);
        }
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanczosSettings {
    pub max_steps: usize,
    /// Required `‖Hε − λε‖ / |λ|` per returned pair.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LanczosSettings {
    fn default() -> Self {
        Self { max_steps: 300, tol: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: ParamVector,
    /// `‖Hε − λε‖`, measured with one extra Hessian-vector product.
    pub residual: f64,
}

pub const MAX_EIGENPAIRS: usize = 10;

/// The `k` algebraically largest Hessian eigenpairs by Lanczos.
pub fn top_eigenpairs<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    k: usize,
    settings: &LanczosSettings,
) -> Result<Vec<EigenPair>> {
    let op = HvpOperator::new(objective, params)?;
    top_eigenpairs_of(&op, k, settings)
}

pub fn top_eigenpairs_of(op: &HvpOperator, k: usize, settings: &LanczosSettings) -> Result<Vec<EigenPair>> {
    let n = op.dim();
    if k == 0 || k > MAX_EIGENPAIRS || k > n {
        return Err(Error::config(format!("k must be in 1..={} and <= {n}, got {k}", MAX_EIGENPAIRS.min(n))));
    }
    let apply = |x: &[f64]| op.apply(x);
    let mut rng = crate::spectra::rng(settings.seed, 0);
    let mut lz = Lanczos::new(gaussian_vector(&mut rng, n))?;
    let max_steps = settings.max_steps.max(k).min(n);
    let mut draw = || gaussian_vector(&mut rng, n);
    let mut best_residuals = vec![];
    loop {
        lz.step(&apply, Some(&mut draw))?;
        let m = lz.len();
        let check = lz.exhausted || m >= max_steps || (m >= k && m % 5 == 0);
        if !check {
            continue;
        }
        if m < k {
            return Err(Error::Spectral { reason: format!("Krylov space has dimension {m} < k"), residuals: vec![] });
        }
        let (values, s) = lz.ritz()?;
        let lmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = |v: f64| v.abs().max(1e-8 * lmax).max(f64::MIN_POSITIVE);
        let estimated = (0..k).all(|i| lz.residual_estimate(&s, i) <= 0.01 * settings.tol * floor(values[i]));
        let last_chance = lz.exhausted || m >= max_steps;
        if !(estimated || last_chance) {
            continue;
        }
        let mut pairs = Vec::with_capacity(k);
        for (i, &value) in values.iter().enumerate().take(k) {
            let y = lz.ritz_vector(&s, i);
            let mut r = op.apply(&y)?;
            axpy(&mut r, -value, &y);
            let residual = norm(&r);
            pairs.push(EigenPair { value, vector: ParamVector::from_flat(op.params().layout(), y)?, residual });
        }
        best_residuals = pairs.iter().map(|p| p.residual).collect();
        if pairs.iter().all(|p| p.residual <= settings.tol * floor(p.value)) {
            return Ok(pairs);
        }
        if last_chance {
            break;
        }
    }
    Err(Error::Spectral { reason: format!("no convergence within {max_steps} Lanczos steps"), residuals: best_residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::spectra::testing::quadratic;

    #[test]
    fn diagonal_quadratic_gives_axis_eigenvectors() {
        let n = 30;
        let mut a = Mat::zeros(n, n);
        for i in 0..n {
            a.set(i, i, 1.0);
        }
        a.set(0, 0, 5.0);
        a.set(1, 1, 2.0);
        let theta = ParamVector::single("theta", vec![0.3; n]);
        let pairs = top_eigenpairs(&quadratic(a), &theta, 2, &LanczosSettings::default()).unwrap();
        assert!((pairs[0].value - 5.0).abs() < 1e-10);
        assert!((pairs[1].value - 2.0).abs() < 1e-10);
        assert!((pairs[0].vector.as_slice()[0] - 1.0).abs() < 1e-8);
        assert!((pairs[1].vector.as_slice()[1] - 1.0).abs() < 1e-8);
        assert!(pairs[0].value >= pairs[1].value);
    }

    #[test]
    fn identity_hessian_survives_breakdown() {
        let n = 12;
        let theta = ParamVector::single("theta", vec![0.0; n]);
        let pairs = top_eigenpairs(&quadratic(Mat::identity(n)), &theta, 3, &LanczosSettings::default()).unwrap();
        for p in &pairs {
            assert!((p.value - 1.0).abs() < 1e-12);
            assert!((p.vector.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn k_is_bounded() {
        let theta = ParamVector::single("theta", vec![0.0; 20]);
        let q = quadratic(Mat::identity(20));
        assert!(matches!(top_eigenpairs(&q, &theta, 11, &LanczosSettings::default()), Err(Error::Config(_))));
        assert!(matches!(top_eigenpairs(&q, &theta, 0, &LanczosSettings::default()), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_steps_is_a_spectral_error_with_residuals() {
        let n = 60;
        let a = Mat::from_fn(n, n, |i, j| if i == j { 1.0 + (i as f64) * 0.01 } else { 0.0 });
        let theta = ParamVector::single("theta", vec![0.0; n]);
        let settings = LanczosSettings { max_steps: 4, ..Default::default() };
        match top_eigenpairs(&quadratic(a), &theta, 2, &settings) {
            Err(Error::Spectral { residuals, .. }) => assert_eq!(residuals.len(), 2),
            other => panic!("expected spectral error, got {other:?}"),
        }
    }
}
