//! Hessian-vector product oracles: closed-form Hessians of quadratics and
//! finite differences of gradients on a physics-informed loss.

use bowsim_core::autodiff::{grad, hvp, Layout, ParamVector, Tape, Var};
use bowsim_core::fdm::{InitialCondition, OscillatorConfig};
use bowsim_core::nets::{PinnArch, PinnModel};
use bowsim_core::train::{collocation, LossWeights, PinnObjective};
use bowsim_core::{Mat, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Symmetric `A` with entries in `[−1, 1]`.
pub fn random_symmetric(n: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = rng.random_range(-1.0..1.0);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    a
}

/// `½ θᵀAθ + bᵀθ`, whose Hessian is `A`.
pub fn quadratic(a: Mat, b: Vec<f64>) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
    move |tape: &mut Tape, p: &[Var]| {
        let am = tape.constant(a.clone());
        let bm = tape.constant(Mat::row_vector(&b));
        let xa = tape.affine(p[0], am, None);
        let xax = tape.mul(p[0], xa);
        let half = tape.scale(xax, 0.5);
        let lin = tape.mul(p[0], bm);
        let s = tape.add(half, lin);
        Ok(tape.sum(s))
    }
}

/// Max over a few random `v` of `‖Hv − Av‖∞ / max(‖Av‖∞, 1)`, plus the same
/// for the dense Hessian assembled from HVPs.
pub fn quadratic_hvp_error(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_symmetric(n, seed);
    let f = quadratic(a.clone(), random_vec(&mut rng, n));
    let layout = Layout::new([("theta".to_string(), 1, n)]);
    let theta = ParamVector::from_flat(&layout, random_vec(&mut rng, n)).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let v = ParamVector::from_flat(&layout, random_vec(&mut rng, n)).unwrap();
        let hv = hvp(&f, &theta, &v).unwrap();
        let av = Mat::row_vector(v.as_slice()).matmul(&a);
        let scale = av.as_slice().iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let err = hv.as_slice().iter().zip(av.as_slice()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(err / scale);
    }
    if n <= 200 {
        let h = bowsim_core::autodiff::dense_hessian(&f, &theta).unwrap();
        worst = worst.max(h.max_abs_diff(&a));
    }
    worst
}

/// A small PINN with its collocation set, owning what `PinnObjective`
/// borrows.
pub struct PinnProblem {
    pub model: PinnModel,
    pub config: OscillatorConfig,
    pub t: Vec<f64>,
}

impl PinnProblem {
    pub fn new(seed: u64) -> Self {
        let arch = PinnArch {
            width: 16,
            depth: 2,
            c_rff: 8,
            sigma_prime: 1.0,
            scale_t: 0.02,
            scale_pq: 0.2,
            t_start: 0.0,
            rff_seed: seed,
        };
        let t = collocation(&arch, 64, seed);
        Self { model: PinnModel::new(arch, seed).unwrap(), config: OscillatorConfig::standard(10.0), t }
    }

    pub fn objective(&self) -> PinnObjective<'_> {
        PinnObjective {
            model: &self.model,
            config: &self.config,
            t: &self.t,
            ic: InitialCondition::zero(),
            weights: LossWeights::manual(),
        }
    }

    /// Unit-norm random direction shaped like the parameters.
    pub fn direction(&self, seed: u64) -> ParamVector {
        let theta = &self.model.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_vec(&mut rng, theta.len());
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        ParamVector::from_flat(theta.layout(), raw.iter().map(|x| x / norm).collect()).unwrap()
    }
}

/// `‖Hv − (∇L(θ+εv) − ∇L(θ−εv))/2ε‖∞ / ‖·‖∞` on a small PINN loss, with a
/// fourth-order stencil.
pub fn pinn_hvp_fd_error(seed: u64) -> f64 {
    let problem = PinnProblem::new(seed);
    let obj = problem.objective();
    let theta = &problem.model.params;
    let v = problem.direction(seed ^ 0xfd);
    let hv = hvp(&obj, theta, &v).unwrap();

    let eps = 1e-4;
    let g_at = |s: f64| {
        let mut p = theta.clone();
        for (x, d) in p.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *x += s * d;
        }
        grad(&obj, &p).unwrap().into_vec()
    };
    let (g2, g1, gm1, gm2) = (g_at(2.0 * eps), g_at(eps), g_at(-eps), g_at(-2.0 * eps));
    let fd: Vec<f64> = (0..theta.len()).map(|i| (-g2[i] + 8.0 * g1[i] - 8.0 * gm1[i] + gm2[i]) / (12.0 * eps)).collect();
    let scale = fd.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let err = hv.as_slice().iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / scale
}
