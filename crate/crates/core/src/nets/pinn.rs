use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FcnnSpec, RffEmbedding};
use crate::autodiff::{Dual, Layout, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Hyperparameters of one PINN window network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnArch {
    /// Hidden width, equal to `2 c_RFF`.
    pub width: usize,
    pub depth: usize,
    pub c_rff: usize,
    pub sigma_prime: f64,
    /// `s^t`: window length; the network sees `(t − t_start) / s^t`.
    pub scale_t: f64,
    /// `s^{p,q}`: output scale of both heads.
    pub scale_pq: f64,
    /// Left edge of the window.
    pub t_start: f64,
    pub rff_seed: u64,
}

impl PinnArch {
    pub fn validate(&self) -> Result<()> {
        if self.width != 2 * self.c_rff {
            return Err(Error::shape(format!(
                "hidden width {} must equal 2 x c_RFF = {}",
                self.width,
                2 * self.c_rff
            )));
        }
        if !(self.scale_t > 0.0 && self.scale_pq > 0.0 && self.sigma_prime > 0.0) {
            return Err(Error::config("PINN scales and RFF sigma must be > 0"));
        }
        self.head_spec().validate()
    }

    pub fn head_spec(&self) -> FcnnSpec {
        FcnnSpec { input_dim: 2 * self.c_rff, width: self.width, depth: self.depth, output_dim: 1 }
    }

    pub fn layout(&self) -> Layout {
        let head = self.head_spec().layout();
        Layout::concat(&[("p.", &head), ("q.", &head)])
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.scale_t
    }
}

/// Two-head PINN `p̂ = s^{p,q} F₁(rff((t − t₀)/s^t))`, `q̂ = s^{p,q} F₂(…)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnModel {
    arch: PinnArch,
    rff_p: RffEmbedding,
    rff_q: RffEmbedding,
    pub params: ParamVector,
}

/// Predictions and time derivatives on a batch of times.
#[derive(Clone, Debug, PartialEq)]
pub struct PinnOutput {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub p_t: Vec<f64>,
    pub q_t: Vec<f64>,
}

impl PinnModel {
    /// Glorot-initialized heads; RFF matrices drawn from `arch.rff_seed`.
    pub fn new(arch: PinnArch, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let spec = arch.head_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let p = spec.init(&mut rng);
        let q = spec.init(&mut rng);
        let mut flat = p.into_vec();
        flat.extend(q.into_vec());
        let params = ParamVector::from_flat(&arch.layout(), flat)?;
        Self::from_parts(arch, None, params)
    }

    /// Builds a model from explicit parameters. `rff` overrides the matrices
    /// that `arch.rff_seed` would generate (used when loading checkpoints).
    pub fn from_parts(arch: PinnArch, rff: Option<(RffEmbedding, RffEmbedding)>, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if params.layout() != &arch.layout() {
            return Err(Error::shape("parameters do not match the PINN layout"));
        }
        let (rff_p, rff_q) = match rff {
            Some(pair) => pair,
            None => (
                RffEmbedding::new(1, arch.c_rff, arch.sigma_prime, arch.rff_seed, 0)?,
                RffEmbedding::new(1, arch.c_rff, arch.sigma_prime, arch.rff_seed, 1)?,
            ),
        };
        for r in [&rff_p, &rff_q] {
            if r.input_dim() != 1 || r.c_rff() != arch.c_rff {
                return Err(Error::shape("RFF matrix does not match the PINN architecture"));
            }
        }
        Ok(Self { arch, rff_p, rff_q, params })
    }

    pub fn arch(&self) -> &PinnArch {
        &self.arch
    }

    pub fn rff(&self) -> (&RffEmbedding, &RffEmbedding) {
        (&self.rff_p, &self.rff_q)
    }

    fn head_blocks(&self) -> usize {
        self.arch.head_spec().block_count()
    }

    /// Records both heads for times `t` (global, not window-relative) with
    /// their time tangents. `vars` are the leaves of `self.params`' layout.
    pub fn record(&self, tape: &mut Tape, vars: &[Var], t: &[f64]) -> Result<(Dual, Dual)> {
        if t.is_empty() {
            return Err(Error::config("empty time batch"));
        }
        let nb = self.head_blocks();
        if vars.len() != 2 * nb {
            return Err(Error::shape("parameter leaves do not match the PINN layout"));
        }
        let spec = self.arch.head_spec();
        let tau = Mat::from_fn(t.len(), 1, |r, _| (t[r] - self.arch.t_start) / self.arch.scale_t);
        let dtau = Mat::filled(t.len(), 1, 1.0 / self.arch.scale_t);
        let mut heads = [None, None];
        for (h, (rff, leaves)) in [(&self.rff_p, &vars[..nb]), (&self.rff_q, &vars[nb..])].into_iter().enumerate() {
            let (f, df) = rff.embed_with_tangent(&tau, &dtau)?;
            let x = tape.dual_constant(f, Some(df));
            let o = spec.record(tape, leaves, x);
            heads[h] = Some(tape.d_scale(o, self.arch.scale_pq));
        }
        Ok((heads[0].unwrap(), heads[1].unwrap()))
    }

    fn warn_outside(&self, t: &[f64]) {
        let (lo, hi) = (self.arch.t_start, self.arch.t_end());
        let slack = 1e-9 * self.arch.scale_t;
        if t.iter().any(|&x| x < lo - slack || x > hi + slack) {
            log::warn!("PINN evaluated outside its window [{lo}, {hi}]; extrapolating");
        }
    }

    /// `(p̂, q̂)` and their time derivatives at `t`.
    pub fn eval_with_derivative(&self, t: &[f64]) -> Result<PinnOutput> {
        self.warn_outside(t);
        let (mut tape, vars) = Tape::with_params(&self.params);
        let (p, q) = self.record(&mut tape, &vars, t)?;
        let col = |v: Option<Var>| v.map(|v| tape.value(v).as_slice().to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        Ok(PinnOutput {
            p: tape.value(p.primal).as_slice().to_vec(),
            q: tape.value(q.primal).as_slice().to_vec(),
            p_t: col(p.tangent),
            q_t: col(q.tangent),
        })
    }

    pub fn eval(&self, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.eval_with_derivative(t).map(|o| (o.p, o.q))
    }
}

/// Window networks chained in time; window `i` covers
/// `[t_start_i, t_start_i + s^t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeMarchingPinn {
    pub windows: Vec<PinnModel>,
}

impl TimeMarchingPinn {
    pub fn t_end(&self) -> f64 {
        self.windows.last().map_or(0.0, |w| w.arch.t_end())
    }

    /// Index of the window responsible for time `t` (the last window whose
    /// start is ≤ t; times past the end use the last window).
    pub fn window_for(&self, t: f64) -> usize {
        self.windows.iter().rposition(|w| w.arch.t_start <= t).unwrap_or(0)
    }

    pub fn eval(&self, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.windows.is_empty() {
            return Err(Error::config("no trained windows"));
        }
        let mut p = vec![0.0; t.len()];
        let mut q = vec![0.0; t.len()];
        for (w, model) in self.windows.iter().enumerate() {
            let idx: Vec<usize> = (0..t.len()).filter(|&i| self.window_for(t[i]) == w).collect();
            if idx.is_empty() {
                continue;
            }
            let tw: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
            let (pw, qw) = model.eval(&tw)?;
            for (k, &i) in idx.iter().enumerate() {
                p[i] = pw[k];
                q[i] = qw[k];
            }
        }
        Ok((p, q))
    }
}

/// Free-function form of [`PinnModel::eval`].
pub fn pinn_eval(model: &PinnModel, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.eval(t)
}
