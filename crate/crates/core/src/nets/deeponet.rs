use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FcnnSpec, RffEmbedding};
use crate::autodiff::{Dual, Layout, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::fdm::{InitialCondition, Trajectory};
use crate::mat::Mat;

/// Hyperparameters of a physics-informed DeepONet. Branch and trunk share
/// width, depth and output width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepOnetArch {
    pub width: usize,
    pub depth: usize,
    pub c_rff: usize,
    pub sigma_prime: f64,
    /// `c_O`, even: the first half forms `p̂`, the second `q̂`.
    pub output_dim: usize,
    /// `s^t`: the branch sees `t / s^t`.
    pub scale_t: f64,
    /// `s^{p,q}`: the trunk sees `ic / s^{p,q}`; outputs are multiplied by it.
    pub scale_pq: f64,
    pub rff_seed: u64,
}

impl DeepOnetArch {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 || self.output_dim % 2 != 0 {
            return Err(Error::shape(format!("output width {} must be even and > 0", self.output_dim)));
        }
        if self.width != 2 * self.c_rff {
            return Err(Error::shape(format!(
                "hidden width {} must equal 2 x c_RFF = {}",
                self.width,
                2 * self.c_rff
            )));
        }
        if !(self.scale_t > 0.0 && self.scale_pq > 0.0 && self.sigma_prime > 0.0) {
            return Err(Error::config("DeepONet scales and RFF sigma must be > 0"));
        }
        self.net_spec().validate()
    }

    pub fn net_spec(&self) -> FcnnSpec {
        FcnnSpec { input_dim: 2 * self.c_rff, width: self.width, depth: self.depth, output_dim: self.output_dim }
    }

    pub fn layout(&self) -> Layout {
        let net = self.net_spec().layout();
        Layout::concat(&[("branch.", &net), ("trunk.", &net)])
    }
}

/// A batch of `(t, ic)` rows with the initial conditions deduplicated: row
/// `i` uses `ics[index[i]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorInput {
    pub t: Vec<f64>,
    pub ics: Vec<InitialCondition>,
    pub index: Arc<[usize]>,
}

impl OperatorInput {
    pub fn new(t: Vec<f64>, ics: Vec<InitialCondition>, index: Vec<usize>) -> Result<Self> {
        if t.len() != index.len() {
            return Err(Error::shape(format!("{} times but {} IC rows", t.len(), index.len())));
        }
        if index.iter().any(|&i| i >= ics.len()) {
            return Err(Error::shape("IC index out of range"));
        }
        Ok(Self { t, ics, index: index.into() })
    }

    /// Row-wise pairs; identical ICs (bitwise) are evaluated once.
    pub fn from_rows(t: &[f64], ic: &[InitialCondition]) -> Result<Self> {
        if t.len() != ic.len() {
            return Err(Error::shape(format!("{} times but {} initial conditions", t.len(), ic.len())));
        }
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        let mut ics = Vec::new();
        let index = ic
            .iter()
            .map(|c| {
                *seen.entry((c.p0.to_bits(), c.q0.to_bits())).or_insert_with(|| {
                    ics.push(*c);
                    ics.len() - 1
                })
            })
            .collect();
        Self::new(t.to_vec(), ics, index)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetModel {
    arch: DeepOnetArch,
    rff_branch: RffEmbedding,
    rff_trunk: RffEmbedding,
    pub params: ParamVector,
}

impl DeepOnetModel {
    pub fn new(arch: DeepOnetArch, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let spec = arch.net_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut flat = spec.init(&mut rng).into_vec();
        flat.extend(spec.init(&mut rng).into_vec());
        let params = ParamVector::from_flat(&arch.layout(), flat)?;
        Self::from_parts(arch, None, params)
    }

    pub fn from_parts(
        arch: DeepOnetArch,
        rff: Option<(RffEmbedding, RffEmbedding)>,
        params: ParamVector,
    ) -> Result<Self> {
        arch.validate()?;
        if params.layout() != &arch.layout() {
            return Err(Error::shape("parameters do not match the DeepONet layout"));
        }
        let (rff_branch, rff_trunk) = match rff {
            Some(pair) => pair,
            None => (
                RffEmbedding::new(1, arch.c_rff, arch.sigma_prime, arch.rff_seed, 0)?,
                RffEmbedding::new(2, arch.c_rff, arch.sigma_prime, arch.rff_seed, 1)?,
            ),
        };
        if rff_branch.input_dim() != 1 || rff_trunk.input_dim() != 2 {
            return Err(Error::shape("RFF input dimensions must be 1 (branch) and 2 (trunk)"));
        }
        if rff_branch.c_rff() != arch.c_rff || rff_trunk.c_rff() != arch.c_rff {
            return Err(Error::shape("RFF size does not match the architecture"));
        }
        Ok(Self { arch, rff_branch, rff_trunk, params })
    }

    pub fn arch(&self) -> &DeepOnetArch {
        &self.arch
    }

    pub fn rff(&self) -> (&RffEmbedding, &RffEmbedding) {
        (&self.rff_branch, &self.rff_trunk)
    }

    /// Records `(p̂, q̂)` with time tangents. The trunk runs once per unique IC.
    pub fn record(&self, tape: &mut Tape, vars: &[Var], input: &OperatorInput) -> Result<(Dual, Dual)> {
        if input.is_empty() {
            return Err(Error::config("empty operator batch"));
        }
        let spec = self.arch.net_spec();
        let nb = spec.block_count();
        if vars.len() != 2 * nb {
            return Err(Error::shape("parameter leaves do not match the DeepONet layout"));
        }
        let (s_t, s_pq) = (self.arch.scale_t, self.arch.scale_pq);

        let tau = Mat::from_fn(input.len(), 1, |r, _| input.t[r] / s_t);
        let (f, df) = self.rff_branch.embed_with_tangent(&tau, &Mat::filled(input.len(), 1, 1.0 / s_t))?;
        let xb = tape.dual_constant(f, Some(df));
        let b = spec.record(tape, &vars[..nb], xb);

        let ic = Mat::from_fn(input.ics.len(), 2, |r, c| {
            let ic = input.ics[r];
            (if c == 0 { ic.p0 } else { ic.q0 }) / s_pq
        });
        let ft = tape.constant(self.rff_trunk.embed(&ic)?);
        let ft = tape.lift(ft);
        let r = spec.record(tape, &vars[nb..], ft);
        let r = tape.d_gather_rows(r, input.index.clone());

        let prod = tape.d_mul(b, r);
        let half = self.arch.output_dim / 2;
        let p = tape.d_sum_cols(prod, 0, half);
        let q = tape.d_sum_cols(prod, half, 2 * half);
        Ok((tape.d_scale(p, s_pq), tape.d_scale(q, s_pq)))
    }

    /// `(p̂, q̂, p̂_t, q̂_t)` for the rows of `input`.
    pub fn eval_with_derivative(&self, input: &OperatorInput) -> Result<[Vec<f64>; 4]> {
        let (mut tape, vars) = Tape::with_params(&self.params);
        let (p, q) = self.record(&mut tape, &vars, input)?;
        let col = |v: Option<Var>| v.map(|v| tape.value(v).as_slice().to_vec()).unwrap_or_else(|| vec![0.0; input.len()]);
        Ok([
            tape.value(p.primal).as_slice().to_vec(),
            tape.value(q.primal).as_slice().to_vec(),
            col(p.tangent),
            col(q.tangent),
        ])
    }

    pub fn eval(&self, t: &[f64], ic: &[InitialCondition]) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = OperatorInput::from_rows(t, ic)?;
        let (mut tape, vars) = Tape::with_params(&self.params);
        let (p, q) = self.record(&mut tape, &vars, &input)?;
        Ok((tape.value(p.primal).as_slice().to_vec(), tape.value(q.primal).as_slice().to_vec()))
    }

    /// Autoregressive prediction beyond the training horizon: the time axis
    /// is cut into segments of length `s^t`, and each segment starts from the
    /// previous segment's predicted end state.
    pub fn rollout(&self, ic: InitialCondition, sample_rate: f64, samples: usize) -> Result<Trajectory> {
        if !(sample_rate > 0.0) || samples == 0 {
            return Err(Error::config("rollout needs a positive rate and at least one sample"));
        }
        let seg = self.arch.scale_t;
        let mut p = Vec::with_capacity(samples);
        let mut q = Vec::with_capacity(samples);
        let mut state = ic;
        let mut k = 0usize;
        let mut n = 0usize;
        while n < samples {
            let t0 = k as f64 * seg;
            let mut local = Vec::new();
            while n + local.len() < samples {
                let t = (n + local.len()) as f64 / sample_rate;
                if t >= t0 + seg * (1.0 - 1e-9) {
                    break;
                }
                local.push(t - t0);
            }
            local.push(seg);
            let ics = vec![state; local.len()];
            let (ps, qs) = self.eval(&local, &ics)?;
            let m = local.len() - 1;
            p.extend_from_slice(&ps[..m]);
            q.extend_from_slice(&qs[..m]);
            n += m;
            state = InitialCondition { p0: ps[m], q0: qs[m] };
            k += 1;
        }
        Ok(Trajectory { sample_rate, t0: 0.0, p, q })
    }
}

pub fn deeponet_eval(model: &DeepOnetModel, t: &[f64], ic: &[InitialCondition]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.eval(t, ic)
}
