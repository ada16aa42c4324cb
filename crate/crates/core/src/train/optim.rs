//! First-order optimizers over a [`ParamVector`].
//!
//! The SOAP variant runs Adam in the eigenbasis of per-block Shampoo
//! preconditioners: for a matrix block with gradient `G`,
//! `L += G Gᵀ`, `R += Gᵀ G`, `G̃ = Q_Lᵀ G Q_R`, and the Adam direction computed
//! from `G̃` is rotated back with `Q_L · Q_Rᵀ`. The first moment is kept in
//! the original space and rotated on use; the second moment lives in the
//! rotated space. Blocks with a unit dimension (biases, the scalar output
//! layer) use plain Adam.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::error::{Error, Result};
use crate::mat::{gemm, Mat};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// `lr0 · decay_rate^(step / decay_steps)` with a continuous exponent.
pub fn lr_schedule(step: usize, lr0: f64, decay_rate: f64, decay_steps: usize) -> f64 {
    lr0 * decay_rate.powf(step as f64 / decay_steps.max(1) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Soap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoapSettings {
    /// Steps between eigenbasis refreshes.
    pub refresh: usize,
    /// Added to the accumulators' diagonal before decomposition.
    pub damping: f64,
}

impl Default for SoapSettings {
    fn default() -> Self {
        Self { refresh: 10, damping: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        params.check_same_layout(grad)?;
        self.t += 1;
        adam_update(params.as_mut_slice(), grad.as_slice(), &mut self.m, &mut self.v, self.t, lr);
        Ok(())
    }
}

fn adam_update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..theta.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        theta[i] -= lr * mh / (vh.sqrt() + EPS);
    }
}

/// One-shot form: `adam_step(state, params, grad, lr)`.
pub fn adam_step(state: &mut Adam, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
    state.step(params, grad, lr)
}

#[derive(Clone, Debug)]
struct SoapBlock {
    rows: usize,
    cols: usize,
    l: Mat,
    r: Mat,
    ql: Mat,
    qr: Mat,
    m: Mat,
    v: Mat,
    /// Eigendecomposition failed once; the block runs plain Adam from then on.
    fallback: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Clone, Debug)]
enum BlockState {
    Adam { m: Vec<f64>, v: Vec<f64> },
    Soap(Box<SoapBlock>),
}

#[derive(Clone, Debug)]
pub struct Soap {
    blocks: Vec<BlockState>,
    settings: SoapSettings,
    t: u64,
}

impl Soap {
    pub fn new(layout_of: &ParamVector, settings: SoapSettings) -> Self {
        let blocks = layout_of
            .layers()
            .iter()
            .map(|l| {
                if l.is_matrix() {
                    BlockState::Soap(Box::new(SoapBlock {
                        rows: l.rows,
                        cols: l.cols,
                        l: Mat::zeros(l.rows, l.rows),
                        r: Mat::zeros(l.cols, l.cols),
                        ql: Mat::identity(l.rows),
                        qr: Mat::identity(l.cols),
                        m: Mat::zeros(l.rows, l.cols),
                        v: Mat::zeros(l.rows, l.cols),
                        fallback: None,
                    }))
                } else {
                    BlockState::Adam { m: vec![0.0; l.len()], v: vec![0.0; l.len()] }
                }
            })
            .collect();
        Self { blocks, settings, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Left and right eigenbases of a matrix block (`None` for Adam blocks).
    pub fn eigenbases(&self, layer: usize) -> Option<(&Mat, &Mat)> {
        match &self.blocks[layer] {
            BlockState::Soap(b) if b.fallback.is_none() => Some((&b.ql, &b.qr)),
            _ => None,
        }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        params.check_same_layout(grad)?;
        if params.layers().len() != self.blocks.len() {
            return Err(Error::shape("optimizer state does not match the parameter layout"));
        }
        self.t += 1;
        let t = self.t;
        let refresh = t == 1 || t % self.settings.refresh.max(1) as u64 == 0;
        for (i, state) in self.blocks.iter_mut().enumerate() {
            let range = params.layers()[i].range();
            let g = &grad.as_slice()[range.clone()];
            let theta = &mut params.as_mut_slice()[range];
            match state {
                BlockState::Adam { m, v } => adam_update(theta, g, m, v, t, lr),
                BlockState::Soap(b) => {
                    if let Some((m, v)) = &mut b.fallback {
                        adam_update(theta, g, m, v, t, lr);
                        continue;
                    }
                    b.update(theta, g, t, lr);
                    if refresh {
                        if let Err(reason) = b.refresh(self.settings.damping) {
                            log::warn!("SOAP block {i}: {reason}; falling back to Adam");
                            // The rotated-space moments cannot be reused; the
                            // original-space first moment can.
                            let m = b.m.as_slice().to_vec();
                            let v: Vec<f64> = g.iter().map(|x| (1.0 - BETA2) * x * x).collect();
                            b.fallback = Some((m, v));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl SoapBlock {
    fn update(&mut self, theta: &mut [f64], g: &[f64], t: u64, lr: f64) {
        let g = Mat::from_vec(self.rows, self.cols, g.to_vec());
        gemm(1.0, &g, false, &g, true, 1.0, &mut self.l);
        gemm(1.0, &g, true, &g, false, 1.0, &mut self.r);
        for (m, x) in self.m.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *m = BETA1 * *m + (1.0 - BETA1) * x;
        }
        let g_rot = self.rotate(&g);
        let m_rot = self.rotate(&self.m);
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        let mut n = Mat::zeros(self.rows, self.cols);
        for k in 0..n.len() {
            let x = g_rot.as_slice()[k];
            let v = &mut self.v.as_mut_slice()[k];
            *v = BETA2 * *v + (1.0 - BETA2) * x * x;
            n.as_mut_slice()[k] = (m_rot.as_slice()[k] / bc1) / ((*v / bc2).sqrt() + EPS);
        }
        // Δ = Q_L N Q_Rᵀ
        let mut tmp = Mat::zeros(self.rows, self.cols);
        gemm(1.0, &self.ql, false, &n, false, 0.0, &mut tmp);
        let mut delta = Mat::zeros(self.rows, self.cols);
        gemm(1.0, &tmp, false, &self.qr, true, 0.0, &mut delta);
        for (th, d) in theta.iter_mut().zip(delta.as_slice()) {
            *th -= lr * d;
        }
    }

    /// `Q_Lᵀ X Q_R`
    fn rotate(&self, x: &Mat) -> Mat {
        let mut tmp = Mat::zeros(self.rows, self.cols);
        gemm(1.0, &self.ql, true, x, false, 0.0, &mut tmp);
        let mut out = Mat::zeros(self.rows, self.cols);
        gemm(1.0, &tmp, false, &self.qr, false, 0.0, &mut out);
        out
    }

    fn refresh(&mut self, damping: f64) -> std::result::Result<(), String> {
        let ql = eigenbasis(&self.l, damping, &self.ql)?;
        let qr = eigenbasis(&self.r, damping, &self.qr)?;
        self.ql = ql;
        self.qr = qr;
        Ok(())
    }
}

/// Orthonormal eigenvectors of `a + damping·I`, ordered and signed to follow
/// the columns of `previous` as closely as possible, so that the rotated
/// second moment stays meaningful across refreshes.
fn eigenbasis(a: &Mat, damping: f64, previous: &Mat) -> std::result::Result<Mat, String> {
    let n = a.rows();
    let dm = DMatrix::from_fn(n, n, |i, j| a.get(i, j) + if i == j { damping } else { 0.0 });
    if dm.iter().any(|x| !x.is_finite()) {
        return Err("non-finite preconditioner accumulator".into());
    }
    let eig = SymmetricEigen::try_new(dm, 1e-14, 10_000).ok_or("eigendecomposition did not converge")?;
    let vecs = eig.eigenvectors;
    if vecs.iter().any(|x| !x.is_finite()) {
        return Err("non-finite eigenvectors".into());
    }
    let mut used = vec![false; n];
    let mut out = Mat::zeros(n, n);
    for j in 0..n {
        let mut best = (usize::MAX, -1.0f64, 1.0f64);
        for k in (0..n).filter(|&k| !used[k]) {
            let dot: f64 = (0..n).map(|i| previous.get(i, j) * vecs[(i, k)]).sum();
            if dot.abs() > best.1 {
                best = (k, dot.abs(), if dot < 0.0 { -1.0 } else { 1.0 });
            }
        }
        let (k, _, sign) = best;
        used[k] = true;
        for i in 0..n {
            out.set(i, j, sign * vecs[(i, k)]);
        }
    }
    Ok(out)
}

/// One-shot form: `soap_step(state, params, grad, lr)`.
pub fn soap_step(state: &mut Soap, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
    state.step(params, grad, lr)
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(Adam),
    Soap(Soap),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamVector, soap: SoapSettings) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(params.len())),
            OptimizerKind::Soap => Optimizer::Soap(Soap::new(params, soap)),
        }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grad, lr),
            Optimizer::Soap(s) => s.step(params, grad, lr),
        }
    }
}
