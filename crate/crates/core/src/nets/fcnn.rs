//! Modified fully connected network with two gating streams.
//!
//! ```text
//! U = σ(X W^U + b^U)            V = σ(X W^V + b^V)
//! H¹ = σ(X W^{Z,1} + b^{Z,1})
//! Z^k = σ(H^k W^{Z,k} + b^{Z,k})
//! H^{k+1} = (1 − Z^k) ⊙ U + Z^k ⊙ V = U + Z^k ⊙ (V − U)
//! O = H^{L+1} W^O + b^O
//! ```
//!
//! `W^{Z,1}` multiplies both `X` and `H¹`, so the input width must equal the
//! hidden width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Layout, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcnnSpec {
    pub input_dim: usize,
    /// `c_U = c_V = c_Z`
    pub width: usize,
    /// Number of `Z` layers, `L`.
    pub depth: usize,
    /// `c_O`
    pub output_dim: usize,
}

impl FcnnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.output_dim == 0 {
            return Err(Error::config(format!("degenerate network {self:?}")));
        }
        if self.input_dim != self.width {
            return Err(Error::shape(format!(
                "input width {} must equal hidden width {} (W^Z,1 acts on both X and H^1)",
                self.input_dim, self.width
            )));
        }
        Ok(())
    }

    /// Blocks in declaration order: `W_U, b_U, W_V, b_V, (W_Zk, b_Zk)…, W_O, b_O`.
    pub fn layout(&self) -> Layout {
        let (i, w) = (self.input_dim, self.width);
        let mut blocks = vec![
            ("W_U".to_string(), i, w),
            ("b_U".to_string(), 1, w),
            ("W_V".to_string(), i, w),
            ("b_V".to_string(), 1, w),
        ];
        for k in 1..=self.depth {
            blocks.push((format!("W_Z{k}"), w, w));
            blocks.push((format!("b_Z{k}"), 1, w));
        }
        blocks.push(("W_O".to_string(), w, self.output_dim));
        blocks.push(("b_O".to_string(), 1, self.output_dim));
        Layout::new(blocks)
    }

    pub fn block_count(&self) -> usize {
        6 + 2 * self.depth
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let layout = self.layout();
        let mut params = ParamVector::zeros(&layout);
        for (i, spec) in layout.layers().iter().enumerate() {
            if spec.rows == 1 && spec.name.starts_with('b') {
                continue;
            }
            let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
            for v in params.block_mut(i) {
                *v = rng.random_range(-limit..limit);
            }
        }
        params
    }

    /// Records the forward pass for parameter leaves `vars` (this network's
    /// blocks, in layout order) on input `x`, carrying the input tangent.
    pub fn record(&self, tape: &mut Tape, vars: &[Var], x: Dual) -> Dual {
        debug_assert_eq!(vars.len(), self.block_count());
        let u = tape.d_affine(x, vars[0], Some(vars[1]));
        let u = tape.d_tanh(u);
        let v = tape.d_affine(x, vars[2], Some(vars[3]));
        let v = tape.d_tanh(v);
        let v_minus_u = tape.d_sub(v, u);

        let h = tape.d_affine(x, vars[4], Some(vars[5]));
        let mut h = tape.d_tanh(h);
        for k in 0..self.depth {
            let z = tape.d_affine(h, vars[4 + 2 * k], Some(vars[5 + 2 * k]));
            let z = tape.d_tanh(z);
            let gated = tape.d_mul(z, v_minus_u);
            h = tape.d_add(u, gated);
        }
        let o = 4 + 2 * self.depth;
        tape.d_affine(h, vars[o], Some(vars[o + 1]))
    }
}

/// Output `O` of the network for a feature batch `x` (`n x input_dim`).
pub fn fcnn_forward(spec: &FcnnSpec, params: &ParamVector, x: &Mat) -> Result<Mat> {
    spec.validate()?;
    if params.layout() != &spec.layout() {
        return Err(Error::shape("parameters do not match the network layout"));
    }
    if x.cols() != spec.input_dim {
        return Err(Error::shape(format!("network expects {} input columns, got {}", spec.input_dim, x.cols())));
    }
    let (mut tape, vars) = Tape::with_params(params);
    let xin = tape.constant(x.clone());
    let xin = tape.lift(xin);
    let out = spec.record(&mut tape, &vars, xin);
    Ok(tape.value(out.primal).clone())
}
