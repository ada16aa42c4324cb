//! Physics-informed loss terms.
//!
//! ```text
//! L_ODE1 = mean (q̂_t − ω p̂)²
//! L_ODE2 = mean (p̂_t + ω q̂ + F_B φ(p̂ − v_B))²
//! L_IC1  = (p̂(0) − p₀)²          L_IC2 = (q̂(0) − q₀)²
//! L_ob1  = mean (p̂ − p_obs)²     L_ob2 = mean (q̂ − q_obs)²
//! ```
//!
//! `φ` is composed from tape primitives so that its derivatives come from
//! the same adjoint rules as the networks.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::fdm::OscillatorConfig;
use crate::mat::Mat;

/// `λ` for each loss term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub ode1: f64,
    pub ode2: f64,
    pub ic1: f64,
    pub ic2: f64,
    pub ob1: f64,
    pub ob2: f64,
}

impl LossWeights {
    /// Fixed weights used without annealing: `λ_ODE = 10`, `λ_IC = 10⁶`.
    /// Observation terms get the IC weight.
    pub fn manual() -> Self {
        Self { ode1: 10.0, ode2: 10.0, ic1: 1e6, ic2: 1e6, ob1: 1e6, ob2: 1e6 }
    }

    /// Starting point for annealed runs.
    pub fn ones() -> Self {
        Self { ode1: 1.0, ode2: 1.0, ic1: 1.0, ic2: 1.0, ob1: 1.0, ob2: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::config(format!("loss weights must be finite and >= 0: {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.ode1, self.ode2, self.ic1, self.ic2, self.ob1, self.ob2]
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::manual()
    }
}

/// Values of the loss terms; observation terms are `None` outside hybrid runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub ode1: f64,
    pub ode2: f64,
    pub ic1: f64,
    pub ic2: f64,
    pub ob1: Option<f64>,
    pub ob2: Option<f64>,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.ode1, self.ode2, self.ic1, self.ic2, self.ob1.unwrap_or(0.0), self.ob2.unwrap_or(0.0)]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted sum of the terms.
pub fn total_loss(losses: &LossTerms, w: &LossWeights) -> f64 {
    let mut total = w.ode1 * losses.ode1 + w.ode2 * losses.ode2 + w.ic1 * losses.ic1 + w.ic2 * losses.ic2;
    if let (Some(o1), Some(o2)) = (losses.ob1, losses.ob2) {
        total += w.ob1 * o1 + w.ob2 * o2;
    }
    total
}

/// Loss-term nodes on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub ode1: Var,
    pub ode2: Var,
    pub ic1: Var,
    pub ic2: Var,
    pub ob: Option<(Var, Var)>,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> LossTerms {
        let v = |x: Var| tape.value(x).item();
        LossTerms {
            ode1: v(self.ode1),
            ode2: v(self.ode2),
            ic1: v(self.ic1),
            ic2: v(self.ic2),
            ob1: self.ob.map(|(a, _)| v(a)),
            ob2: self.ob.map(|(_, b)| v(b)),
        }
    }

    /// Records the weighted total, in the same order as [`total_loss`].
    pub fn total(&self, tape: &mut Tape, w: &LossWeights) -> Var {
        let mut acc = tape.scale(self.ode1, w.ode1);
        for (v, c) in [(self.ode2, w.ode2), (self.ic1, w.ic1), (self.ic2, w.ic2)] {
            let s = tape.scale(v, c);
            acc = tape.add(acc, s);
        }
        if let Some((o1, o2)) = self.ob {
            for (v, c) in [(o1, w.ob1), (o2, w.ob2)] {
                let s = tape.scale(v, c);
                acc = tape.add(acc, s);
            }
        }
        acc
    }

    /// The terms in weight order, for per-term gradients.
    pub fn terms(&self) -> Vec<Var> {
        let mut v = vec![self.ode1, self.ode2, self.ic1, self.ic2];
        if let Some((a, b)) = self.ob {
            v.push(a);
            v.push(b);
        }
        v
    }
}

fn tangent_or_zero(tape: &mut Tape, d: Dual) -> Var {
    match d.tangent {
        Some(t) => t,
        None => {
            let (r, c) = tape.shape(d.primal);
            tape.constant(Mat::zeros(r, c))
        }
    }
}

/// `F_B φ(p − v_B)` on the tape.
pub fn record_friction(tape: &mut Tape, config: &OscillatorConfig, p: Var) -> Var {
    let a = config.friction.a;
    let eta = tape.offset(p, -config.bow_velocity);
    let e2 = tape.square(eta);
    let arg = tape.scale(e2, -a);
    let arg = tape.offset(arg, 0.5);
    let ex = tape.exp(arg);
    let prod = tape.mul(eta, ex);
    tape.scale(prod, config.bow_force * (2.0 * a).sqrt())
}

/// Pointwise residuals `(q̂_t − ω p̂, p̂_t + ω q̂ + F_B φ(η̂))`.
pub fn record_residuals(tape: &mut Tape, config: &OscillatorConfig, p: Dual, q: Dual) -> (Var, Var) {
    let pt = tangent_or_zero(tape, p);
    let qt = tangent_or_zero(tape, q);
    let wp = tape.scale(p.primal, config.omega);
    let r1 = tape.sub(qt, wp);
    let wq = tape.scale(q.primal, config.omega);
    let fr = record_friction(tape, config, p.primal);
    let r2 = tape.add(pt, wq);
    let r2 = tape.add(r2, fr);
    (r1, r2)
}

/// `(L_ODE1, L_ODE2)` as mean squared residuals.
pub fn record_ode_losses(tape: &mut Tape, config: &OscillatorConfig, p: Dual, q: Dual) -> (Var, Var) {
    let (r1, r2) = record_residuals(tape, config, p, q);
    let s1 = tape.square(r1);
    let s2 = tape.square(r2);
    (tape.mean(s1), tape.mean(s2))
}

/// Mean squared difference between a prediction column and fixed targets.
pub fn record_mse(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    if tape.shape(pred) != (target.len(), 1) {
        return Err(Error::shape(format!("prediction {:?} vs {} targets", tape.shape(pred), target.len())));
    }
    let tgt = tape.constant(Mat::column(target));
    let d = tape.sub(pred, tgt);
    let s = tape.square(d);
    Ok(tape.mean(s))
}

/// Per-term gradients used by the annealing rule.
#[derive(Clone, Debug)]
pub struct TermGradients {
    /// Reference term, `∇L_ODE1`.
    pub ode1: ParamVector,
    pub ode2: ParamVector,
    pub ic1: ParamVector,
    pub ic2: ParamVector,
    pub ob1: Option<ParamVector>,
    pub ob2: Option<ParamVector>,
}

fn mean_abs(g: &ParamVector) -> f64 {
    g.as_slice().iter().map(|x| x.abs()).sum::<f64>() / g.len().max(1) as f64
}

/// `λ_i ← (1−α) λ_i + α · max|∇L_ODE1| / mean|∇L_i|` for every term except the
/// reference. A term whose mean gradient magnitude is zero keeps its weight.
pub fn anneal_weights(current: &LossWeights, grads: &TermGradients, alpha: f64) -> LossWeights {
    let max_ref = grads.ode1.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let upd = |lambda: f64, g: Option<&ParamVector>| -> f64 {
        let Some(g) = g else { return lambda };
        let mean = mean_abs(g);
        if mean == 0.0 || !mean.is_finite() || !max_ref.is_finite() {
            return lambda;
        }
        (1.0 - alpha) * lambda + alpha * (max_ref / mean)
    };
    LossWeights {
        ode1: current.ode1,
        ode2: upd(current.ode2, Some(&grads.ode2)),
        ic1: upd(current.ic1, Some(&grads.ic1)),
        ic2: upd(current.ic2, Some(&grads.ic2)),
        ob1: upd(current.ob1, grads.ob1.as_ref()),
        ob2: upd(current.ob2, grads.ob2.as_ref()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(v: f64) -> LossTerms {
        LossTerms { ode1: v, ode2: v, ic1: v, ic2: v, ob1: None, ob2: None }
    }

    #[test]
    fn total_examples() {
        let zero = LossWeights { ode1: 0.0, ode2: 0.0, ic1: 0.0, ic2: 0.0, ob1: 0.0, ob2: 0.0 };
        assert_eq!(total_loss(&terms(3.0), &zero), 0.0);
        assert_eq!(total_loss(&terms(1.0), &LossWeights::manual()), 2_000_020.0);
        let hybrid = LossTerms { ob1: Some(2.0), ob2: Some(3.0), ..terms(1.0) };
        let w = LossWeights { ob1: 5.0, ob2: 7.0, ..LossWeights::manual() };
        assert_eq!(total_loss(&hybrid, &w), 2_000_020.0 + 10.0 + 21.0);
    }

    #[test]
    fn total_is_linear_in_each_weight() {
        let l = LossTerms { ode1: 0.3, ode2: 1.7, ic1: 2e-3, ic2: 5e-4, ob1: Some(0.2), ob2: Some(0.9) };
        let base = LossWeights::ones();
        let t0 = total_loss(&l, &base);
        for k in 0..6 {
            let mut arr = base.as_array();
            arr[k] += 2.0;
            let w = LossWeights { ode1: arr[0], ode2: arr[1], ic1: arr[2], ic2: arr[3], ob1: arr[4], ob2: arr[5] };
            let term = [l.ode1, l.ode2, l.ic1, l.ic2, l.ob1.unwrap(), l.ob2.unwrap()][k];
            assert!((total_loss(&l, &w) - (t0 + 2.0 * term)).abs() < 1e-14);
        }
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::single("g", v.to_vec())
    }

    fn grads(reference: &[f64], other: &[f64]) -> TermGradients {
        TermGradients {
            ode1: pv(reference),
            ode2: pv(other),
            ic1: pv(other),
            ic2: pv(other),
            ob1: None,
            ob2: None,
        }
    }

    #[test]
    fn equal_statistics_drive_weights_to_one() {
        let g = grads(&[1.0, 1.0], &[1.0, -1.0]);
        let mut w = LossWeights::manual();
        for _ in 0..500 {
            w = anneal_weights(&w, &g, 0.1);
        }
        assert!((w.ic1 - 1.0).abs() < 1e-9 && (w.ode2 - 1.0).abs() < 1e-9);
        assert_eq!(w.ode1, 10.0);
    }

    #[test]
    fn ten_times_larger_reference_drifts_to_ten() {
        let g = grads(&[10.0, -10.0], &[1.0, 1.0]);
        let mut w = LossWeights::ones();
        for _ in 0..500 {
            w = anneal_weights(&w, &g, 0.1);
        }
        assert!((w.ic1 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn zero_mean_gradient_skips_update() {
        let g = grads(&[3.0], &[0.0]);
        let w = anneal_weights(&LossWeights::ones(), &g, 0.1);
        assert_eq!(w.ic1, 1.0);
        assert_eq!(w.ode2, 1.0);
    }

    #[test]
    fn friction_composition_matches_closed_form() {
        let cfg = OscillatorConfig::standard(10.0);
        let mut tape = Tape::new();
        let p = tape.constant(Mat::column(&[0.0, 0.1, 0.25, -0.3]));
        let f = record_friction(&mut tape, &cfg, p);
        for (i, &pv) in [0.0, 0.1, 0.25, -0.3].iter().enumerate() {
            let expected = cfg.friction_force(pv);
            assert!((tape.value(f).get(i, 0) - expected).abs() < 1e-14);
        }
    }
}
