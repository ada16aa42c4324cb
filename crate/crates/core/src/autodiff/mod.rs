//! Tape-based differentiation.
//!
//! Three derivative products are available from one recorded graph:
//!
//! * parameter gradients by reverse sweep ([`Tape::gradient`], [`grad`]);
//! * derivatives with respect to a scalar input (time) by recording the
//!   forward-mode tangent as ordinary nodes ([`Dual`], [`input_derivative`]),
//!   which keeps them differentiable with respect to the parameters;
//! * Hessian-vector products by pushing a parameter tangent through the
//!   forward pass and the adjoint sweep ([`hvp`]).

mod params;
mod tape;

pub use params::{LayerSpec, Layout, ParamVector};
pub use tape::{Dual, Reduction, Tape, Unary, Var};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// A scalar loss recorded from parameter leaves.
pub trait Objective {
    fn record(&self, tape: &mut Tape, params: &[Var]) -> Result<Var>;
}

impl<F> Objective for F
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    fn record(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        self(tape, params)
    }
}

pub fn value<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<f64> {
    let (mut tape, vars) = Tape::with_params(params);
    let loss = objective.record(&mut tape, &vars)?;
    if tape.shape(loss) != (1, 1) {
        return Err(Error::shape(format!("objective must be scalar, got {:?}", tape.shape(loss))));
    }
    Ok(tape.value(loss).item())
}

pub fn value_and_grad<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<(f64, ParamVector)> {
    let (mut tape, vars) = Tape::with_params(params);
    let loss = objective.record(&mut tape, &vars)?;
    let g = tape.gradient(loss)?;
    Ok((tape.value(loss).item(), g))
}

pub fn grad<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<ParamVector> {
    value_and_grad(objective, params).map(|(_, g)| g)
}

/// `∇²L(θ) · v` by forward-over-reverse differentiation.
pub fn hvp<O: Objective + ?Sized>(objective: &O, params: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
    params.check_same_layout(v)?;
    let (mut tape, vars) = Tape::with_params(params);
    let loss = objective.record(&mut tape, &vars)?;
    tape.gradient_and_hvp(loss, v).map(|(_, hv)| hv)
}

/// Value and derivative of `f` at scalar input `t`.
///
/// `f` receives `t` as a [`Dual`] with unit tangent and must build its output
/// from the tape's `d_*` operations. An output that depends on `t` but carries
/// no tangent was computed with an operation lacking a forward rule and is
/// rejected.
pub fn input_derivative<F>(f: F, t: f64) -> Result<(Mat, Mat)>
where
    F: FnOnce(&mut Tape, Dual) -> Result<Dual>,
{
    let mut tape = Tape::new();
    let x = tape.dual_constant(Mat::scalar(t), Some(Mat::scalar(1.0)));
    let out = f(&mut tape, x)?;
    let value = tape.value(out.primal).clone();
    let derivative = match out.tangent {
        Some(tv) => tape.value(tv).clone(),
        None if tape.depends_on(out.primal, x.primal) => {
            return Err(Error::Capability(
                "output depends on the input through an operation without a forward-mode rule".into(),
            ));
        }
        None => Mat::zeros(value.rows(), value.cols()),
    };
    Ok((value, derivative))
}

/// Dense Hessian by one HVP per unit vector. Intended as a test oracle for
/// small models; refuses more than 2000 parameters.
pub fn dense_hessian<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<Mat> {
    let n = params.len();
    if n > 2000 {
        return Err(Error::Capability(format!("dense Hessian of {n} parameters")));
    }
    let (mut tape, vars) = Tape::with_params(params);
    let loss = objective.record(&mut tape, &vars)?;
    let mut h = Mat::zeros(n, n);
    let mut e = params.zeros_like();
    for j in 0..n {
        e.as_mut_slice()[j] = 1.0;
        let (_, col) = tape.gradient_and_hvp(loss, &e)?;
        e.as_mut_slice()[j] = 0.0;
        for i in 0..n {
            h.set(i, j, col.as_slice()[i]);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_norm_sq(tape: &mut Tape, p: &[Var]) -> Result<Var> {
        let sq = tape.square(p[0]);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 0.5))
    }

    #[test]
    fn quadratic_gradient_is_identity() {
        let theta = ParamVector::single("theta", vec![0.5, -1.5, 2.0, 0.25]);
        let g = grad(&half_norm_sq, &theta).unwrap();
        assert_eq!(g.as_slice(), theta.as_slice());
    }

    #[test]
    fn quadratic_hvp_is_identity() {
        let theta = ParamVector::single("theta", vec![0.5, -1.5, 2.0, 0.25]);
        let v = ParamVector::single("theta", vec![1.0, 2.0, -3.0, 0.5]);
        let hv = hvp(&half_norm_sq, &theta, &v).unwrap();
        assert_eq!(hv.as_slice(), v.as_slice());
    }

    #[test]
    fn dead_block_gets_exact_zero_gradient() {
        let layout = Layout::new([("used".into(), 1, 3), ("dead".into(), 2, 2)]);
        let theta = ParamVector::from_flat(&layout, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let g = grad(&half_norm_sq, &theta).unwrap();
        assert_eq!(g.block(1), &[0.0; 4]);
        assert_eq!(g.block(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_shape_error() {
        let theta = ParamVector::single("theta", vec![1.0, 2.0]);
        let f = |tape: &mut Tape, p: &[Var]| Ok(tape.square(p[0]));
        assert!(matches!(grad(&f, &theta), Err(Error::Shape(_))));
    }

    #[test]
    fn hvp_rejects_mismatched_direction() {
        let theta = ParamVector::single("theta", vec![1.0, 2.0]);
        let v = ParamVector::single("theta", vec![1.0, 2.0, 3.0]);
        assert!(matches!(hvp(&half_norm_sq, &theta, &v), Err(Error::Shape(_))));
    }

    #[test]
    fn input_derivative_of_sine() {
        let omega = 2.0 * std::f64::consts::PI * 100.0;
        let t = 0.0013;
        let (y, dy) = input_derivative(
            |tape, x| {
                let wt = tape.d_scale(x, omega);
                Ok(tape.d_sin(wt))
            },
            t,
        )
        .unwrap();
        assert!((y.item() - (omega * t).sin()).abs() < 1e-15);
        assert!((dy.item() - omega * (omega * t).cos()).abs() < 1e-12 * omega);
    }

    #[test]
    fn input_derivative_of_constant_is_zero() {
        let (y, dy) = input_derivative(
            |tape, _x| {
                let c = tape.constant(Mat::scalar(3.5));
                Ok(tape.lift(c))
            },
            0.2,
        )
        .unwrap();
        assert_eq!(y.item(), 3.5);
        assert_eq!(dy.item(), 0.0);
    }

    #[test]
    fn input_derivative_rejects_untracked_dependence() {
        let r = input_derivative(
            |tape, x| {
                let y = tape.sin(x.primal);
                Ok(tape.lift(y))
            },
            0.1,
        );
        assert!(matches!(r, Err(Error::Capability(_))));
    }
}
