//! Finite-difference reference solver for the bowed oscillator
//!
//! ```text
//! q_t − ω p = 0
//! p_t + ω q + F_B φ(p − v_B) = 0
//! ```
//!
//! Time stepping is the implicit midpoint rule. Eliminating the midpoint
//! coordinate leaves one scalar equation in the midpoint relative velocity
//! `η`, solved by safeguarded Newton iteration.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::friction::FrictionParams;

/// High-rate reference, 4410 kHz.
pub const REFERENCE_RATE: f64 = 4_410_000.0;
/// Audio rate, 44.1 kHz.
pub const AUDIO_RATE: f64 = 44_100.0;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
const BISECTION_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OscillatorConfig {
    /// Natural frequency, Hz.
    pub f: f64,
    /// `2π f`, rad/s.
    pub omega: f64,
    /// Bow force normalized by mass, m/s².
    pub bow_force: f64,
    /// Bow velocity, m/s.
    pub bow_velocity: f64,
    pub friction: FrictionParams,
}

impl OscillatorConfig {
    pub fn new(f: f64, bow_force: f64, bow_velocity: f64, a: f64) -> Result<Self> {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::config(format!("frequency must be > 0, got {f}")));
        }
        if !(bow_force.is_finite() && bow_force >= 0.0) {
            return Err(Error::config(format!("bow force must be >= 0, got {bow_force}")));
        }
        if !bow_velocity.is_finite() {
            return Err(Error::config("bow velocity must be finite"));
        }
        Ok(Self { f, omega: 2.0 * PI * f, bow_force, bow_velocity, friction: FrictionParams::new(a)? })
    }

    /// f = 100 Hz, a = 100, v_B = 0.2 m/s with the given bow force.
    pub fn standard(bow_force: f64) -> Self {
        Self::new(100.0, bow_force, 0.2, 100.0).expect("standard scenario is valid")
    }

    /// Bow friction term `F_B φ(p − v_B)`.
    #[inline]
    pub fn friction_force(&self, p: f64) -> f64 {
        self.bow_force * self.friction.phi(p - self.bow_velocity)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub p0: f64,
    pub q0: f64,
}

impl InitialCondition {
    pub fn new(p0: f64, q0: f64) -> Result<Self> {
        if !(p0.is_finite() && q0.is_finite()) {
            return Err(Error::config("initial condition must be finite"));
        }
        Ok(Self { p0, q0 })
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Uniformly sampled `(p, q)` series.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub sample_rate: f64,
    pub t0: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 / self.sample_rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 / self.sample_rate
    }

    /// Relative velocity `η = p − v_B`.
    pub fn eta(&self, config: &OscillatorConfig) -> Vec<f64> {
        self.p.iter().map(|p| p - config.bow_velocity).collect()
    }

    /// Displacement `u = q / ω`.
    pub fn displacement(&self, config: &OscillatorConfig) -> Vec<f64> {
        self.q.iter().map(|q| q / config.omega).collect()
    }

    pub fn last_state(&self) -> InitialCondition {
        InitialCondition { p0: *self.p.last().unwrap_or(&0.0), q0: *self.q.last().unwrap_or(&0.0) }
    }

    /// Keeps every `factor`-th sample.
    pub fn subsample(&self, factor: usize) -> Trajectory {
        let factor = factor.max(1);
        Trajectory {
            sample_rate: self.sample_rate / factor as f64,
            t0: self.t0,
            p: self.p.iter().step_by(factor).copied().collect(),
            q: self.q.iter().step_by(factor).copied().collect(),
        }
    }

    /// CSV with header `t,p,q,eta`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, config: &OscillatorConfig) -> Result<()> {
        writeln!(w, "t,p,q,eta")?;
        for n in 0..self.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.time(n),
                self.p[n],
                self.q[n],
                self.p[n] - config.bow_velocity
            )?;
        }
        Ok(())
    }
}

/// Diagnostics for one midpoint step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub iterations: usize,
    pub used_bisection: bool,
    pub residual: f64,
}

/// One implicit-midpoint step from `(p, q)`.
pub fn step(config: &OscillatorConfig, state: (f64, f64), dt: f64) -> Result<(f64, f64)> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("time step must be > 0, got {dt}")));
    }
    step_with_info(config, state, dt, 0).map(|(s, _)| s)
}

pub(crate) fn step_with_info(
    config: &OscillatorConfig,
    (p, q): (f64, f64),
    dt: f64,
    index: usize,
) -> Result<((f64, f64), StepInfo)> {
    let kw = dt * config.omega;
    let c = 2.0 + 0.5 * kw * kw;
    // c·p_n − (2p_n − kω q_n), kept separate so the increment is formed
    // without cancellation
    let e = 0.5 * kw * kw * p + kw * q;
    let kf = dt * config.bow_force;

    let (delta, info) = if kf == 0.0 {
        (-e / c, StepInfo { iterations: 0, used_bisection: false, residual: 0.0 })
    } else {
        solve_midpoint_increment(c, e, p - config.bow_velocity, kf, &config.friction)
            .map_err(|reason| Error::Solver { step: index, reason })?
    };
    // p_mid = p_n + δ
    Ok(((p + 2.0 * delta, q + kw * (p + delta)), info))
}

/// Root of `g(η) = c(η + v_B) − (2p_n − kω q_n) + k F_B φ(η)`, parametrized
/// by the increment `δ = η − η_n` so that `g = cδ + e + k F_B φ(η_n + δ)`.
/// Newton starts from the previous relative velocity (`δ = 0`).
///
/// Since `|φ| ≤ 1`, the root lies in `[(−e − kF)/c, (−e + kF)/c]`;
/// Newton iterates are kept inside that bracket, falling back to bisection.
fn solve_midpoint_increment(
    c: f64,
    e: f64,
    eta_n: f64,
    kf: f64,
    fr: &FrictionParams,
) -> std::result::Result<(f64, StepInfo), String> {
    let g = |d: f64| c * d + e + kf * fr.phi(eta_n + d);
    let mut lo = (-e - kf) / c;
    let mut hi = (-e + kf) / c;
    if !(lo.is_finite() && hi.is_finite() && eta_n.is_finite()) {
        return Err(format!("non-finite bracket [{lo}, {hi}]"));
    }
    let mut d = 0.0f64.clamp(lo, hi);
    let mut used_bisection = false;

    for it in 0..NEWTON_MAX_ITER + BISECTION_MAX_ITER {
        let r = g(d);
        if r.abs() <= NEWTON_TOL {
            // one more Newton update takes the residual to round-off; stopping
            // at the tolerance leaves a same-signed error that accumulates
            // over millions of steps
            let slope = c + kf * fr.dphi(eta_n + d);
            let polished = d - r / slope;
            if slope > 0.0 && polished >= lo && polished <= hi {
                let rp = g(polished);
                if rp.abs() <= r.abs() {
                    return Ok((polished, StepInfo { iterations: it + 1, used_bisection, residual: rp.abs() }));
                }
            }
            return Ok((d, StepInfo { iterations: it, used_bisection, residual: r.abs() }));
        }
        if r < 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let slope = c + kf * fr.dphi(eta_n + d);
        let newton = d - r / slope;
        d = if it < NEWTON_MAX_ITER && slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            used_bisection = true;
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
            let r = g(d);
            return Ok((d, StepInfo { iterations: it + 1, used_bisection, residual: r.abs() }));
        }
    }
    Err(format!("no convergence after {} iterations", NEWTON_MAX_ITER + BISECTION_MAX_ITER))
}

/// Simulates `⌊duration · sample_rate⌋ + 1` samples starting from `ic` at t = 0.
pub fn simulate(config: &OscillatorConfig, ic: InitialCondition, sample_rate: f64, duration: f64) -> Result<Trajectory> {
    if !(sample_rate.is_finite() && sample_rate >= 40.0 * config.f) {
        return Err(Error::config(format!(
            "sample rate {sample_rate} Hz is below 40 x natural frequency ({} Hz)",
            40.0 * config.f
        )));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::config(format!("duration must be > 0, got {duration}")));
    }
    let steps = sample_count(duration, sample_rate) - 1;
    simulate_steps(config, ic, 0.0, sample_rate, steps)
}

/// `⌊duration · rate⌋ + 1`, tolerant of products that land a hair below an integer.
pub fn sample_count(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize + 1
}

/// Advances `steps` midpoint steps from `ic`, labelling the first sample `t0`.
pub fn simulate_steps(
    config: &OscillatorConfig,
    ic: InitialCondition,
    t0: f64,
    sample_rate: f64,
    steps: usize,
) -> Result<Trajectory> {
    let dt = 1.0 / sample_rate;
    let mut p = Vec::with_capacity(steps + 1);
    let mut q = Vec::with_capacity(steps + 1);
    p.push(ic.p0);
    q.push(ic.q0);
    let mut state = (ic.p0, ic.q0);
    for n in 0..steps {
        state = step_with_info(config, state, dt, n)?.0;
        p.push(state.0);
        q.push(state.1);
    }
    Ok(Trajectory { sample_rate, t0, p, q })
}

/// Pointwise residuals `(r1, r2)` of the first-order system on the
/// trajectory grid. Time derivatives use central differences inside and
/// one-sided differences at the ends.
pub fn residuals(traj: &Trajectory, config: &OscillatorConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = traj.len();
    if n < 3 || traj.q.len() != n {
        return Err(Error::shape(format!("residuals need at least 3 samples, got {n}")));
    }
    let rate = traj.sample_rate;
    let deriv = |x: &[f64], i: usize| -> f64 {
        if i == 0 {
            (x[1] - x[0]) * rate
        } else if i == n - 1 {
            (x[n - 1] - x[n - 2]) * rate
        } else {
            (x[i + 1] - x[i - 1]) * 0.5 * rate
        }
    };
    let mut r1 = Vec::with_capacity(n);
    let mut r2 = Vec::with_capacity(n);
    for i in 0..n {
        r1.push(deriv(&traj.q, i) - config.omega * traj.p[i]);
        r2.push(deriv(&traj.p, i) + config.omega * traj.q[i] + config.friction_force(traj.p[i]));
    }
    Ok((r1, r2))
}
