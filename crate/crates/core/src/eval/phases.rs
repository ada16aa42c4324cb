use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdm::{OscillatorConfig, Trajectory};
use crate::friction::PhaseLabel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub label: PhaseLabel,
}

/// Maximal runs of constant stick/slip label. A run ends where the next one
/// starts, so the segments tile `[t0, t_last]`.
pub fn stick_slip_segments(traj: &Trajectory, config: &OscillatorConfig) -> Vec<PhaseSegment> {
    let labels: Vec<PhaseLabel> = traj.eta(config).iter().map(|&e| config.friction.phase(e)).collect();
    let mut out = Vec::new();
    let Some(&first) = labels.first() else {
        return out;
    };
    let mut start = 0;
    let mut current = first;
    for (i, &l) in labels.iter().enumerate().skip(1) {
        if l != current {
            out.push(PhaseSegment { t_start: traj.time(start), t_end: traj.time(i), label: current });
            start = i;
            current = l;
        }
    }
    out.push(PhaseSegment { t_start: traj.time(start), t_end: traj.time(labels.len() - 1), label: current });
    out
}

/// Fraction of the tiled duration spent with `label`.
pub fn phase_fraction(segments: &[PhaseSegment], label: PhaseLabel) -> f64 {
    let total: f64 = segments.iter().map(|s| s.t_end - s.t_start).sum();
    if total <= 0.0 {
        return segments.first().map_or(0.0, |s| if s.label == label { 1.0 } else { 0.0 });
    }
    segments.iter().filter(|s| s.label == label).map(|s| s.t_end - s.t_start).sum::<f64>() / total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub max: f64,
}

impl Spread {
    /// Quartiles of `|x|` by linear interpolation between order statistics.
    pub fn of_abs(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Metric("empty residual series".into()));
        }
        let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        a.sort_by(f64::total_cmp);
        let quantile = |p: f64| {
            let h = p * (a.len() - 1) as f64;
            let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
            a[lo] + (h - lo as f64) * (a[hi] - a[lo])
        };
        let (q1, median, q3) = (quantile(0.25), quantile(0.5), quantile(0.75));
        Ok(Self { median, q1, q3, iqr: q3 - q1, max: a[a.len() - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub name: String,
    pub r1: Spread,
    pub r2: Spread,
}

pub struct ResidualEntry {
    pub name: String,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

pub fn residual_compare(entries: &[ResidualEntry]) -> Result<Vec<ResidualSummary>> {
    if entries.is_empty() {
        return Err(Error::config("residual comparison needs at least one entry"));
    }
    entries
        .iter()
        .map(|e| Ok(ResidualSummary { name: e.name.clone(), r1: Spread::of_abs(&e.r1)?, r2: Spread::of_abs(&e.r2)? }))
        .collect()
}

/// Pointwise ODE residuals from model outputs and their time derivatives.
pub fn residuals_from_derivatives(
    config: &OscillatorConfig,
    p: &[f64],
    q: &[f64],
    p_t: &[f64],
    q_t: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let r1 = q_t.iter().zip(p).map(|(qt, p)| qt - config.omega * p).collect();
    let r2 = p_t
        .iter()
        .zip(q)
        .zip(p)
        .map(|((pt, q), p)| pt + config.omega * q + config.friction_force(*p))
        .collect();
    (r1, r2)
}
