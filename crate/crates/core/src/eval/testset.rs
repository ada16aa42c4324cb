use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricConvention, StateMetrics};
use crate::error::{Error, Result};
use crate::fdm::{simulate, InitialCondition, OscillatorConfig, Trajectory, AUDIO_RATE, REFERENCE_RATE};
use crate::nets::DeepOnetModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub ic: InitialCondition,
    pub t_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub scale_pq: f64,
    pub cases: Vec<TestCase>,
    /// Draws discarded by the range filter.
    pub rejected: usize,
}

fn within(traj: &Trajectory, bound: f64) -> bool {
    traj.p.iter().chain(&traj.q).all(|x| x.abs() <= bound)
}

impl TestSet {
    /// `n` ICs uniform in `[−s^{p,q}, s^{p,q}]²` whose audio-rate FDM
    /// solutions stay inside that square up to `t_max`. Rejected draws are
    /// replaced; gives up after `1000·n` draws.
    pub fn sample(config: &OscillatorConfig, n: usize, scale_pq: f64, t_max: f64, seed: u64) -> Result<Self> {
        if n == 0 || !(scale_pq > 0.0) || !(t_max > 0.0) {
            return Err(Error::config("test set needs n > 0, s^{p,q} > 0 and t_max > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cases = Vec::with_capacity(n);
        let mut rejected = 0;
        while cases.len() < n {
            if rejected >= 1000 * n {
                return Err(Error::config(format!(
                    "range filter rejected {rejected} draws; only {} of {n} cases found",
                    cases.len()
                )));
            }
            let ic = InitialCondition {
                p0: rng.random_range(-scale_pq..=scale_pq),
                q0: rng.random_range(-scale_pq..=scale_pq),
            };
            match simulate(config, ic, AUDIO_RATE, t_max) {
                Ok(traj) if within(&traj, scale_pq) => cases.push(TestCase { ic, t_max }),
                _ => rejected += 1,
            }
        }
        Ok(Self { scale_pq, cases, rejected })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub index: usize,
    pub ic: InitialCondition,
    pub metrics: StateMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub convention: MetricConvention,
    pub cases: Vec<CaseReport>,
    /// Case indices excluded because the reference or a metric failed.
    pub failed: Vec<usize>,
    pub mean: Option<StateMetrics>,
}

impl MetricReport {
    pub fn from_cases(cases: Vec<CaseReport>, failed: Vec<usize>, convention: MetricConvention) -> Self {
        let mean = (!cases.is_empty()).then(|| {
            let k = cases.len() as f64;
            let avg = |f: fn(&StateMetrics) -> f64| cases.iter().map(|c| f(&c.metrics)).sum::<f64>() / k;
            StateMetrics {
                nmse_p: avg(|m| m.nmse_p),
                nmse_q: avg(|m| m.nmse_q),
                ncc_p: avg(|m| m.ncc_p),
                ncc_q: avg(|m| m.ncc_q),
            }
        });
        Self { convention, cases, failed, mean }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// FDM reference at the reference rate, decimated to the audio grid.
pub fn reference_trajectory(config: &OscillatorConfig, ic: InitialCondition, t_max: f64) -> Result<Trajectory> {
    let factor = (REFERENCE_RATE / AUDIO_RATE).round() as usize;
    Ok(simulate(config, ic, REFERENCE_RATE, t_max)?.subsample(factor))
}

/// Per-case metrics of the operator's rollout against the FDM reference on
/// the audio-rate grid.
pub fn evaluate_testset(
    model: &DeepOnetModel,
    config: &OscillatorConfig,
    set: &TestSet,
    convention: MetricConvention,
) -> Result<MetricReport> {
    let mut cases = Vec::with_capacity(set.cases.len());
    let mut failed = Vec::new();
    for (index, case) in set.cases.iter().enumerate() {
        let reference = match reference_trajectory(config, case.ic, case.t_max) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("test case {index}: reference failed: {e}");
                failed.push(index);
                continue;
            }
        };
        let pred = model.rollout(case.ic, reference.sample_rate, reference.len())?;
        match StateMetrics::compute((&pred.p, &pred.q), (&reference.p, &reference.q), convention) {
            Ok(metrics) => cases.push(CaseReport { index, ic: case.ic, metrics }),
            Err(e) => {
                log::warn!("test case {index}: {e}");
                failed.push(index);
            }
        }
    }
    Ok(MetricReport::from_cases(cases, failed, convention))
}
