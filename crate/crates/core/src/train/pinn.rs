use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::causal::{causal_schedule, chunk_of};
use super::loss::{record_mse, record_ode_losses, LossTerms, LossVars, LossWeights};
use super::plan::TrainPlan;
use super::trainer::{History, Trainer};
use crate::autodiff::{Objective, Tape, Var};
use crate::error::{Error, Result};
use crate::fdm::{InitialCondition, OscillatorConfig};
use crate::nets::{PinnArch, PinnModel, TimeMarchingPinn};

/// Loss of one PINN window on a fixed set of collocation times.
pub struct PinnObjective<'a> {
    pub model: &'a PinnModel,
    pub config: &'a OscillatorConfig,
    pub t: &'a [f64],
    pub ic: InitialCondition,
    pub weights: LossWeights,
}

impl PinnObjective<'_> {
    pub fn record_terms(&self, tape: &mut Tape, vars: &[Var]) -> Result<LossVars> {
        if self.t.is_empty() {
            return Err(Error::config("empty collocation set"));
        }
        let (p, q) = self.model.record(tape, vars, self.t)?;
        let (ode1, ode2) = record_ode_losses(tape, self.config, p, q);
        let (p0, q0) = self.model.record(tape, vars, &[self.model.arch().t_start])?;
        let ic1 = record_mse(tape, p0.primal, &[self.ic.p0])?;
        let ic2 = record_mse(tape, q0.primal, &[self.ic.q0])?;
        Ok(LossVars { ode1, ode2, ic1, ic2, ob: None })
    }
}

impl Objective for PinnObjective<'_> {
    fn record(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let lv = self.record_terms(tape, params)?;
        Ok(lv.total(tape, &self.weights))
    }
}

/// `(L_ODE1, L_ODE2, L_IC1, L_IC2)` of `model` at its own parameters.
pub fn pinn_losses(model: &PinnModel, config: &OscillatorConfig, t: &[f64], ic: InitialCondition) -> Result<LossTerms> {
    let obj = PinnObjective { model, config, t, ic, weights: LossWeights::ones() };
    let (mut tape, vars) = Tape::with_params(&model.params);
    let lv = obj.record_terms(&mut tape, &vars)?;
    Ok(lv.values(&tape))
}

/// `n` sorted collocation times uniform in the model's window.
pub fn collocation(arch: &PinnArch, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<f64> = (0..n).map(|_| arch.t_start + rng.random_range(0.0..=arch.scale_t)).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// Outcome of training one window.
/// The collocation set used by [`train_pinn_window`] for a window trained
/// with `init_seed`.
pub fn window_collocation(arch: &PinnArch, plan: &TrainPlan, init_seed: u64) -> Vec<f64> {
    collocation(arch, plan.n_ode, plan.seed ^ init_seed.rotate_left(17))
}

/// Seed of window `i` in [`train_pinn`].
pub fn window_seed(plan: &TrainPlan, i: usize) -> u64 {
    plan.seed.wrapping_add(i as u64)
}

#[derive(Clone, Debug)]
pub struct PinnRun {
    pub model: PinnModel,
    pub history: History,
    pub steps: usize,
    pub converged: bool,
    /// Active causal chunks at the end (equals `M_cau` unless stopped early).
    pub active_chunks: usize,
    /// Training rolled back after appending a chunk degraded the loss.
    pub stopped_early: bool,
    pub final_terms: LossTerms,
    pub final_weights: LossWeights,
}

/// Trains the window network described by `arch` from `ic` at `arch.t_start`.
pub fn train_pinn_window(
    arch: PinnArch,
    plan: &TrainPlan,
    config: &OscillatorConfig,
    ic: InitialCondition,
    init_seed: u64,
) -> Result<PinnRun> {
    plan.validate()?;
    let mut model = PinnModel::new(arch, init_seed)?;
    let arch = model.arch().clone();
    let t_all = window_collocation(&arch, plan, init_seed);
    let m_cau = plan.causal_chunks;
    let active_set = |active: usize| -> Vec<f64> {
        t_all.iter().copied().filter(|&t| chunk_of(t, arch.t_start, arch.scale_t, m_cau) < active).collect()
    };

    let mut params = model.params.clone();
    let mut trainer = Trainer::new(plan, &params)?;
    let mut active = 1;
    let mut t_active = active_set(active);
    let mut rollback = None;
    let mut stopped_early = false;
    let mut converged = false;
    let mut last = None;

    while trainer.steps_taken() < plan.max_iters {
        if t_active.is_empty() {
            // a chunk may hold no collocation point; skip ahead
            active = (active + 1).min(m_cau);
            t_active = active_set(active);
            if t_active.is_empty() {
                return Err(Error::config("no collocation points in the window"));
            }
        }
        let weights = *trainer.weights();
        let report = trainer.step(&mut params, |tape, vars| {
            PinnObjective { model: &model, config, t: &t_active, ic, weights }.record_terms(tape, vars)
        })?;
        last = Some(report);

        if m_cau > 1 {
            let next = causal_schedule(report.terms.ode1, active, m_cau, plan.causal_threshold);
            if next > active {
                rollback = trainer.last_evaluated().cloned().map(|p| (p, active));
                active = next;
                t_active = active_set(active);
                trainer.reset_monitor();
                log::info!("window at t={}: causal set grows to {active}/{m_cau} chunks", arch.t_start);
                continue;
            }
        }
        if trainer.converged() {
            let degraded = report.terms.ode1 > plan.causal_degrade_factor * plan.causal_threshold;
            if m_cau > 1 && active < m_cau && degraded {
                if let Some((p, a)) = rollback.take() {
                    log::info!("chunk {active} degrades the window loss; restoring the {a}-chunk state");
                    params = p;
                    active = a;
                    stopped_early = true;
                }
            }
            converged = true;
            break;
        }
    }
    let Some(last) = last else {
        return Err(Error::config("max_iters must be > 0"));
    };
    trainer.log(&last);
    model.params = params;
    let final_terms = pinn_losses(&model, config, &active_set(active), ic)?;
    let final_weights = *trainer.weights();
    let steps = trainer.steps_taken();
    Ok(PinnRun {
        model,
        history: trainer.into_history(),
        steps,
        converged,
        active_chunks: active,
        stopped_early,
        final_terms,
        final_weights,
    })
}

/// Time-marching: `plan.time_windows` windows of length `arch.scale_t`, each
/// started from the previous window's prediction at its right edge.
pub fn train_pinn(
    arch: PinnArch,
    plan: &TrainPlan,
    config: &OscillatorConfig,
    ic: InitialCondition,
) -> Result<(TimeMarchingPinn, Vec<PinnRun>)> {
    let mut runs: Vec<PinnRun> = Vec::with_capacity(plan.time_windows);
    let mut ic_i = ic;
    for i in 0..plan.time_windows {
        let arch_i = PinnArch { t_start: arch.t_start + i as f64 * arch.scale_t, ..arch.clone() };
        let run = train_pinn_window(arch_i, plan, config, ic_i, window_seed(plan, i))?;
        let t_end = run.model.arch().t_end();
        let (p, q) = run.model.eval(&[t_end])?;
        ic_i = InitialCondition { p0: p[0], q0: q[0] };
        log::info!("window {i} done after {} steps; next IC ({:.6}, {:.6})", run.steps, ic_i.p0, ic_i.q0);
        runs.push(run);
    }
    let windows = runs.iter().map(|r| r.model.clone()).collect();
    Ok((TimeMarchingPinn { windows }, runs))
}
