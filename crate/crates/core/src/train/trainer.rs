use std::io::Write;

use serde::Serialize;

use super::loss::{anneal_weights, LossTerms, LossVars, LossWeights, TermGradients};
use super::optim::{lr_schedule, Optimizer};
use super::plan::TrainPlan;
use crate::autodiff::{ParamVector, Tape, Var};
use crate::error::{Error, Result};

/// One logged row of the loss history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub terms: LossTerms,
    pub weights: LossWeights,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    /// CSV `step,lr,L_ODE1,L_ODE2,L_IC1,L_IC2,L_ob1,L_ob2,lambda_*`; absent
    /// observation terms are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "step,lr,L_ODE1,L_ODE2,L_IC1,L_IC2,L_ob1,L_ob2,\
             lambda_ODE1,lambda_ODE2,lambda_IC1,lambda_IC2,lambda_ob1,lambda_ob2"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.rows {
            let t = &r.terms;
            let l = &r.weights;
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step,
                r.lr,
                t.ode1,
                t.ode2,
                t.ic1,
                t.ic2,
                opt(t.ob1),
                opt(t.ob2),
                l.ode1,
                l.ode2,
                l.ic1,
                l.ic2,
                l.ob1,
                l.ob2
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }
}

/// Tracks the running minimum of the monitored loss.
#[derive(Clone, Debug)]
pub struct ConvergenceMonitor {
    horizon: usize,
    rel_tol: f64,
    running_min: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(horizon: usize, rel_tol: f64) -> Self {
        Self { horizon, rel_tol, running_min: Vec::new() }
    }

    pub fn push(&mut self, loss: f64) {
        let m = self.running_min.last().map_or(loss, |&m| m.min(loss));
        self.running_min.push(m);
    }

    pub fn best(&self) -> Option<f64> {
        self.running_min.last().copied()
    }

    pub fn converged(&self) -> bool {
        let n = self.running_min.len();
        if n <= self.horizon {
            return false;
        }
        let then = self.running_min[n - 1 - self.horizon];
        let now = self.running_min[n - 1];
        then <= 0.0 || (then - now) / then < self.rel_tol
    }

    pub fn reset(&mut self) {
        self.running_min.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub terms: LossTerms,
    pub total: f64,
}

/// Owns the optimizer, loss weights and history of one training run.
pub struct Trainer {
    plan: TrainPlan,
    optimizer: Optimizer,
    weights: LossWeights,
    step: usize,
    monitor: ConvergenceMonitor,
    history: History,
    last_evaluated: Option<ParamVector>,
}

impl Trainer {
    pub fn new(plan: &TrainPlan, params: &ParamVector) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(plan.optimizer, params, plan.soap),
            weights: plan.initial_weights(),
            step: 0,
            monitor: ConvergenceMonitor::new(plan.horizon, plan.rel_tol),
            history: History::default(),
            last_evaluated: None,
            plan: plan.clone(),
        })
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn converged(&self) -> bool {
        self.monitor.converged()
    }

    pub fn reset_monitor(&mut self) {
        self.monitor.reset();
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    /// Parameters at which the most recent loss was evaluated.
    pub fn last_evaluated(&self) -> Option<&ParamVector> {
        self.last_evaluated.as_ref()
    }

    fn failure(&self, reason: String) -> Error {
        Error::Training {
            step: self.step,
            reason,
            last_finite: self.last_evaluated.clone().map(Box::new),
        }
    }

    /// Records the loss at `params`, takes one optimizer step, and logs.
    pub fn step<F>(&mut self, params: &mut ParamVector, record: F) -> Result<StepReport>
    where
        F: FnOnce(&mut Tape, &[Var]) -> Result<LossVars>,
    {
        let (mut tape, vars) = Tape::with_params(params);
        let lv = record(&mut tape, &vars)?;
        let terms = lv.values(&tape);
        if !terms.is_finite() {
            return Err(self.failure(format!("non-finite loss {terms:?}")));
        }

        let grad = if self.plan.annealing && self.step % self.plan.anneal_period == 0 {
            let g: Vec<ParamVector> = lv.terms().into_iter().map(|v| tape.gradient(v)).collect::<Result<_>>()?;
            let tg = TermGradients {
                ode1: g[0].clone(),
                ode2: g[1].clone(),
                ic1: g[2].clone(),
                ic2: g[3].clone(),
                ob1: g.get(4).cloned(),
                ob2: g.get(5).cloned(),
            };
            self.weights = anneal_weights(&self.weights, &tg, self.plan.anneal_alpha);
            let w = self.weights.as_array();
            let mut total = params.zeros_like();
            for (gi, wi) in g.iter().zip(w) {
                total.axpy(wi, gi);
            }
            total
        } else {
            let total = lv.total(&mut tape, &self.weights);
            tape.gradient(total)?
        };
        if !grad.is_finite() {
            return Err(self.failure("non-finite gradient".into()));
        }
        debug_assert!(self.plan.annealing || self.weights == self.plan.initial_weights());

        let total = super::loss::total_loss(&terms, &self.weights);
        let lr = lr_schedule(self.step, self.plan.lr0, self.plan.decay_rate, self.plan.decay_steps);
        let report = StepReport { step: self.step, lr, terms, total };
        if self.step % self.plan.log_every == 0 {
            self.log(&report);
        }
        self.last_evaluated = Some(params.clone());
        self.optimizer.step(params, &grad, lr)?;
        // annealed weights move the total; plateaus are judged at fixed weights
        let monitored = if self.plan.annealing { super::loss::total_loss(&terms, &self.plan.initial_weights()) } else { total };
        self.monitor.push(monitored);
        self.step += 1;
        Ok(report)
    }

    /// Appends a history row for `report` (used for the final state).
    pub fn log(&mut self, report: &StepReport) {
        if self.history.last().is_some_and(|r| r.step == report.step) {
            return;
        }
        self.history.rows.push(HistoryRow { step: report.step, lr: report.lr, terms: report.terms, weights: self.weights });
        log::debug!(
            "step {} lr {:.3e} total {:.4e} ode1 {:.3e} ode2 {:.3e} ic1 {:.3e} ic2 {:.3e}",
            report.step,
            report.lr,
            report.total,
            report.terms.ode1,
            report.terms.ode2,
            report.terms.ic1,
            report.terms.ic2
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_detects_plateau() {
        let mut m = ConvergenceMonitor::new(10, 1e-4);
        for i in 0..10 {
            m.push(1.0 / (i + 1) as f64);
        }
        assert!(!m.converged());
        for _ in 0..11 {
            m.push(0.1);
        }
        assert!(m.converged());
        m.reset();
        assert!(!m.converged());
    }

    #[test]
    fn monitor_ignores_spikes() {
        let mut m = ConvergenceMonitor::new(3, 1e-4);
        for x in [1.0, 0.5, 9.0, 0.25, 7.0] {
            m.push(x);
        }
        assert_eq!(m.best(), Some(0.25));
        assert!(!m.converged());
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        History::default().write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,lr,L_ODE1,L_ODE2,L_IC1,L_IC2,L_ob1,L_ob2,lambda_ODE1"));
    }
}
