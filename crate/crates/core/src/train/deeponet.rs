use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{DeepOnetDataset, ObservationSet};
use super::loss::{record_mse, record_ode_losses, LossTerms, LossVars, LossWeights};
use super::plan::TrainPlan;
use super::trainer::{History, Trainer};
use crate::autodiff::{Objective, Tape, Var};
use crate::error::{Error, Result};
use crate::fdm::OscillatorConfig;
use crate::nets::{DeepOnetArch, DeepOnetModel, OperatorInput};

/// PI-DeepONet loss on one batch, optionally with observation terms.
pub struct DeepOnetObjective<'a> {
    pub model: &'a DeepOnetModel,
    pub config: &'a OscillatorConfig,
    pub batch: &'a OperatorInput,
    pub observations: Option<&'a ObservationSet>,
    pub weights: LossWeights,
}

impl DeepOnetObjective<'_> {
    pub fn record_terms(&self, tape: &mut Tape, vars: &[Var]) -> Result<LossVars> {
        let (p, q) = self.model.record(tape, vars, self.batch)?;
        let (ode1, ode2) = record_ode_losses(tape, self.config, p, q);

        let m = self.batch.ics.len();
        let at_zero = OperatorInput::new(vec![0.0; m], self.batch.ics.clone(), (0..m).collect())?;
        let (p0, q0) = self.model.record(tape, vars, &at_zero)?;
        let p_ic: Vec<f64> = self.batch.ics.iter().map(|c| c.p0).collect();
        let q_ic: Vec<f64> = self.batch.ics.iter().map(|c| c.q0).collect();
        let ic1 = record_mse(tape, p0.primal, &p_ic)?;
        let ic2 = record_mse(tape, q0.primal, &q_ic)?;

        let ob = match self.observations {
            None => None,
            Some(obs) if obs.is_empty() => return Err(Error::config("hybrid training needs observations")),
            Some(obs) => {
                let (po, qo) = self.model.record(tape, vars, &obs.input)?;
                Some((record_mse(tape, po.primal, &obs.p)?, record_mse(tape, qo.primal, &obs.q)?))
            }
        };
        Ok(LossVars { ode1, ode2, ic1, ic2, ob })
    }
}

impl Objective for DeepOnetObjective<'_> {
    fn record(&self, tape: &mut Tape, params: &[Var]) -> Result<Var> {
        let lv = self.record_terms(tape, params)?;
        Ok(lv.total(tape, &self.weights))
    }
}

#[derive(Clone, Debug)]
pub struct DeepOnetRun {
    pub model: DeepOnetModel,
    pub history: History,
    pub steps: usize,
    pub converged: bool,
    pub final_terms: LossTerms,
    pub final_weights: LossWeights,
}

/// Mini-batch training over `dataset`; rows are reshuffled every epoch.
/// Passing `observations` enables the hybrid observation losses.
pub fn train_deeponet(
    arch: DeepOnetArch,
    plan: &TrainPlan,
    config: &OscillatorConfig,
    dataset: &DeepOnetDataset,
    observations: Option<&ObservationSet>,
    init_seed: u64,
) -> Result<DeepOnetRun> {
    plan.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("empty DeepONet dataset"));
    }
    if observations.is_some_and(|o| o.is_empty()) {
        return Err(Error::config("hybrid training needs observations"));
    }
    let mut model = DeepOnetModel::new(arch, init_seed)?;
    let mut params = model.params.clone();
    let mut trainer = Trainer::new(plan, &params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let batch_size = plan.batch_size.min(dataset.len());
    let mut cursor = dataset.len();
    let mut converged = false;
    let mut last = None;
    let mut batch = None;

    while trainer.steps_taken() < plan.max_iters {
        if cursor + batch_size > dataset.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let b = dataset.batch(&order[cursor..cursor + batch_size])?;
        cursor += batch_size;
        let weights = *trainer.weights();
        let report = trainer.step(&mut params, |tape, vars| {
            DeepOnetObjective { model: &model, config, batch: &b, observations, weights }.record_terms(tape, vars)
        })?;
        last = Some(report);
        batch = Some(b);
        if trainer.converged() {
            converged = true;
            break;
        }
    }
    let (Some(last), Some(batch)) = (last, batch) else {
        return Err(Error::config("max_iters must be > 0"));
    };
    trainer.log(&last);
    model.params = params;
    let final_weights = *trainer.weights();
    let final_terms = {
        let obj = DeepOnetObjective { model: &model, config, batch: &batch, observations, weights: final_weights };
        let (mut tape, vars) = Tape::with_params(&model.params);
        obj.record_terms(&mut tape, &vars)?.values(&tape)
    };
    let steps = trainer.steps_taken();
    Ok(DeepOnetRun { model, history: trainer.into_history(), steps, converged, final_terms, final_weights })
}
