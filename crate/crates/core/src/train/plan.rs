use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::optim::{OptimizerKind, SoapSettings};
use crate::error::{Error, Result};

/// Optimization settings shared by PINN and DeepONet training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub optimizer: OptimizerKind,
    pub soap: SoapSettings,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,

    pub annealing: bool,
    /// Moving-average rate of the annealing update.
    pub anneal_alpha: f64,
    /// Steps between annealing updates.
    pub anneal_period: usize,
    /// Fixed (or initial, with annealing) weights. Defaults to the manual
    /// values without annealing and to all ones with it.
    pub weights: Option<LossWeights>,

    /// Number of time-marching windows, `M_tm`.
    pub time_windows: usize,
    /// Number of causal chunks per window, `M_cau` (1 disables causal training).
    pub causal_chunks: usize,
    /// `η_cau`
    pub causal_threshold: f64,
    /// A stage that plateaus with `L_ODE1 > factor · η_cau` after a chunk was
    /// appended rolls back to the pre-append state and stops.
    pub causal_degrade_factor: f64,

    /// PINN collocation points per window, `N_ODE`.
    pub n_ode: usize,
    /// DeepONet dataset: number of IC groups and time samples per group.
    pub groups: usize,
    pub per_group: usize,
    pub batch_size: usize,
    /// Observation rows in hybrid runs.
    pub n_obs: usize,

    pub max_iters: usize,
    /// Stop once the running minimum of the total loss improved by less than
    /// `rel_tol` (relative) over the last `horizon` steps.
    pub horizon: usize,
    pub rel_tol: f64,

    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self::pinn()
    }
}

impl TrainPlan {
    pub fn pinn() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            soap: SoapSettings::default(),
            lr0: 0.003,
            decay_rate: 0.9,
            decay_steps: 10_000,
            annealing: false,
            anneal_alpha: 0.1,
            anneal_period: 100,
            weights: None,
            time_windows: 1,
            causal_chunks: 1,
            causal_threshold: 0.1,
            causal_degrade_factor: 10.0,
            n_ode: 1000,
            groups: 10_000,
            per_group: 1000,
            batch_size: 50_000,
            n_obs: 1000,
            max_iters: 200_000,
            horizon: 2000,
            rel_tol: 1e-4,
            log_every: 100,
            seed: 0,
        }
    }

    pub fn deeponet() -> Self {
        Self { decay_steps: 3000, annealing: true, ..Self::pinn() }
    }

    pub fn initial_weights(&self) -> LossWeights {
        self.weights.unwrap_or(if self.annealing { LossWeights::ones() } else { LossWeights::manual() })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be > 0");
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) || self.decay_steps == 0 {
            return bad("decay_rate must be in (0, 1] and decay_steps > 0");
        }
        if self.time_windows == 0 || self.causal_chunks == 0 {
            return bad("time_windows and causal_chunks must be >= 1");
        }
        if self.causal_chunks > 1 && !(self.causal_threshold > 0.0) {
            return bad("causal_threshold must be > 0 when causal training is enabled");
        }
        if self.anneal_period == 0 || !(0.0..=1.0).contains(&self.anneal_alpha) {
            return bad("anneal_period must be > 0 and anneal_alpha in [0, 1]");
        }
        if self.n_ode == 0 || self.groups == 0 || self.per_group == 0 || self.batch_size == 0 {
            return bad("sample counts and batch size must be > 0");
        }
        if self.log_every == 0 || self.horizon == 0 {
            return bad("log_every and horizon must be > 0");
        }
        if self.soap.refresh == 0 || !(self.soap.damping >= 0.0) {
            return bad("soap.refresh must be > 0 and soap.damping >= 0");
        }
        self.initial_weights().validate()
    }
}
