//! Loss assembly, optimizers and training drivers for PINNs and
//! PI-DeepONets, including time-marching, causal chunking, loss-weight
//! annealing and the hybrid observation loss.

mod causal;
mod dataset;
mod deeponet;
mod loss;
mod optim;
mod pinn;
mod plan;
mod trainer;

pub use causal::{causal_schedule, chunk_of};
pub use dataset::{build_deeponet_dataset, DeepOnetDataset, ObservationSet};
pub use deeponet::{train_deeponet, DeepOnetObjective, DeepOnetRun};
pub use loss::{
    anneal_weights, record_friction, record_mse, record_ode_losses, record_residuals, total_loss, LossTerms,
    LossVars, LossWeights, TermGradients,
};
pub use optim::{adam_step, lr_schedule, soap_step, Adam, Optimizer, OptimizerKind, Soap, SoapSettings};
pub use pinn::{
    collocation, pinn_losses, train_pinn, train_pinn_window, window_collocation, window_seed, PinnObjective, PinnRun,
};
pub use plan::TrainPlan;
pub use trainer::{ConvergenceMonitor, History, HistoryRow, StepReport, Trainer};
