//! Accuracy metrics against the finite-difference reference, random
//! initial-condition test sets, stick/slip segmentation and residual
//! distribution summaries.

mod metrics;
mod phases;
mod testset;

pub use metrics::{ncc, ncc_with, nmse, nmse_with, MetricConvention, NmseNorm, StateMetrics};
pub use phases::{
    phase_fraction, residual_compare, residuals_from_derivatives, stick_slip_segments, PhaseSegment, ResidualEntry,
    ResidualSummary, Spread,
};
pub use testset::{evaluate_testset, reference_trajectory, CaseReport, MetricReport, TestCase, TestSet};
