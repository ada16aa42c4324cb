use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalizer of the NMSE denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseNorm {
    /// `‖ref‖²`
    #[default]
    Energy,
    /// `‖ref − mean(ref)‖²`
    Variance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConvention {
    pub nmse_norm: NmseNorm,
    /// Subtract the means before correlating.
    pub ncc_centered: bool,
}

fn check(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::shape(format!("series lengths differ: {} vs {}", pred.len(), reference.len())));
    }
    if pred.is_empty() {
        return Err(Error::Metric("empty series".into()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn nmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    nmse_with(pred, reference, MetricConvention::default())
}

pub fn nmse_with(pred: &[f64], reference: &[f64], conv: MetricConvention) -> Result<f64> {
    check(pred, reference)?;
    let err: f64 = pred.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let c = match conv.nmse_norm {
        NmseNorm::Energy => 0.0,
        NmseNorm::Variance => mean(reference),
    };
    let den: f64 = reference.iter().map(|x| (x - c) * (x - c)).sum();
    if !(den > 0.0) {
        return Err(Error::Metric("reference has zero norm".into()));
    }
    Ok(err / den)
}

/// Normalized cross correlation in percent.
pub fn ncc(pred: &[f64], reference: &[f64]) -> Result<f64> {
    ncc_with(pred, reference, MetricConvention::default())
}

pub fn ncc_with(pred: &[f64], reference: &[f64], conv: MetricConvention) -> Result<f64> {
    check(pred, reference)?;
    let (mp, mr) = if conv.ncc_centered { (mean(pred), mean(reference)) } else { (0.0, 0.0) };
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in pred.iter().zip(reference) {
        let (x, y) = (a - mp, b - mr);
        xy += x * y;
        xx += x * x;
        yy += y * y;
    }
    if !(xx > 0.0 && yy > 0.0) {
        return Err(Error::Metric("zero-norm series in NCC".into()));
    }
    Ok((100.0 * xy / (xx.sqrt() * yy.sqrt())).clamp(-100.0, 100.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub nmse_p: f64,
    pub nmse_q: f64,
    pub ncc_p: f64,
    pub ncc_q: f64,
}

impl StateMetrics {
    pub fn compute(pred: (&[f64], &[f64]), reference: (&[f64], &[f64]), conv: MetricConvention) -> Result<Self> {
        Ok(Self {
            nmse_p: nmse_with(pred.0, reference.0, conv)?,
            nmse_q: nmse_with(pred.1, reference.1, conv)?,
            ncc_p: ncc_with(pred.0, reference.0, conv)?,
            ncc_q: ncc_with(pred.1, reference.1, conv)?,
        })
    }
}
