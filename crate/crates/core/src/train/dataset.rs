use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fdm::{InitialCondition, Trajectory};
use crate::nets::OperatorInput;

/// Rows of `(t, ic)`: group `g` pairs `ics[g]` with `t[g·per_group ..][..per_group]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepOnetDataset {
    pub ics: Vec<InitialCondition>,
    pub t: Vec<f64>,
    pub per_group: usize,
}

impl DeepOnetDataset {
    pub fn groups(&self) -> usize {
        self.ics.len()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn ic_of_row(&self, row: usize) -> usize {
        row / self.per_group
    }

    /// Batch of the given rows, with ICs deduplicated by group.
    pub fn batch(&self, rows: &[usize]) -> Result<OperatorInput> {
        let mut local: HashMap<usize, usize> = HashMap::new();
        let mut ics = Vec::new();
        let mut index = Vec::with_capacity(rows.len());
        let mut t = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::shape(format!("row {r} out of {}", self.len())));
            }
            let g = self.ic_of_row(r);
            let k = *local.entry(g).or_insert_with(|| {
                ics.push(self.ics[g]);
                ics.len() - 1
            });
            index.push(k);
            t.push(self.t[r]);
        }
        OperatorInput::new(t, ics, index)
    }
}

/// `groups` ICs uniform in `[−s^{p,q}, s^{p,q}]²`, each repeated with
/// `per_group` fresh times uniform in `[0, s^t]`.
pub fn build_deeponet_dataset(
    groups: usize,
    per_group: usize,
    scale_t: f64,
    scale_pq: f64,
    seed: u64,
) -> Result<DeepOnetDataset> {
    if groups == 0 || per_group == 0 {
        return Err(Error::config("dataset needs at least one group and one time sample"));
    }
    if !(scale_t > 0.0 && scale_pq > 0.0) {
        return Err(Error::config("dataset scales must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ics = Vec::with_capacity(groups);
    let mut t = Vec::with_capacity(groups * per_group);
    for _ in 0..groups {
        ics.push(InitialCondition {
            p0: rng.random_range(-scale_pq..=scale_pq),
            q0: rng.random_range(-scale_pq..=scale_pq),
        });
        for _ in 0..per_group {
            t.push(rng.random_range(0.0..=scale_t));
        }
    }
    Ok(DeepOnetDataset { ics, t, per_group })
}

/// Supervised rows for hybrid training, expressed in the operator's own
/// coordinates: a sample at time `t` of a reference trajectory becomes
/// `(t − k·s^t, state at k·s^t) ↦ (p, q)` with `k = ⌊t / s^t⌋`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub input: OperatorInput,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Takes `count` evenly spaced samples of `traj` (which must start at
    /// t = 0 and hit every segment start `k·s^t` on its grid).
    pub fn from_trajectory(traj: &Trajectory, scale_t: f64, count: usize) -> Result<Self> {
        if traj.is_empty() || count == 0 {
            return Err(Error::config("observation set would be empty"));
        }
        let seg_samples = scale_t * traj.sample_rate;
        let seg = seg_samples.round() as usize;
        if seg == 0 || (seg_samples - seg as f64).abs() > 1e-6 {
            return Err(Error::config(format!(
                "segment length {scale_t} s is not a whole number of samples at {} Hz",
                traj.sample_rate
            )));
        }
        let n = traj.len();
        let count = count.min(n);
        let picks: Vec<usize> = (0..count).map(|i| i * (n - 1) / (count - 1).max(1)).collect();
        let mut ics = Vec::new();
        let mut index = Vec::with_capacity(count);
        let mut t = Vec::with_capacity(count);
        let mut p = Vec::with_capacity(count);
        let mut q = Vec::with_capacity(count);
        let mut last_k = usize::MAX;
        for &i in &picks {
            // the last sample of a segment may belong to either; use the earlier
            // segment so t = s^t rows are represented
            let k = if i > 0 && i % seg == 0 { i / seg - 1 } else { i / seg };
            if k != last_k {
                let s = k * seg;
                ics.push(InitialCondition { p0: traj.p[s], q0: traj.q[s] });
                last_k = k;
            }
            index.push(ics.len() - 1);
            t.push((i - k * seg) as f64 / traj.sample_rate);
            p.push(traj.p[i]);
            q.push(traj.q[i]);
        }
        Ok(Self { input: OperatorInput::new(t, ics, index)?, p, q })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_shape_and_ranges() {
        let d = build_deeponet_dataset(50, 40, 0.01, 0.35, 3).unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(d.groups(), 50);
        assert!(d.ics.iter().all(|c| c.p0.abs() <= 0.35 && c.q0.abs() <= 0.35));
        assert!(d.t.iter().all(|&t| (0.0..=0.01).contains(&t)));
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let a = build_deeponet_dataset(10, 10, 0.01, 2.0, 9).unwrap();
        let b = build_deeponet_dataset(10, 10, 0.01, 2.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_deeponet_dataset(10, 10, 0.01, 2.0, 10).unwrap());
    }

    #[test]
    fn batch_deduplicates_groups() {
        let d = build_deeponet_dataset(4, 5, 0.01, 0.35, 1).unwrap();
        let b = d.batch(&[0, 1, 7, 19, 2]).unwrap();
        assert_eq!(b.ics.len(), 3);
        assert_eq!(&*b.index, &[0, 0, 1, 2, 0]);
        assert_eq!(b.t[3], d.t[19]);
    }

    #[test]
    fn observations_use_segment_relative_coordinates() {
        let traj = Trajectory {
            sample_rate: 100.0,
            t0: 0.0,
            p: (0..31).map(|i| i as f64).collect(),
            q: (0..31).map(|i| -(i as f64)).collect(),
        };
        let obs = ObservationSet::from_trajectory(&traj, 0.1, 31).unwrap();
        assert_eq!(obs.len(), 31);
        // sample 15: segment 1 (starts at sample 10), local t = 0.05
        let row = 15;
        assert!((obs.input.t[row] - 0.05).abs() < 1e-12);
        assert_eq!(obs.input.ics[obs.input.index[row]].p0, 10.0);
        // sample 10 closes segment 0
        assert!((obs.input.t[10] - 0.1).abs() < 1e-12);
        assert_eq!(obs.input.ics[obs.input.index[10]].p0, 0.0);
        assert!(ObservationSet::from_trajectory(&traj, 0.105, 10).is_err());
    }
}
