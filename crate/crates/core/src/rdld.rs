//! Real-drift detection: a client drifted when its previous and current
//! prototypes land in different clusters of the current centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototype::{assign_cluster, Prototype};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Ascending ids of drifted clients.
    pub drift: Vec<usize>,
    /// Ascending ids of clean clients.
    pub clean: Vec<usize>,
    /// `(previous cluster, current cluster)` per client, `None` on the first step.
    pub assignments: Vec<Option<(usize, usize)>>,
}

impl DriftReport {
    pub fn all_clean(num_clients: usize) -> Self {
        Self {
            drift: Vec::new(),
            clean: (0..num_clients).collect(),
            assignments: vec![None; num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_drifted(&self, client: usize) -> bool {
        self.drift.binary_search(&client).is_ok()
    }

    pub fn flags(&self) -> Vec<bool> {
        (0..self.num_clients()).map(|k| self.is_drifted(k)).collect()
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        let (drift, clean): (Vec<usize>, Vec<usize>) = (0..flags.len()).partition(|&k| flags[k]);
        Self {
            drift,
            clean,
            assignments: vec![None; flags.len()],
        }
    }
}

/// With no previous prototypes every client is clean.
pub fn detect_real_drift(
    previous: Option<&[Prototype]>,
    current: &[Prototype],
    centers: &[Prototype],
) -> Result<DriftReport> {
    let Some(previous) = previous else {
        return Ok(DriftReport::all_clean(current.len()));
    };
    if previous.len() != current.len() {
        return Err(Error::DimensionMismatch {
            expected: current.len(),
            actual: previous.len(),
        });
    }
    let mut report = DriftReport {
        drift: Vec::new(),
        clean: Vec::new(),
        assignments: Vec::with_capacity(current.len()),
    };
    for (k, (prev, curr)) in previous.iter().zip(current).enumerate() {
        let a = assign_cluster(prev, centers)?;
        let b = assign_cluster(curr, centers)?;
        if a == b {
            report.clean.push(k);
        } else {
            report.drift.push(k);
        }
        report.assignments.push(Some((a, b)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(v: f64) -> Prototype {
        Prototype::from_values(1, vec![v], vec![1]).unwrap()
    }

    #[test]
    fn first_step_is_all_clean() {
        let r = detect_real_drift(None, &[p(0.0), p(1.0), p(2.0)], &[p(0.0)]).unwrap();
        assert_eq!(r.clean, vec![0, 1, 2]);
        assert!(r.drift.is_empty());
    }

    #[test]
    fn switching_centers_is_drift() {
        let centers = [p(0.0), p(10.0)];
        let r = detect_real_drift(
            Some(&[p(0.5), p(9.0), p(1.0)]),
            &[p(9.5), p(9.2), p(0.2)],
            &centers,
        )
        .unwrap();
        assert_eq!(r.drift, vec![0]);
        assert_eq!(r.clean, vec![1, 2]);
        assert_eq!(r.assignments[0], Some((0, 1)));
        assert_eq!(r.flags(), vec![true, false, false]);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(detect_real_drift(Some(&[p(0.0)]), &[p(0.0), p(1.0)], &[p(0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn report_partitions_clients(
            prev in proptest::collection::vec(-5.0f64..5.0, 1..30),
            shift in proptest::collection::vec(-5.0f64..5.0, 30),
            centers in proptest::collection::vec(-5.0f64..5.0, 1..5),
        ) {
            let prev: Vec<_> = prev.iter().map(|&v| p(v)).collect();
            let curr: Vec<_> = prev.iter().zip(&shift).map(|(a, s)| p(a.values()[0] + s)).collect();
            let centers: Vec<_> = centers.iter().map(|&v| p(v)).collect();
            let r = detect_real_drift(Some(&prev), &curr, &centers).unwrap();
            let mut all: Vec<usize> = r.drift.iter().chain(&r.clean).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..prev.len()).collect::<Vec<_>>());
            // identical prototypes never drift
            let same = detect_real_drift(Some(&prev), &prev, &centers).unwrap();
            prop_assert!(same.drift.is_empty());
        }
    }
}
