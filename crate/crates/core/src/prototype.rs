//! Data prototypes: per-class mean outputs of a frozen probe model.

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledExample;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};

/// The shared frozen model whose outputs define every prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel(ModelParams);

impl ProbeModel {
    pub fn freeze(params: ModelParams) -> Self {
        Self(params)
    }

    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.num_classes()
    }
}

/// `R x R` matrix stored row-major; column `r` is the mean probe output over
/// samples labelled `r`, or all zeros when the class is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    num_classes: usize,
    counts: Vec<usize>,
    values: Vec<f64>,
}

impl Prototype {
    pub fn from_values(num_classes: usize, values: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if values.len() != num_classes * num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes * num_classes,
                actual: values.len(),
            });
        }
        if counts.len() != num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                actual: counts.len(),
            });
        }
        Ok(Self {
            num_classes,
            counts,
            values,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Per-class sample counts `N_r`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Row-major flattened matrix.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.num_classes + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.num_classes).map(|row| self.get(row, col)).collect()
    }
}

pub fn compute_prototype(probe: &ProbeModel, dataset: &[LabeledExample]) -> Result<Prototype> {
    if dataset.is_empty() {
        return Err(Error::Empty("prototype dataset"));
    }
    let r = probe.num_classes();
    let mut by_class: Vec<Vec<&LabeledExample>> = vec![Vec::new(); r];
    for ex in dataset {
        if ex.label >= r {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                num_classes: r,
            });
        }
        by_class[ex.label].push(ex);
    }
    let mut values = vec![0.0; r * r];
    let mut counts = vec![0; r];
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut sum = vec![0.0; r];
        for ex in members {
            let out = forward(probe.params(), &ex.features)?;
            sum.iter_mut().zip(&out).for_each(|(s, o)| *s += o);
        }
        let n = members.len() as f64;
        for (row, s) in sum.iter().enumerate() {
            values[row * r + class] = s / n;
        }
        counts[class] = members.len();
    }
    Ok(Prototype {
        num_classes: r,
        counts,
        values,
    })
}

/// Frobenius norm of the difference.
pub fn prototype_distance(a: &Prototype, b: &Prototype) -> Result<f64> {
    if a.num_classes != b.num_classes {
        return Err(Error::DimensionMismatch {
            expected: a.num_classes,
            actual: b.num_classes,
        });
    }
    Ok(squared_distance(&a.values, &b.values).sqrt())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center, lowest index on ties.
pub fn assign_cluster(prototype: &Prototype, centers: &[Prototype]) -> Result<usize> {
    if centers.is_empty() {
        return Err(Error::Empty("cluster centers"));
    }
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = prototype_distance(prototype, c)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}
