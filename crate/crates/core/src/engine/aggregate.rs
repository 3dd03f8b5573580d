//! Server-side model combination and cross-step model inheritance.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::prototype::{assign_cluster, Prototype};

/// `eta_g / sum N_k * sum_k N_k * w_{k,c}` for every cluster `c`. Updates are
/// accumulated in the order given; callers pass them sorted by client id.
pub fn aggregate(updates: &[(usize, &[ModelParams])], global_lr: f64) -> Result<Vec<ModelParams>> {
    let (_, first) = updates.first().ok_or(Error::Empty("aggregation set"))?;
    let total: usize = updates.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("total client size is zero".into()));
    }
    let scale = global_lr / total as f64;
    let mut out = Vec::with_capacity(first.len());
    for (c, template) in first.iter().enumerate() {
        let mut acc = vec![0.0; template.values().len()];
        for (n, models) in updates {
            if models.len() != first.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: models.len(),
                });
            }
            let w = models[c].values();
            if w.len() != acc.len() {
                return Err(Error::DimensionMismatch {
                    expected: acc.len(),
                    actual: w.len(),
                });
            }
            let weight = *n as f64;
            acc.iter_mut().zip(w).for_each(|(a, x)| *a += weight * x);
        }
        acc.iter_mut().for_each(|a| *a *= scale);
        out.push(ModelParams::from_values(template.arch(), acc)?);
    }
    Ok(out)
}

/// Initial models for a new step. `prev_assignments[k]` is the model
/// client `k` relied on last step; its previous prototype is projected onto
/// the new centers, giving an overlap count per (new cluster, old model).
/// Pairs are matched greedily, largest overlap first (ties: lower new index,
/// then lower old index), and each old model is handed out at most once.
/// Clusters left without a positive-overlap match get `None`.
pub fn warm_start_sources(
    num_prev_models: usize,
    prev_assignments: &[usize],
    prev_prototypes: &[Prototype],
    new_centers: &[Prototype],
) -> Result<Vec<Option<usize>>> {
    if num_prev_models == 0 {
        return Err(Error::Empty("previous models"));
    }
    if prev_assignments.len() != prev_prototypes.len() {
        return Err(Error::DimensionMismatch {
            expected: prev_prototypes.len(),
            actual: prev_assignments.len(),
        });
    }
    let mut overlap = vec![vec![0usize; num_prev_models]; new_centers.len()];
    for (&old, proto) in prev_assignments.iter().zip(prev_prototypes) {
        if old >= num_prev_models {
            return Err(Error::InvalidArgument(format!(
                "previous assignment {old} has no model"
            )));
        }
        overlap[assign_cluster(proto, new_centers)?][old] += 1;
    }
    let mut pairs: Vec<(usize, usize, usize)> = overlap
        .iter()
        .enumerate()
        .flat_map(|(new, row)| row.iter().enumerate().map(move |(old, &n)| (n, new, old)))
        .filter(|&(n, _, _)| n > 0)
        .collect();
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut source: Vec<Option<usize>> = vec![None; new_centers.len()];
    let mut taken = vec![false; num_prev_models];
    for (_, new, old) in pairs {
        if source[new].is_none() && !taken[old] {
            source[new] = Some(old);
            taken[old] = true;
        }
    }
    Ok(source)
}

/// [`warm_start_sources`] with unmatched clusters starting from the mean of
/// all previous models.
pub fn warm_start_models(
    prev_models: &[ModelParams],
    prev_assignments: &[usize],
    prev_prototypes: &[Prototype],
    new_centers: &[Prototype],
) -> Result<Vec<ModelParams>> {
    let sources = warm_start_sources(prev_models.len(), prev_assignments, prev_prototypes, new_centers)?;
    let fallback = ModelParams::mean_of(prev_models)?;
    Ok(sources
        .into_iter()
        .map(|old| old.map_or_else(|| fallback.clone(), |i| prev_models[i].clone()))
        .collect())
}
