//! Cluster-count determination: k-means over client prototypes for every
//! candidate count, scored by the average silhouette.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototype::{squared_distance, Prototype};
use crate::rng::{self, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-WCSS run is kept.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub num_clusters: usize,
    pub assignments: Vec<usize>,
    pub centers: Vec<Prototype>,
    pub wcss: f64,
    /// WCSS after every center update of the kept run.
    pub wcss_history: Vec<f64>,
    pub silhouette: Option<f64>,
}

fn flat_points(prototypes: &[Prototype]) -> Vec<&[f64]> {
    prototypes.iter().map(Prototype::values).collect()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &[&[f64]], c: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, points[chosen[0]]))
        .collect();
    while chosen.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining mass sits on chosen points; pick any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

fn recompute_centers(points: &[&[f64]], assignments: &[usize], c: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= n as f64);
    }
    sums
}

/// Moves points into empty clusters: each empty cluster takes the point
/// farthest from its current center among clusters with >= 2 members.
fn repair_empty(points: &[&[f64]], centers: &[Vec<f64>], assignments: &mut [usize], c: usize) {
    loop {
        let mut sizes = vec![0usize; c];
        assignments.iter().for_each(|&a| sizes[a] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[assignments[i]] >= 2)
            .max_by(|&i, &j| {
                let di = squared_distance(points[i], &centers[assignments[i]]);
                let dj = squared_distance(points[j], &centers[assignments[j]]);
                di.total_cmp(&dj).then(j.cmp(&i))
            });
        match donor {
            Some(i) => assignments[i] = empty,
            None => return,
        }
    }
}

fn wcss(points: &[&[f64]], assignments: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centers[a]))
        .sum()
}

/// Single-point moves after Lloyd converges: a point changes cluster when
/// doing so lowers the WCSS once both centers are updated. Lloyd's fixed
/// points can still admit such moves.
fn hartigan_refine(points: &[&[f64]], assignments: &mut [usize], c: usize) -> bool {
    let mut moved_any = false;
    for _ in 0..points.len() * c {
        let centers = recompute_centers(points, assignments, c);
        let mut sizes = vec![0usize; c];
        assignments.iter().for_each(|&a| sizes[a] += 1);
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            let from = assignments[i];
            if sizes[from] < 2 {
                continue;
            }
            let n_from = sizes[from] as f64;
            let removal = n_from / (n_from - 1.0) * squared_distance(p, &centers[from]);
            for to in (0..c).filter(|&to| to != from) {
                let n_to = sizes[to] as f64;
                let gain = removal - n_to / (n_to + 1.0) * squared_distance(p, &centers[to]);
                // relative margin keeps round-off from cycling
                if gain > 1e-12 * removal.max(1.0) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, to));
                }
            }
        }
        let Some((_, i, to)) = best else {
            break;
        };
        assignments[i] = to;
        moved_any = true;
    }
    moved_any
}

struct Run {
    assignments: Vec<usize>,
    centers: Vec<Vec<f64>>,
    history: Vec<f64>,
}

fn lloyd(points: &[&[f64]], c: usize, options: &KMeansOptions, rng: &mut SimRng) -> Run {
    let mut centers = kmeans_plus_plus(points, c, rng);
    let mut assignments = vec![0; points.len()];
    let mut history = Vec::new();
    for _ in 0..options.max_iters.max(1) {
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centers).0;
        }
        repair_empty(points, &centers, &mut assignments, c);
        let updated = recompute_centers(points, &assignments, c);
        let shift = centers
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        history.push(wcss(points, &assignments, &centers));
        if shift < options.tol {
            break;
        }
    }
    if hartigan_refine(points, &mut assignments, c) {
        centers = recompute_centers(points, &assignments, c);
        history.push(wcss(points, &assignments, &centers));
    }
    Run {
        assignments,
        centers,
        history,
    }
}

/// Lloyd's algorithm with k-means++ seeding and restarts, finished with
/// single-point moves.
pub fn kmeans(
    prototypes: &[Prototype],
    c: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<ClusteringResult> {
    if prototypes.is_empty() {
        return Err(Error::Empty("prototypes"));
    }
    if c < 1 || c > prototypes.len() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {c} must lie in 1..={}",
            prototypes.len()
        )));
    }
    let r = prototypes[0].num_classes();
    if prototypes.iter().any(|p| p.num_classes() != r) {
        return Err(Error::InvalidArgument("prototypes differ in shape".into()));
    }
    let points = flat_points(prototypes);
    let mut best: Option<(f64, Run)> = None;
    for restart in 0..options.restarts.max(1) {
        let mut rng = rng::stream(seed, Stream::KMeans, &[c as u64, restart as u64]);
        let run = lloyd(&points, c, options, &mut rng);
        let score = *run.history.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, run));
        }
    }
    let (score, run) = best.expect("at least one restart");
    let mut member_counts = vec![vec![0usize; r]; c];
    for (p, &a) in prototypes.iter().zip(&run.assignments) {
        member_counts[a]
            .iter_mut()
            .zip(p.counts())
            .for_each(|(m, n)| *m += n);
    }
    let centers = run
        .centers
        .into_iter()
        .zip(member_counts)
        .map(|(values, counts)| Prototype::from_values(r, values, counts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusteringResult {
        num_clusters: c,
        assignments: run.assignments,
        centers,
        wcss: score,
        wcss_history: run.history,
        silhouette: None,
    })
}

/// Mean silhouette `(b - a) / max(a, b)`; members of singleton clusters score 0.
pub fn silhouette_score(prototypes: &[Prototype], assignments: &[usize]) -> Result<f64> {
    let points = flat_points(prototypes);
    silhouette_of_points(&points, assignments)
}

pub fn silhouette_of_points(points: &[&[f64]], assignments: &[usize]) -> Result<f64> {
    let values = silhouette_values(points, assignments)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-point silhouettes; a point whose `a` and `b` are both 0 scores 0.
pub fn silhouette_values(points: &[&[f64]], assignments: &[usize]) -> Result<Vec<f64>> {
    if points.len() != assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            actual: assignments.len(),
        });
    }
    let c = assignments.iter().copied().max().map_or(0, |m| m + 1);
    if c < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least 2 clusters".into(),
        ));
    }
    let mut sizes = vec![0usize; c];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument("silhouette given an empty cluster".into()));
    }
    let n = points.len();
    let mut values = vec![0.0; n];
    for i in 0..n {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; c];
        for j in 0..n {
            if j != i {
                sums[assignments[j]] += squared_distance(points[i], points[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|&k| k != own)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            values[i] = (b - a) / denom;
        }
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdOutcome {
    pub num_clusters: usize,
    pub clustering: ClusteringResult,
    /// `(candidate count, average silhouette)` for every candidate.
    pub silhouette_table: Vec<(usize, f64)>,
}

impl NcdOutcome {
    pub fn centers(&self) -> &[Prototype] {
        &self.clustering.centers
    }
}

/// Runs k-means for `c = 2..=max_clusters` and keeps the best silhouette,
/// smallest `c` on ties.
pub fn determine_cluster_count(
    prototypes: &[Prototype],
    max_clusters: usize,
    seed: u64,
    options: &KMeansOptions,
) -> Result<NcdOutcome> {
    if max_clusters < 2 {
        return Err(Error::InvalidArgument("max clusters must be >= 2".into()));
    }
    if prototypes.len() < max_clusters {
        return Err(Error::InvalidArgument(format!(
            "{} prototypes cannot support {max_clusters} clusters",
            prototypes.len()
        )));
    }
    let mut table = Vec::with_capacity(max_clusters - 1);
    let mut best: Option<ClusteringResult> = None;
    for c in 2..=max_clusters {
        let mut result = kmeans(prototypes, c, seed, options)?;
        let score = silhouette_score(prototypes, &result.assignments)?;
        result.silhouette = Some(score);
        table.push((c, score));
        let better = best
            .as_ref()
            .is_none_or(|b| score > b.silhouette.expect("scored"));
        if better {
            best = Some(result);
        }
    }
    let clustering = best.expect("at least one candidate");
    Ok(NcdOutcome {
        num_clusters: clustering.num_clusters,
        clustering,
        silhouette_table: table,
    })
}
