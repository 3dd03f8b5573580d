//! Drift scenario construction.
//!
//! A scenario is a set of client timelines. At every time step each client
//! receives a fresh shard of data drawn from a base generator, rotated by the
//! step's angle (virtual drift), relabelled by its concept permutation (real
//! drift), with class proportions skewed by a Dirichlet split (label drift).

mod idx;
mod scenario;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng, Stream};

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use scenario::{
    build_scenario, ClientTimeline, DataSource, DriftSchedule, Scenario, ScenarioConfig,
    ScheduleStep, TaskKey, DEFAULT_CONCEPT_COUNTS, DEFAULT_ROTATIONS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// How feature vectors map onto geometry, which decides how rotation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureLayout {
    /// Generic vector; rotation acts on the first `rotated_pairs` coordinate
    /// planes (0,1), (2,3), ...
    Vector { rotated_pairs: usize },
    /// Row-major grayscale image; rotation resamples pixels about the center.
    Image { rows: usize, cols: usize },
}

impl FeatureLayout {
    pub fn full_rotation(feature_dim: usize) -> Self {
        FeatureLayout::Vector { rotated_pairs: feature_dim / 2 }
    }

    /// Rotates `round(fraction * D/2)` planes, at least one.
    pub fn partial_rotation(feature_dim: usize, fraction: f64) -> Self {
        let pairs = ((fraction * (feature_dim / 2) as f64).round() as usize).clamp(1, feature_dim / 2);
        FeatureLayout::Vector { rotated_pairs: pairs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPool {
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub layout: FeatureLayout,
}

impl DataPool {
    pub fn new(
        examples: Vec<LabeledExample>,
        num_classes: usize,
        feature_dim: usize,
        layout: FeatureLayout,
    ) -> Result<Self> {
        for ex in &examples {
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    num_classes,
                });
            }
            if ex.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    actual: ex.features.len(),
                });
            }
        }
        Ok(Self {
            examples,
            num_classes,
            feature_dim,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }
}

/// A concept is a label permutation; distinct permutations are distinct
/// decision boundaries over the same inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    permutation: Vec<usize>,
}

impl ConceptSpec {
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; permutation.len()];
        for &p in &permutation {
            if p >= permutation.len() || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "{permutation:?} is not a permutation"
                )));
            }
            seen[p] = true;
        }
        Ok(Self { permutation })
    }

    pub fn identity(num_classes: usize) -> Self {
        Self {
            permutation: (0..num_classes).collect(),
        }
    }

    /// `y -> R - 1 - y`
    pub fn reversed(num_classes: usize) -> Self {
        Self {
            permutation: (0..num_classes).rev().collect(),
        }
    }

    /// `y -> (y + shift) mod R`
    pub fn shifted(num_classes: usize, shift: usize) -> Self {
        Self {
            permutation: (0..num_classes).map(|y| (y + shift) % num_classes).collect(),
        }
    }

    /// Concept catalogue used by the schedule: 0 keeps labels, 1 reverses
    /// them, and `c >= 2` shifts by `c - 1`.
    pub fn standard(index: usize, num_classes: usize) -> Self {
        match index {
            0 => Self::identity(num_classes),
            1 => Self::reversed(num_classes),
            c => Self::shifted(num_classes, c - 1),
        }
    }

    pub fn apply(&self, label: usize) -> usize {
        self.permutation[label]
    }

    pub fn num_classes(&self) -> usize {
        self.permutation.len()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

/// Seeded isotropic Gaussian classes; the means are fixed, every draw is fresh.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClasses {
    means: Vec<Vec<f64>>,
    spread: f64,
}

/// Minimum pairwise mean distance as a multiple of the spread.
pub const MIN_SEPARATION: f64 = 4.0;

impl GaussianClasses {
    /// Means are drawn on a sphere and rescaled so that the closest pair sits
    /// `separation * spread` apart (`separation` is clamped to at least 4).
    /// With zero spread the spread is taken as 1 for mean placement only.
    pub fn new(
        seed: u64,
        num_classes: usize,
        feature_dim: usize,
        spread: f64,
        separation: f64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidDimensions("need at least 2 classes".into()));
        }
        if feature_dim < 2 {
            return Err(Error::InvalidDimensions("feature dim must be >= 2".into()));
        }
        if !(spread >= 0.0) || !spread.is_finite() {
            return Err(Error::InvalidArgument(format!("spread {spread} must be >= 0")));
        }
        let mut rng = rng::stream(seed, Stream::ClassMeans, &[]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut means: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..feature_dim).map(|_| normal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..num_classes {
            for j in i + 1..num_classes {
                min_dist = min_dist.min(euclidean(&means[i], &means[j]));
            }
        }
        if !(min_dist > 1e-9) {
            return Err(Error::InvalidArgument("degenerate class means".into()));
        }
        let unit = if spread > 0.0 { spread } else { 1.0 };
        let scale = separation.max(MIN_SEPARATION) * unit / min_dist;
        for m in &mut means {
            m.iter_mut().for_each(|x| *x *= scale);
        }
        Ok(Self { means, spread })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample_class(&self, class: usize, rng: &mut SimRng) -> LabeledExample {
        let features = if self.spread == 0.0 {
            self.means[class].clone()
        } else {
            let normal = Normal::new(0.0, self.spread).expect("validated spread");
            self.means[class]
                .iter()
                .map(|m| m + normal.sample(rng))
                .collect()
        };
        LabeledExample::new(features, class)
    }

    /// `per_class` samples of every class, grouped by label.
    pub fn sample_pool(&self, per_class: usize, rng: &mut SimRng) -> DataPool {
        let examples = (0..self.num_classes())
            .flat_map(|c| (0..per_class).map(move |_| c))
            .map(|c| self.sample_class(c, rng))
            .collect();
        DataPool {
            examples,
            num_classes: self.num_classes(),
            feature_dim: self.feature_dim(),
            layout: FeatureLayout::full_rotation(self.feature_dim()),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn generate_base_pool(
    seed: u64,
    num_classes: usize,
    feature_dim: usize,
    per_class_count: usize,
    cluster_spread: f64,
) -> Result<DataPool> {
    if per_class_count < 1 {
        return Err(Error::InvalidDimensions("per-class count must be >= 1".into()));
    }
    let classes = GaussianClasses::new(
        seed,
        num_classes,
        feature_dim,
        cluster_spread,
        MIN_SEPARATION,
    )?;
    let mut rng = rng::stream(seed, Stream::PoolDraw, &[]);
    Ok(classes.sample_pool(per_class_count, &mut rng))
}

/// Relabels every example through the concept permutation.
pub fn apply_real_drift(examples: &[LabeledExample], concept: &ConceptSpec) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|ex| LabeledExample::new(ex.features.clone(), concept.apply(ex.label)))
        .collect()
}

/// Rotates `x` by `angle_degrees` in each coordinate plane (0,1), (2,3), ...;
/// a trailing odd coordinate is left in place.
pub fn rotate_vector(x: &[f64], angle_degrees: f64) -> Vec<f64> {
    rotate_leading_pairs(x, angle_degrees, x.len() / 2)
}

/// Like [`rotate_vector`] but only the first `pairs` planes turn.
pub fn rotate_leading_pairs(x: &[f64], angle_degrees: f64, pairs: usize) -> Vec<f64> {
    if angle_degrees == 0.0 {
        return x.to_vec();
    }
    let (s, c) = (angle_degrees * PI / 180.0).sin_cos();
    let mut out = x.to_vec();
    for pair in out.chunks_exact_mut(2).take(pairs) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
    out
}

/// Nearest-neighbour rotation of a row-major image about its center.
/// Pixels whose source falls outside the frame become 0.
pub fn rotate_image(pixels: &[f64], rows: usize, cols: usize, angle_degrees: f64) -> Vec<f64> {
    if angle_degrees == 0.0 {
        return pixels.to_vec();
    }
    let (s, c) = (angle_degrees * PI / 180.0).sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            // inverse map: rotate the destination offset by -angle
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            let (si, sj) = (sy.round(), sx.round());
            if si >= 0.0 && sj >= 0.0 && (si as usize) < rows && (sj as usize) < cols {
                out[i * cols + j] = pixels[si as usize * cols + sj as usize];
            }
        }
    }
    out
}

pub fn apply_virtual_drift_with_layout(
    examples: &[LabeledExample],
    angle_degrees: f64,
    layout: FeatureLayout,
) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|ex| {
            let features = match layout {
                FeatureLayout::Vector { rotated_pairs } => {
                    rotate_leading_pairs(&ex.features, angle_degrees, rotated_pairs)
                }
                FeatureLayout::Image { rows, cols } => {
                    rotate_image(&ex.features, rows, cols, angle_degrees)
                }
            };
            LabeledExample::new(features, ex.label)
        })
        .collect()
}

/// Feature-vector rotation; see [`rotate_vector`].
pub fn apply_virtual_drift(examples: &[LabeledExample], angle_degrees: f64) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|ex| LabeledExample::new(rotate_vector(&ex.features, angle_degrees), ex.label))
        .collect()
}

/// Splits `n` items by `shares` (summing to one): floors first, then the
/// remainder goes one by one to the largest fractional parts, lowest index first.
pub fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainder = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        counts[i] += 1;
        remainder -= 1;
    }
    // floating round-off can overshoot by one in pathological cases
    let mut total: usize = counts.iter().sum();
    while total > n {
        let i = (0..counts.len()).max_by_key(|&i| counts[i]).unwrap_or(0);
        counts[i] -= 1;
        total -= 1;
    }
    counts
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet(beta: f64, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|g| g / sum).collect()
    } else {
        // every Gamma draw underflowed: all mass on one random client
        let winner = rng.random_range(0..k);
        (0..k).map(|i| if i == winner { 1.0 } else { 0.0 }).collect()
    }
}

/// Label-skewed split of `pool` into `num_shards` disjoint shards covering it.
pub fn dirichlet_partition(
    pool: &DataPool,
    beta: f64,
    num_shards: usize,
    seed: u64,
) -> Result<Vec<Vec<LabeledExample>>> {
    let indices = dirichlet_partition_indices(pool, beta, num_shards, seed)?;
    Ok(indices
        .into_iter()
        .map(|shard| shard.into_iter().map(|i| pool.examples[i].clone()).collect())
        .collect())
}

/// Same split as [`dirichlet_partition`], returned as sorted pool indices.
pub fn dirichlet_partition_indices(
    pool: &DataPool,
    beta: f64,
    num_shards: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("beta {beta} must be > 0")));
    }
    if num_shards < 1 {
        return Err(Error::InvalidArgument("need at least one shard".into()));
    }
    if pool.len() < num_shards {
        log::warn!(
            "pool of {} examples is smaller than {} shards; some shards will be empty",
            pool.len(),
            num_shards
        );
    }
    let mut rng = rng::stream(seed, Stream::Partition, &[]);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes];
    for (i, ex) in pool.examples.iter().enumerate() {
        by_class[ex.label].push(i);
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_shards];
    for mut members in by_class {
        let shares = if num_shards == 1 {
            vec![1.0]
        } else {
            sample_dirichlet(beta, num_shards, &mut rng)
        };
        members.shuffle(&mut rng);
        let counts = apportion(members.len(), &shares);
        let mut start = 0;
        for (shard, count) in shards.iter_mut().zip(counts) {
            shard.extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    shards.iter_mut().for_each(|s| s.sort_unstable());
    Ok(shards)
}
