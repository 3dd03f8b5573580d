use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{
    apply_real_drift, apply_virtual_drift_with_layout, dirichlet_partition_indices, load_idx,
    ConceptSpec, DataPool, FeatureLayout, GaussianClasses, LabeledExample,
};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, SimRng, Stream};

/// Concepts alive at each of the six default time steps.
pub const DEFAULT_CONCEPT_COUNTS: [usize; 6] = [2, 3, 4, 4, 4, 4];
/// Rotation in degrees applied at each of the six default time steps.
pub const DEFAULT_ROTATIONS: [i32; 6] = [0, 120, 240, 0, 120, 240];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_clients: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Samples per class in each time step's fresh draw, before partitioning.
    pub per_class_count: usize,
    pub cluster_spread: f64,
    pub class_separation: f64,
    /// Share of the coordinate planes that virtual drift turns (vector data).
    pub rotated_fraction: f64,
    pub dirichlet_beta: f64,
    pub concept_counts: Vec<usize>,
    pub rotations: Vec<i32>,
    pub test_samples_per_task: usize,
    pub source: DataSource,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_clients: 20,
            num_classes: 10,
            feature_dim: 40,
            per_class_count: 60,
            cluster_spread: 1.0,
            class_separation: 12.0,
            rotated_fraction: 0.6,
            dirichlet_beta: 1.0,
            concept_counts: DEFAULT_CONCEPT_COUNTS.to_vec(),
            rotations: DEFAULT_ROTATIONS.to_vec(),
            test_samples_per_task: 200,
            source: DataSource::Synthetic,
        }
    }
}

impl ScenarioConfig {
    pub fn num_steps(&self) -> usize {
        self.concept_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 1 {
            return Err(Error::config("clients", "must be >= 1"));
        }
        if self.concept_counts.is_empty() {
            return Err(Error::config("concept_counts", "schedule must have >= 1 step"));
        }
        if self.rotations.len() != self.concept_counts.len() {
            return Err(Error::config(
                "rotations",
                format!(
                    "length {} differs from concept_counts length {}",
                    self.rotations.len(),
                    self.concept_counts.len()
                ),
            ));
        }
        if self.concept_counts.iter().any(|&c| c < 1) {
            return Err(Error::config("concept_counts", "every step needs >= 1 concept"));
        }
        let max_concepts = *self.concept_counts.iter().max().expect("nonempty");
        if !self.num_clients.is_multiple_of(max_concepts) {
            return Err(Error::config(
                "clients",
                format!(
                    "{} clients not divisible by max concept count {max_concepts}",
                    self.num_clients
                ),
            ));
        }
        if self.source == DataSource::Synthetic {
            if self.num_classes < 2 {
                return Err(Error::config("num_classes", "must be >= 2"));
            }
            if self.feature_dim < 2 {
                return Err(Error::config("feature_dim", "must be >= 2"));
            }
        }
        if self.per_class_count < 1 {
            return Err(Error::config("per_class_count", "must be >= 1"));
        }
        if !(self.dirichlet_beta > 0.0) {
            return Err(Error::config("dirichlet_beta", "must be > 0"));
        }
        if !(self.rotated_fraction > 0.0 && self.rotated_fraction <= 1.0) {
            return Err(Error::config("rotated_fraction", "must be in (0, 1]"));
        }
        if !(self.cluster_spread >= 0.0) {
            return Err(Error::config("cluster_spread", "must be >= 0"));
        }
        if self.test_samples_per_task < 1 {
            return Err(Error::config("test_samples_per_task", "must be >= 1"));
        }
        Ok(())
    }
}

/// An evaluation unit: one concept seen under one rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub concept: usize,
    pub rotation: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub num_concepts: usize,
    pub rotation_degrees: i32,
    /// Concept index of every client, in client order.
    pub client_concepts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub steps: Vec<ScheduleStep>,
    pub dirichlet_beta: f64,
    pub concepts: Vec<ConceptSpec>,
}

impl DriftSchedule {
    /// Clients split evenly across concepts in client-index order.
    pub fn new(config: &ScenarioConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let k = config.num_clients;
        let steps = config
            .concept_counts
            .iter()
            .zip(&config.rotations)
            .map(|(&c, &rotation)| ScheduleStep {
                num_concepts: c,
                rotation_degrees: rotation,
                client_concepts: (0..k).map(|client| client * c / k).collect(),
            })
            .collect();
        let max_concepts = *config.concept_counts.iter().max().expect("validated");
        let concepts = (0..max_concepts)
            .map(|c| ConceptSpec::standard(c, num_classes))
            .collect();
        Ok(Self {
            steps,
            dirichlet_beta: config.dirichlet_beta,
            concepts,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_clients(&self) -> usize {
        self.steps[0].client_concepts.len()
    }

    /// Ground truth: did client `k` change concept between `step - 1` and `step`?
    pub fn drift_flags(&self, step: usize) -> Vec<bool> {
        if step == 0 {
            return vec![false; self.num_clients()];
        }
        self.steps[step]
            .client_concepts
            .iter()
            .zip(&self.steps[step - 1].client_concepts)
            .map(|(now, before)| now != before)
            .collect()
    }

    pub fn drifted_clients(&self, step: usize) -> Vec<usize> {
        self.drift_flags(step)
            .into_iter()
            .enumerate()
            .filter_map(|(k, d)| d.then_some(k))
            .collect()
    }

    pub fn task_of(&self, step: usize, client: usize) -> TaskKey {
        let s = &self.steps[step];
        TaskKey {
            concept: s.client_concepts[client],
            rotation: s.rotation_degrees,
        }
    }

    /// Every (concept, rotation) pair that some client experiences.
    pub fn realized_tasks(&self) -> Vec<TaskKey> {
        let concepts: BTreeSet<usize> = self
            .steps
            .iter()
            .flat_map(|s| s.client_concepts.iter().copied())
            .collect();
        let rotations: BTreeSet<i32> = self.steps.iter().map(|s| s.rotation_degrees).collect();
        concepts
            .iter()
            .flat_map(|&concept| rotations.iter().map(move |&rotation| TaskKey { concept, rotation }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientTimeline {
    pub client_id: usize,
    /// `steps[t]` is the client's dataset at time step `t` (0-based).
    pub steps: Vec<Vec<LabeledExample>>,
}

/// Source of fresh draws for each time step.
#[derive(Debug, Clone)]
enum Generator {
    Gaussian(GaussianClasses),
    Pool(DataPool),
}

impl Generator {
    fn num_classes(&self) -> usize {
        match self {
            Generator::Gaussian(g) => g.num_classes(),
            Generator::Pool(p) => p.num_classes,
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            Generator::Gaussian(g) => g.feature_dim(),
            Generator::Pool(p) => p.feature_dim,
        }
    }

    fn layout(&self, rotated_fraction: f64) -> FeatureLayout {
        match self {
            Generator::Gaussian(g) => {
                FeatureLayout::partial_rotation(g.feature_dim(), rotated_fraction)
            }
            Generator::Pool(p) => p.layout,
        }
    }

    /// `counts[c]` examples of class `c`, grouped by class.
    fn draw(&self, counts: &[usize], layout: FeatureLayout, rng: &mut SimRng) -> DataPool {
        let examples = match self {
            Generator::Gaussian(g) => counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
                .map(|c| g.sample_class(c, rng))
                .collect(),
            Generator::Pool(pool) => {
                let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); pool.num_classes];
                for (i, ex) in pool.examples.iter().enumerate() {
                    by_class[ex.label].push(i);
                }
                let mut out = Vec::new();
                for (members, &n) in by_class.iter().zip(counts) {
                    if members.is_empty() {
                        continue;
                    }
                    if members.len() < n {
                        log::warn!("class has {} examples, {n} requested", members.len());
                    }
                    let take = n.min(members.len());
                    for i in index::sample(rng, members.len(), take).into_iter() {
                        out.push(pool.examples[members[i]].clone());
                    }
                }
                out
            }
        };
        DataPool {
            examples,
            num_classes: self.num_classes(),
            feature_dim: self.feature_dim(),
            layout,
        }
    }
}

/// Everything a simulation run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub layout: FeatureLayout,
    pub schedule: DriftSchedule,
    pub timelines: Vec<ClientTimeline>,
    /// Held-out sets keyed by (0-based step, task).
    pub test_sets: BTreeMap<(usize, TaskKey), Vec<LabeledExample>>,
    /// Per-client warm-up data for the prototype probe: original labels,
    /// every scheduled rotation.
    pub probe_data: Vec<Vec<LabeledExample>>,
}

impl Scenario {
    pub fn num_clients(&self) -> usize {
        self.timelines.len()
    }

    pub fn num_steps(&self) -> usize {
        self.schedule.num_steps()
    }

    pub fn client_data(&self, step: usize, client: usize) -> &[LabeledExample] {
        &self.timelines[client].steps[step]
    }

    pub fn test_set(&self, step: usize, task: TaskKey) -> Option<&[LabeledExample]> {
        self.test_sets.get(&(step, task)).map(Vec::as_slice)
    }
}

fn balanced_counts(total: usize, num_classes: usize) -> Vec<usize> {
    (0..num_classes)
        .map(|c| total / num_classes + usize::from(c < total % num_classes))
        .collect()
}

fn transform(
    examples: &[LabeledExample],
    rotation: i32,
    concept: &ConceptSpec,
    layout: FeatureLayout,
) -> Vec<LabeledExample> {
    apply_real_drift(
        &apply_virtual_drift_with_layout(examples, rotation as f64, layout),
        concept,
    )
}

/// Builds client timelines, held-out task sets and probe warm-up data.
pub fn build_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let generator = match &config.source {
        DataSource::Synthetic => Generator::Gaussian(GaussianClasses::new(
            seed,
            config.num_classes,
            config.feature_dim,
            config.cluster_spread,
            config.class_separation,
        )?),
        DataSource::Idx { images, labels } => Generator::Pool(load_idx(images, labels)?),
    };
    let num_classes = generator.num_classes();
    let layout = generator.layout(config.rotated_fraction);
    let schedule = DriftSchedule::new(config, num_classes)?;
    let k = config.num_clients;
    let per_step = vec![config.per_class_count; num_classes];

    let mut timelines: Vec<ClientTimeline> = (0..k)
        .map(|client_id| ClientTimeline {
            client_id,
            steps: Vec::with_capacity(schedule.num_steps()),
        })
        .collect();
    for (t, step) in schedule.steps.iter().enumerate() {
        let mut rng = rng::stream(seed, Stream::PoolDraw, &[t as u64]);
        let pool = generator.draw(&per_step, layout, &mut rng);
        let shards = dirichlet_partition_indices(
            &pool,
            config.dirichlet_beta,
            k,
            derive_seed(seed, Stream::Partition, &[t as u64]),
        )?;
        for (client, shard) in shards.into_iter().enumerate() {
            let raw: Vec<LabeledExample> =
                shard.into_iter().map(|i| pool.examples[i].clone()).collect();
            let concept = &schedule.concepts[step.client_concepts[client]];
            timelines[client]
                .steps
                .push(transform(&raw, step.rotation_degrees, concept, layout));
        }
    }

    let tasks = schedule.realized_tasks();
    let test_counts = balanced_counts(config.test_samples_per_task, num_classes);
    let mut test_sets = BTreeMap::new();
    for t in 0..schedule.num_steps() {
        for (ti, &task) in tasks.iter().enumerate() {
            let mut rng = rng::stream(seed, Stream::TestSet, &[t as u64, ti as u64]);
            let raw = generator.draw(&test_counts, layout, &mut rng);
            let concept = &schedule.concepts[task.concept];
            test_sets.insert(
                (t, task),
                transform(&raw.examples, task.rotation, concept, layout),
            );
        }
    }

    let rotations: BTreeSet<i32> = config.rotations.iter().copied().collect();
    let mut rng = rng::stream(seed, Stream::ProbeData, &[]);
    let pool = generator.draw(&per_step, layout, &mut rng);
    let shards = dirichlet_partition_indices(
        &pool,
        config.dirichlet_beta,
        k,
        derive_seed(seed, Stream::ProbeData, &[1]),
    )?;
    let identity = ConceptSpec::identity(num_classes);
    let probe_data = shards
        .into_iter()
        .map(|shard| {
            let raw: Vec<LabeledExample> =
                shard.into_iter().map(|i| pool.examples[i].clone()).collect();
            rotations
                .iter()
                .flat_map(|&r| transform(&raw, r, &identity, layout))
                .collect()
        })
        .collect();

    Ok(Scenario {
        config: config.clone(),
        seed,
        num_classes,
        feature_dim: generator.feature_dim(),
        layout,
        schedule,
        timelines,
        test_sets,
        probe_data,
    })
}
