//! Clustered federated training across drifting time steps.
//!
//! Each step: prototypes of every client under the frozen probe, cluster-count
//! selection, drift detection, training-set selection, model warm start, a
//! number of communication rounds of EM-weighted local training followed by
//! size-weighted aggregation, a final mixture-weight refresh and evaluation.

mod aggregate;
mod em;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aggregate::{aggregate, warm_start_models, warm_start_sources};
pub use em::{
    alpha_update, e_step, estimate_label_constants, full_batch_em_step, gamma_update,
    gamma_update_log, local_update, log_likelihood_sum, log_tilde_i, objective_value, tilde_i,
    LabelConstants, LabelStats, LocalOptions, LocalResult, MixtureWeights, Responsibility,
    LABEL_FLOOR,
};

use crate::datagen::{LabeledExample, Scenario};
use crate::error::{Error, Result};
use crate::metrics::{
    self, DriftQuality, RunReport, StepDebug, TaskAccuracy, TimeStepRecord,
};
use crate::model::{forward, init_params, Architecture, ModelParams};
use crate::ncd::{determine_cluster_count, KMeansOptions};
use crate::prototype::{compute_prototype, ProbeModel, Prototype};
use crate::rdld::{detect_real_drift, DriftReport};
use crate::rng::{self, derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Feddaa,
    ClusteredRetrain,
    FedavgRetrain,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Feddaa,
        Method::ClusteredRetrain,
        Method::FedavgRetrain,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Feddaa => "feddaa",
            Method::ClusteredRetrain => "clustered_retrain",
            Method::FedavgRetrain => "fedavg_retrain",
            Method::Oracle => "oracle",
        }
    }

    fn uses_prototypes(self) -> bool {
        matches!(self, Method::Feddaa | Method::ClusteredRetrain)
    }

    fn rehearses(self) -> bool {
        matches!(self, Method::Feddaa | Method::Oracle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Training hyperparameters shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Communication rounds per time step.
    pub rounds: usize,
    pub sampling_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub global_lr: f64,
    pub max_clusters: usize,
    /// Hidden width of the classifier; 0 selects a linear softmax model.
    pub hidden_dim: usize,
    /// Hidden width of the prototype probe. Averaged over the default
    /// rotations every class mean cancels, so a linear probe cannot separate
    /// classes across rotations.
    pub probe_hidden_dim: usize,
    /// FedAvg rounds used to fit the prototype probe before the first step.
    pub probe_warmup_rounds: usize,
    pub kmeans: KMeansOptions,
    /// Keep prototypes, silhouette tables, drift reports, mixture rows and
    /// label constants for every step.
    pub record_debug: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 15,
            sampling_rate: 0.5,
            local_epochs: 1,
            batch_size: 32,
            lr: 0.3,
            momentum: 0.9,
            global_lr: 1.0,
            max_clusters: 6,
            hidden_dim: 0,
            probe_hidden_dim: 64,
            probe_warmup_rounds: 30,
            kmeans: KMeansOptions::default(),
            record_debug: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::config("sampling_rate", "must lie in (0, 1]"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.global_lr > 0.0 && self.global_lr.is_finite()) {
            return Err(Error::config("global_lr", "must be a positive number"));
        }
        if self.max_clusters < 2 || self.max_clusters > num_clients {
            return Err(Error::config(
                "max_clusters",
                format!("must lie in 2..={num_clients} (the client count)"),
            ));
        }
        if self.kmeans.restarts < 1 || self.kmeans.max_iters < 1 {
            return Err(Error::config("kmeans", "restarts and max_iters must be >= 1"));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Architecture {
        Architecture::mlp(input_dim, self.hidden_dim, num_classes)
    }

    fn local_options(&self) -> LocalOptions {
        LocalOptions {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
        }
    }
}

/// Cluster models with their mixture rows and label constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub models: Vec<ModelParams>,
    pub alphas: MixtureWeights,
    pub constants: LabelConstants,
}

impl ClusterState {
    pub fn num_clusters(&self) -> usize {
        self.models.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based time step.
    pub time_step: usize,
    /// 1-based round within the step.
    pub round: usize,
    pub objective: f64,
    pub cluster_norms: Vec<f64>,
    pub sampled_clients: Vec<usize>,
}

/// Argmax over classes of `sum_c alpha_c * forward(w_c, x)`, lowest class on ties.
pub fn predict(models: &[ModelParams], alpha: &[f64], x: &[f64]) -> Result<usize> {
    if models.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            actual: alpha.len(),
        });
    }
    let first = models.first().ok_or(Error::Empty("cluster models"))?;
    let mut mix = vec![0.0; first.num_classes()];
    for (m, &a) in models.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        let p = forward(m, x)?;
        mix.iter_mut().zip(&p).for_each(|(s, v)| *s += a * v);
    }
    let mut best = 0;
    for (r, &v) in mix.iter().enumerate() {
        if v > mix[best] {
            best = r;
        }
    }
    Ok(best)
}

/// Drifted clients train on the current data only, clean clients on the
/// current data followed by the previous step's data.
pub fn daa_select_data<'a>(
    client: usize,
    report: &DriftReport,
    current: &'a [LabeledExample],
    previous: Option<&'a [LabeledExample]>,
) -> Vec<&'a LabeledExample> {
    let mut data: Vec<&LabeledExample> = current.iter().collect();
    if let Some(prev) = previous {
        if !report.is_drifted(client) {
            data.extend(prev.iter());
        }
    }
    data
}

fn fresh_models(arch: Architecture, seed: u64, step: usize, count: usize) -> Result<Vec<ModelParams>> {
    (0..count)
        .map(|c| init_params(arch, derive_seed(seed, Stream::ModelInit, &[step as u64, c as u64])))
        .collect()
}

fn sample_clients(seed: u64, step: usize, round: usize, num_clients: usize, rate: f64) -> Vec<usize> {
    let m = ((rate * num_clients as f64).ceil() as usize).clamp(1, num_clients);
    let mut rng = rng::stream(seed, Stream::ClientSampling, &[step as u64, round as u64]);
    let mut chosen = index::sample(&mut rng, num_clients, m).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Fits the shared probe by FedAvg over every client's warm-up data.
pub fn train_probe(scenario: &Scenario, training: &TrainingConfig, seed: u64) -> Result<ProbeModel> {
    let arch = Architecture::mlp(scenario.feature_dim, training.probe_hidden_dim, scenario.num_classes);
    let mut model = vec![init_params(arch, derive_seed(seed, Stream::ProbeInit, &[0]))?];
    let constants = LabelConstants::uniform(scenario.num_classes, 1);
    let options = training.local_options();
    let data: Vec<Vec<&LabeledExample>> = scenario
        .probe_data
        .iter()
        .map(|d| d.iter().collect())
        .collect();
    let fixed = Responsibility::Fixed(vec![1.0]);
    for round in 0..training.probe_warmup_rounds {
        let results: Vec<(usize, LocalResult)> = data
            .par_iter()
            .enumerate()
            .filter(|(_, d)| !d.is_empty())
            .map(|(k, d)| {
                let mut rng = rng::stream(seed, Stream::ProbeInit, &[1, round as u64, k as u64]);
                local_update(&model, &[1.0], &constants, d, &options, &fixed, &mut rng)
                    .map(|r| (d.len(), r))
            })
            .collect::<Result<_>>()?;
        let updates: Vec<(usize, &[ModelParams])> =
            results.iter().map(|(n, r)| (*n, r.models.as_slice())).collect();
        model = aggregate(&updates, 1.0)?;
    }
    Ok(ProbeModel::freeze(model.remove(0)))
}

/// What the previous step leaves behind for the next one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// Next 0-based time step.
    pub step: usize,
    pub seed: u64,
    pub method: Method,
    pub models: Vec<ModelParams>,
    pub prev_prototypes: Option<Vec<Prototype>>,
    pub prev_assignments: Option<Vec<usize>>,
    pub probe: Option<ProbeModel>,
}

impl SimState {
    pub fn new(scenario: &Scenario, training: &TrainingConfig, method: Method, seed: u64) -> Result<Self> {
        let probe = if method.uses_prototypes() {
            Some(train_probe(scenario, training, seed)?)
        } else {
            None
        };
        Ok(Self {
            step: 0,
            seed,
            method,
            models: Vec::new(),
            prev_prototypes: None,
            prev_assignments: None,
            probe,
        })
    }
}

/// Clustering used for the step plus the per-client training-set rule.
struct StepPlan {
    models: Vec<ModelParams>,
    report: Option<DriftReport>,
    alphas: MixtureWeights,
    responsibilities: Vec<Responsibility>,
    prototypes: Option<(Vec<Prototype>, Vec<usize>)>,
    silhouette_table: Vec<(usize, f64)>,
}

fn plan_step(state: &SimState, scenario: &Scenario, training: &TrainingConfig) -> Result<StepPlan> {
    let t = state.step;
    let k = scenario.num_clients();
    let arch = training.architecture(scenario.feature_dim, scenario.num_classes);
    match state.method {
        Method::FedavgRetrain => {
            let models = if t == 0 {
                fresh_models(arch, state.seed, t, 1)?
            } else {
                state.models.clone()
            };
            Ok(StepPlan {
                models,
                report: None,
                alphas: MixtureWeights::uniform(k, 1),
                responsibilities: vec![Responsibility::Em; k],
                prototypes: None,
                silhouette_table: Vec::new(),
            })
        }
        Method::Oracle => {
            let step = &scenario.schedule.steps[t];
            let count = step.num_concepts;
            let mut models = if t == 0 {
                fresh_models(arch, state.seed, t, count)?
            } else {
                state.models.clone()
            };
            if models.len() < count {
                let mean = ModelParams::mean_of(&models)?;
                models.resize(count, mean);
            }
            models.truncate(count);
            let report = DriftReport::from_flags(&scenario.schedule.drift_flags(t));
            let alphas = MixtureWeights::one_hot(&step.client_concepts, count);
            let responsibilities = alphas
                .rows
                .iter()
                .map(|r| Responsibility::Fixed(r.clone()))
                .collect();
            Ok(StepPlan {
                models,
                report: Some(report),
                alphas,
                responsibilities,
                prototypes: None,
                silhouette_table: Vec::new(),
            })
        }
        Method::Feddaa | Method::ClusteredRetrain => {
            let probe = state
                .probe
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("prototype methods need a probe".into()))?;
            let prototypes = (0..k)
                .into_par_iter()
                .map(|client| compute_prototype(probe, scenario.client_data(t, client)))
                .collect::<Result<Vec<_>>>()?;
            let seed = derive_seed(state.seed, Stream::KMeans, &[t as u64]);
            let ncd = determine_cluster_count(&prototypes, training.max_clusters, seed, &training.kmeans)?;
            let report = detect_real_drift(state.prev_prototypes.as_deref(), &prototypes, ncd.centers())?;
            let models = match (&state.prev_prototypes, &state.prev_assignments) {
                (Some(prev), Some(assign)) => {
                    let fresh = fresh_models(arch, state.seed, t, ncd.num_clusters)?;
                    warm_start_sources(state.models.len(), assign, prev, ncd.centers())?
                        .into_iter()
                        .zip(fresh)
                        .map(|(src, f)| src.map_or(f, |i| state.models[i].clone()))
                        .collect()
                }
                _ => fresh_models(arch, state.seed, t, ncd.num_clusters)?,
            };
            Ok(StepPlan {
                alphas: MixtureWeights::uniform(k, ncd.num_clusters),
                models,
                report: Some(report),
                responsibilities: vec![Responsibility::Em; k],
                silhouette_table: ncd.silhouette_table.clone(),
                prototypes: Some((prototypes, ncd.clustering.assignments)),
            })
        }
    }
}

/// Index of the largest mixture weight, lowest index on ties.
fn dominant_model(alpha: &[f64]) -> usize {
    alpha
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &a)| if a > best.1 { (i, a) } else { best })
        .0
}

/// Runs one time step and advances `state`.
pub fn run_time_step(
    state: &mut SimState,
    scenario: &Scenario,
    training: &TrainingConfig,
) -> Result<(TimeStepRecord, Option<StepDebug>)> {
    let t = state.step;
    if t >= scenario.num_steps() {
        return Err(Error::InvalidArgument(format!("time step {} beyond schedule", t + 1)));
    }
    let k = scenario.num_clients();
    let plan = plan_step(state, scenario, training)?;
    let c = plan.models.len();

    let all_clean = DriftReport::all_clean(k);
    let selection = match (&plan.report, state.method.rehearses()) {
        (Some(report), true) => report,
        _ => &all_clean,
    };
    let train_data: Vec<Vec<&LabeledExample>> = (0..k)
        .map(|client| {
            let previous = if state.method.rehearses() && t > 0 {
                Some(scenario.client_data(t - 1, client))
            } else {
                None
            };
            daa_select_data(client, selection, scenario.client_data(t, client), previous)
        })
        .collect();

    let mut cluster = ClusterState {
        models: plan.models,
        alphas: plan.alphas,
        constants: LabelConstants::uniform(scenario.num_classes, c),
    };
    let options = training.local_options();
    let mut rounds = Vec::with_capacity(training.rounds);
    for round in 0..training.rounds {
        let sampled = sample_clients(state.seed, t, round, k, training.sampling_rate);
        let results: Vec<LocalResult> = sampled
            .par_iter()
            .map(|&client| {
                let mut rng = rng::stream(
                    state.seed,
                    Stream::BatchOrder,
                    &[t as u64, round as u64, client as u64],
                );
                local_update(
                    &cluster.models,
                    cluster.alphas.row(client),
                    &cluster.constants,
                    &train_data[client],
                    &options,
                    &plan.responsibilities[client],
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let updates: Vec<(usize, &[ModelParams])> = sampled
            .iter()
            .zip(&results)
            .map(|(&client, r)| (train_data[client].len(), r.models.as_slice()))
            .collect();
        let models = aggregate(&updates, training.global_lr)?;
        let mut stats = LabelStats::new(scenario.num_classes, c);
        for (&client, r) in sampled.iter().zip(&results) {
            cluster.alphas.rows[client] = r.alpha.clone();
            stats.merge(&r.stats);
        }
        cluster.models = models;
        cluster.constants = stats.estimate();
        rounds.push(RoundLog {
            time_step: t + 1,
            round: round + 1,
            objective: objective_value(&cluster.models, &cluster.alphas, &cluster.constants, &train_data)?,
            cluster_norms: cluster.models.iter().map(ModelParams::l2_norm).collect(),
            sampled_clients: sampled,
        });
    }

    if state.method != Method::Oracle {
        let refreshed = (0..k)
            .into_par_iter()
            .map(|client| {
                let gammas = e_step(
                    &cluster.models,
                    cluster.alphas.row(client),
                    &cluster.constants,
                    &train_data[client],
                )?;
                let mut stats = LabelStats::new(scenario.num_classes, c);
                for (ex, g) in train_data[client].iter().zip(&gammas) {
                    stats.add(ex.label, g);
                }
                Ok((alpha_update(&gammas)?, stats))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut stats = LabelStats::new(scenario.num_classes, c);
        for (client, (alpha, s)) in refreshed.into_iter().enumerate() {
            cluster.alphas.rows[client] = alpha;
            stats.merge(&s);
        }
        cluster.constants = stats.estimate();
    }

    let client_accuracy = metrics::client_accuracies(&cluster.models, &cluster.alphas, scenario, t)?;
    let task_accuracy: Vec<TaskAccuracy> =
        metrics::task_accuracy(&cluster.models, &cluster.alphas, scenario, t)?;
    let drift = plan.report.as_ref().map(|report| {
        let truth = scenario.schedule.drifted_clients(t);
        DriftQuality::evaluate(&report.drift, &truth, k)
    });
    let record = TimeStepRecord {
        time_step: t + 1,
        num_clusters: c,
        drift,
        client_accuracy,
        task_accuracy,
        rounds,
    };
    let debug = training.record_debug.then(|| StepDebug {
        time_step: t + 1,
        prototypes: plan.prototypes.as_ref().map(|(p, _)| p.clone()),
        silhouette_table: plan.silhouette_table.clone(),
        drift_report: plan.report.clone(),
        alphas: cluster.alphas.clone(),
        label_constants: cluster.constants.clone(),
    });

    state.models = cluster.models;
    if let Some((prototypes, _)) = plan.prototypes {
        state.prev_prototypes = Some(prototypes);
        state.prev_assignments = Some((0..k).map(|client| dominant_model(cluster.alphas.row(client))).collect());
    }
    state.step += 1;
    Ok((record, debug))
}

/// All time steps of one method on one scenario.
pub fn run_simulation(
    scenario: &Scenario,
    training: &TrainingConfig,
    method: Method,
    seed: u64,
) -> Result<RunReport> {
    training.validate(scenario.num_clients())?;
    let mut state = SimState::new(scenario, training, method, seed)?;
    let mut steps = Vec::with_capacity(scenario.num_steps());
    let mut debug = Vec::new();
    for _ in 0..scenario.num_steps() {
        let (record, dbg) = run_time_step(&mut state, scenario, training)?;
        steps.push(record);
        debug.extend(dbg);
    }
    Ok(RunReport {
        method,
        seed,
        num_steps: scenario.num_steps(),
        steps,
        debug,
    })
}
