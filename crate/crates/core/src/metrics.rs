//! Accuracy and drift-detection metrics, run reports and CSV/JSON output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledExample, Scenario, TaskKey};
use crate::engine::{predict, LabelConstants, Method, MixtureWeights, RoundLog};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::prototype::Prototype;
use crate::rdld::DriftReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: TaskKey,
    pub accuracy: f64,
}

/// `(correct, total)` of the mixture prediction over `data`.
pub fn correct_count(models: &[ModelParams], alpha: &[f64], data: &[LabeledExample]) -> Result<(usize, usize)> {
    let mut correct = 0;
    for ex in data {
        if predict(models, alpha, &ex.features)? == ex.label {
            correct += 1;
        }
    }
    Ok((correct, data.len()))
}

pub fn accuracy(models: &[ModelParams], alpha: &[f64], data: &[LabeledExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let (correct, total) = correct_count(models, alpha, data)?;
    Ok(correct as f64 / total as f64)
}

fn test_set(scenario: &Scenario, step: usize, task: TaskKey) -> Result<&[LabeledExample]> {
    scenario
        .test_set(step, task)
        .filter(|s| !s.is_empty())
        .ok_or(Error::Empty("test set"))
}

/// Accuracy of each client on its own `(concept, rotation)` at `step`.
pub fn client_accuracies(
    models: &[ModelParams],
    alphas: &MixtureWeights,
    scenario: &Scenario,
    step: usize,
) -> Result<Vec<f64>> {
    (0..scenario.num_clients())
        .map(|k| {
            let task = scenario.schedule.task_of(step, k);
            accuracy(models, alphas.row(k), test_set(scenario, step, task)?)
        })
        .collect()
}

/// For every realized task, pooled accuracy of all clients whose concept at
/// `step` matches the task's concept, each predicting with its own mixture
/// row. Tasks whose concept no client holds are omitted.
pub fn task_accuracy(
    models: &[ModelParams],
    alphas: &MixtureWeights,
    scenario: &Scenario,
    step: usize,
) -> Result<Vec<TaskAccuracy>> {
    let concepts = &scenario.schedule.steps[step].client_concepts;
    let mut out = Vec::new();
    for task in scenario.schedule.realized_tasks() {
        let data = test_set(scenario, step, task)?;
        let (mut correct, mut total) = (0, 0);
        for (k, _) in concepts.iter().enumerate().filter(|(_, &c)| c == task.concept) {
            let (c, n) = correct_count(models, alphas.row(k), data)?;
            correct += c;
            total += n;
        }
        if total > 0 {
            out.push(TaskAccuracy {
                task,
                accuracy: correct as f64 / total as f64,
            });
        }
    }
    Ok(out)
}

/// `(precision, recall)` of a predicted drift set; an empty denominator set
/// scores 1.
pub fn drift_detection_quality(predicted: &[usize], truth: &[usize]) -> (f64, f64) {
    let hits = predicted.iter().filter(|k| truth.contains(k)).count() as f64;
    let precision = if predicted.is_empty() {
        1.0
    } else {
        hits / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        1.0
    } else {
        hits / truth.len() as f64
    };
    (precision, recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftQuality {
    pub precision: f64,
    pub recall: f64,
    /// Flagged share of the clients whose concept did not change; 0 when
    /// every client changed.
    pub false_positive_rate: f64,
    pub false_positives: usize,
    pub negatives: usize,
}

impl DriftQuality {
    pub fn evaluate(predicted: &[usize], truth: &[usize], num_clients: usize) -> Self {
        let (precision, recall) = drift_detection_quality(predicted, truth);
        let negatives = num_clients - truth.len();
        let false_positives = predicted.iter().filter(|k| !truth.contains(k)).count();
        let false_positive_rate = if negatives == 0 {
            0.0
        } else {
            false_positives as f64 / negatives as f64
        };
        Self {
            precision,
            recall,
            false_positive_rate,
            false_positives,
            negatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStepRecord {
    /// 1-based.
    pub time_step: usize,
    pub num_clusters: usize,
    /// Absent for methods without drift detection.
    pub drift: Option<DriftQuality>,
    pub client_accuracy: Vec<f64>,
    pub task_accuracy: Vec<TaskAccuracy>,
    pub rounds: Vec<RoundLog>,
}

impl TimeStepRecord {
    pub fn mean_client_accuracy(&self) -> f64 {
        mean(&self.client_accuracy)
    }

    pub fn task(&self, task: TaskKey) -> Option<f64> {
        self.task_accuracy
            .iter()
            .find(|t| t.task == task)
            .map(|t| t.accuracy)
    }
}

/// Optional per-step state dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDebug {
    pub time_step: usize,
    pub prototypes: Option<Vec<Prototype>>,
    pub silhouette_table: Vec<(usize, f64)>,
    pub drift_report: Option<DriftReport>,
    pub alphas: MixtureWeights,
    pub label_constants: LabelConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub seed: u64,
    /// Scheduled step count; `steps` must cover all of them.
    pub num_steps: usize,
    pub steps: Vec<TimeStepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub debug: Vec<StepDebug>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unweighted mean over (client, step) of each client's own-task accuracy.
pub fn average_accuracy(report: &RunReport) -> Result<f64> {
    if report.steps.len() != report.num_steps || report.steps.is_empty() {
        return Err(Error::IncompleteReport(format!(
            "{} of {} time steps recorded",
            report.steps.len(),
            report.num_steps
        )));
    }
    let all: Vec<f64> = report
        .steps
        .iter()
        .flat_map(|s| s.client_accuracy.iter().copied())
        .collect();
    if all.is_empty() {
        return Err(Error::IncompleteReport("no client accuracies".into()));
    }
    Ok(mean(&all))
}

/// Accuracy at the final step on every task, the forgetting view.
pub fn forgetting_table(report: &RunReport) -> Result<Vec<TaskAccuracy>> {
    report
        .steps
        .last()
        .map(|s| s.task_accuracy.clone())
        .ok_or_else(|| Error::IncompleteReport("no time steps".into()))
}

pub const CSV_HEADER: &str = "time_step,round,method,seed,metric,task_concept,task_rotation,value";

/// Writes the long-format CSV: per-round objectives, then per-step cluster
/// count, drift quality, mean accuracy and per-task accuracy.
pub fn write_csv<W: Write>(report: &RunReport, out: &mut W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let m = report.method.name();
    let seed = report.seed;
    for step in &report.steps {
        let t = step.time_step;
        for r in &step.rounds {
            writeln!(out, "{t},{},{m},{seed},objective,,,{}", r.round, r.objective)?;
        }
        writeln!(out, "{t},,{m},{seed},C_chosen,,,{}", step.num_clusters)?;
        if let Some(d) = &step.drift {
            writeln!(out, "{t},,{m},{seed},drift_precision,,,{}", d.precision)?;
            writeln!(out, "{t},,{m},{seed},drift_recall,,,{}", d.recall)?;
        }
        writeln!(out, "{t},,{m},{seed},accuracy,,,{}", step.mean_client_accuracy())?;
        for ta in &step.task_accuracy {
            writeln!(
                out,
                "{t},,{m},{seed},accuracy,{},{},{}",
                ta.task.concept, ta.task.rotation, ta.accuracy
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub average_accuracy: f64,
    pub clusters_chosen: Vec<usize>,
    pub mean_drift_precision: Option<f64>,
    pub mean_drift_recall: Option<f64>,
    /// Accuracy at the last step per task.
    pub final_task_accuracy: Vec<TaskAccuracy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub runs: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mu = mean(values);
        let std = if n > 1 {
            (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: mu,
            std,
            runs: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunSummary>,
    /// Average accuracy per method over seeds.
    pub methods: BTreeMap<String, MeanStd>,
}

fn steps_after_first(report: &RunReport, pick: impl Fn(&DriftQuality) -> f64) -> Option<f64> {
    let values: Vec<f64> = report
        .steps
        .iter()
        .skip(1)
        .filter_map(|s| s.drift.as_ref().map(&pick))
        .collect();
    (!values.is_empty()).then(|| mean(&values))
}

pub fn summarize(reports: &[RunReport]) -> Result<Summary> {
    let mut runs = Vec::with_capacity(reports.len());
    let mut by_method: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        let avg = average_accuracy(r)?;
        by_method.entry(r.method.name().to_string()).or_default().push(avg);
        runs.push(RunSummary {
            method: r.method,
            seed: r.seed,
            average_accuracy: avg,
            clusters_chosen: r.steps.iter().map(|s| s.num_clusters).collect(),
            mean_drift_precision: steps_after_first(r, |d| d.precision),
            mean_drift_recall: steps_after_first(r, |d| d.recall),
            final_task_accuracy: forgetting_table(r)?,
        });
    }
    Ok(Summary {
        runs,
        methods: by_method
            .into_iter()
            .map(|(m, v)| (m, MeanStd::of(&v)))
            .collect(),
    })
}
