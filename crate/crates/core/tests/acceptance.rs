//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use feddaa::config::SimulationConfig;
use feddaa::datagen::{apply_real_drift, ConceptSpec, GaussianClasses, LabeledExample};
use feddaa::engine::{
    alpha_update, aggregate, estimate_label_constants, full_batch_em_step, gamma_update,
    objective_value, run_time_step, LabelConstants, MixtureWeights, SimState,
};
use feddaa::metrics::{average_accuracy, RunReport};
use feddaa::model::{init_params, loss, sgd_step, weighted_grad, GradientBundle, WeightedExample};
use feddaa::ncd::{kmeans, silhouette_of_points, silhouette_values, KMeansOptions};
use feddaa::rng::{self, derive_seed, Stream};
use feddaa::{build_scenario, runner, Architecture, Method, ModelParams, Preset, Prototype};
use rand::seq::{index, SliceRandom};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk() -> SimulationConfig {
    SimulationConfig::preset(Preset::Desk)
}

fn reports_by_method(reports: &[RunReport]) -> BTreeMap<Method, Vec<&RunReport>> {
    let mut out: BTreeMap<Method, Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        out.entry(r.method).or_default().push(r);
    }
    out
}

const TRUE_COUNTS: [usize; 6] = [2, 3, 4, 4, 4, 4];

fn cluster_count_recovery(reports: &[RunReport], elapsed: Duration) -> Outcome {
    let mut hits = 0;
    let mut cells = 0;
    let mut sequences = Vec::new();
    for r in reports.iter().filter(|r| r.method == Method::Feddaa) {
        let seq: Vec<usize> = r.steps.iter().map(|s| s.num_clusters).collect();
        hits += seq.iter().zip(TRUE_COUNTS).filter(|(a, b)| **a == *b).count();
        cells += TRUE_COUNTS.len();
        sequences.push(seq.iter().map(|c| c.to_string()).collect::<String>());
    }
    let share = hits as f64 / cells as f64;
    outcome(
        cells == 30 && share >= 0.9 && elapsed < Duration::from_secs(120),
        format!(
            "{hits}/{cells} cells match (2,3,4,4,4,4); sequences {}; {:.1}s",
            sequences.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn drift_detection(reports: &[RunReport]) -> Outcome {
    let (mut precision, mut recall, mut n) = (0.0, 0.0, 0usize);
    let (mut fp, mut negatives) = (0usize, 0usize);
    let scenario_config = desk().scenario();
    let schedule = build_scenario(&scenario_config, 0).expect("scenario").schedule;
    for r in reports.iter().filter(|r| r.method == Method::Feddaa) {
        for (t, step) in r.steps.iter().enumerate().skip(1) {
            let q = step.drift.expect("feddaa reports drift quality");
            precision += q.precision;
            recall += q.recall;
            n += 1;
            // concept assignments unchanged, only the rotation moved
            if schedule.drifted_clients(t).is_empty() {
                fp += q.false_positives;
                negatives += q.negatives;
            }
        }
    }
    let (p, rc) = (precision / n as f64, recall / n as f64);
    let fpr = fp as f64 / negatives.max(1) as f64;
    outcome(
        n == 25 && negatives > 0 && p >= 0.95 && rc >= 0.95 && fpr <= 0.05,
        format!("precision {p:.3}, recall {rc:.3} over {n} step-seeds; virtual-only FPR {fpr:.3} ({fp}/{negatives})"),
    )
}

fn em_monotonicity() -> Outcome {
    let (r, d) = (3, 4);
    let classes = GaussianClasses::new(11, r, d, 1.0, 4.0).expect("classes");
    let mut rng = rng::stream(11, Stream::PoolDraw, &[]);
    let concepts = [ConceptSpec::identity(r), ConceptSpec::shifted(r, 1)];
    let data: Vec<Vec<LabeledExample>> = (0..4)
        .map(|k| {
            let raw: Vec<LabeledExample> =
                (0..50).map(|i| classes.sample_class(i % r, &mut rng)).collect();
            apply_real_drift(&raw, &concepts[k / 2])
        })
        .collect();
    let datasets: Vec<Vec<&LabeledExample>> = data.iter().map(|d| d.iter().collect()).collect();
    let arch = Architecture::linear(d, r);
    let mut models: Vec<ModelParams> =
        (0..2).map(|c| init_params(arch, 100 + c).expect("init")).collect();
    let mut alphas = MixtureWeights::uniform(4, 2);
    let constants = LabelConstants::uniform(r, 2);
    let mut prev = objective_value(&models, &alphas, &constants, &datasets).expect("objective");
    let start = prev;
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        models = full_batch_em_step(&models, &mut alphas, &constants, &datasets, 1e-2).expect("step");
        let now = objective_value(&models, &alphas, &constants, &datasets).expect("objective");
        worst = worst.min(now - prev);
        prev = now;
    }
    outcome(
        worst >= -1e-8,
        format!("objective {start:.6} -> {prev:.6}; smallest step change {worst:.3e}"),
    )
}

fn finite_differences() -> Outcome {
    let mut rng = rng::stream(5, Stream::ModelInit, &[999]);
    let archs = [Architecture::linear(5, 3), Architecture::mlp(4, 6, 3)];
    let (mut checks, mut worst) = (0, 0.0f64);
    let h = 1e-5;
    for trial in 0..10 {
        let arch = archs[trial % 2];
        let params = init_params(arch, trial as u64).expect("init");
        let x: Vec<f64> = (0..arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = rng.random_range(0..arch.output_dim);
        let grad = weighted_grad(
            &params,
            &[WeightedExample {
                features: &x,
                label: y,
                weight: 1.0,
            }],
        )
        .expect("grad");
        for _ in 0..10 {
            let j = rng.random_range(0..params.values().len());
            let shifted = |delta: f64| {
                let mut v = params.values().to_vec();
                v[j] += delta;
                loss(&ModelParams::from_values(arch, v).expect("params"), &x, y).expect("loss")
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = grad.values()[j];
            let scale = numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max((numeric - analytic).abs() / scale);
            checks += 1;
        }
    }
    outcome(
        checks == 100 && worst < 1e-4,
        format!("{checks} coordinates, worst relative error {worst:.2e}"),
    )
}

fn squared_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn exhaustive_two_cluster_wcss(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    // point 0 always in group A; group B non-empty
    for mask in 1u32..(1 << (n - 1)) {
        let groups: Vec<Vec<&Vec<f64>>> = (0..2)
            .map(|g| {
                (0..n)
                    .filter(|&i| (i > 0 && (mask >> (i - 1)) & 1 == 1) as usize == g)
                    .map(|i| &points[i])
                    .collect()
            })
            .collect();
        let mut total = 0.0;
        for g in &groups {
            let mean: Vec<f64> =
                (0..d).map(|j| g.iter().map(|p| p[j]).sum::<f64>() / g.len() as f64).collect();
            total += g.iter().map(|p| squared_dist(p, &mean)).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn oracle_equivalences() -> Outcome {
    let mut rng = rng::stream(21, Stream::KMeans, &[777]);
    let mut lines = Vec::new();

    // k-means against exhaustive 2-partitions
    let mut kmeans_ok = true;
    let mut worst_gap = 0.0f64;
    for inst in 0..10 {
        let n = rng.random_range(3..=8);
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let protos: Vec<Prototype> = raw
            .iter()
            .map(|v| Prototype::from_values(2, v.clone(), vec![1, 1]).expect("prototype"))
            .collect();
        let res = kmeans(&protos, 2, inst, &KMeansOptions::default()).expect("kmeans");
        let exact = exhaustive_two_cluster_wcss(&raw);
        let gap = (res.wcss - exact).abs() / exact.max(1e-12);
        worst_gap = worst_gap.max(gap);
        kmeans_ok &= gap < 1e-9;
    }
    lines.push(format!("kmeans worst relative WCSS gap {worst_gap:.1e}"));

    // silhouette: inner points (a=1, b=9.5) and the mean over all four
    let coords = [[0.0], [1.0], [10.0], [11.0]];
    let pts: Vec<&[f64]> = coords.iter().map(|c| c.as_slice()).collect();
    let values = silhouette_values(&pts, &[0, 0, 1, 1]).expect("silhouette");
    let mean = silhouette_of_points(&pts, &[0, 0, 1, 1]).expect("silhouette");
    let inner = 8.5 / 9.5;
    let outer = 9.5 / 10.5;
    let hand_mean = (2.0 * inner + 2.0 * outer) / 4.0;
    let sil_ok = (values[1] - 0.894_736_842_105_263_2).abs() < 1e-9
        && (values[2] - 0.894_736_842_105_263_2).abs() < 1e-9
        && (values[0] - outer).abs() < 1e-9
        && (mean - hand_mean).abs() < 1e-9;
    lines.push(format!(
        "silhouette per point {:.9?}, mean {mean:.9} (hand {hand_mean:.9})",
        values
    ));

    // gamma / alpha / A against double sums on 10-sample instances
    let mut em_worst = 0.0f64;
    for _ in 0..10 {
        let (c, r, n) = (3, 4, 10);
        let raw_alpha: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
        let alpha: Vec<f64> = raw_alpha.iter().map(|a| a / raw_alpha.iter().sum::<f64>()).collect();
        let tildes: Vec<Vec<f64>> =
            (0..n).map(|_| (0..c).map(|_| rng.random_range(0.01..5.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..r)).collect();
        let gammas: Vec<Vec<f64>> =
            tildes.iter().map(|t| gamma_update(&alpha, t).expect("gamma")).collect();
        for (t, g) in tildes.iter().zip(&gammas) {
            for j in 0..c {
                let mut denom = 0.0;
                for m in 0..c {
                    denom += alpha[m] * t[m];
                }
                em_worst = em_worst.max((g[j] - alpha[j] * t[j] / denom).abs());
            }
        }
        let a = alpha_update(&gammas).expect("alpha");
        for j in 0..c {
            let mut s = 0.0;
            for g in &gammas {
                s += g[j];
            }
            em_worst = em_worst.max((a[j] - s / n as f64).abs());
        }
        let constants = estimate_label_constants(&gammas, &labels, r).expect("constants");
        for j in 0..c {
            let mut denom = 0.0;
            for g in &gammas {
                denom += g[j];
            }
            let raw: Vec<f64> = (0..r)
                .map(|y| {
                    let mut num = 0.0;
                    for (g, &l) in gammas.iter().zip(&labels) {
                        if l == y {
                            num += g[j];
                        }
                    }
                    (num / denom).max(1e-6)
                })
                .collect();
            let z: f64 = raw.iter().sum();
            for (y, v) in raw.iter().enumerate() {
                em_worst = em_worst.max((constants.get(y, j) - v / z).abs());
            }
        }
    }
    lines.push(format!("gamma/alpha/A worst abs error {em_worst:.1e}"));
    outcome(kmeans_ok && sil_ok && em_worst < 1e-12, lines.join("; "))
}

/// One time step of plain FedAvg written out by hand.
fn independent_fedavg_step(
    scenario: &feddaa::Scenario,
    config: &SimulationConfig,
    seed: u64,
) -> ModelParams {
    let training = config.training();
    let arch = training.architecture(scenario.feature_dim, scenario.num_classes);
    let mut global = init_params(arch, derive_seed(seed, Stream::ModelInit, &[0, 0])).expect("init");
    let k = scenario.num_clients();
    let m = (training.sampling_rate * k as f64).ceil() as usize;
    for round in 0..training.rounds {
        let mut srng = rng::stream(seed, Stream::ClientSampling, &[0, round as u64]);
        let mut sampled = index::sample(&mut srng, k, m).into_vec();
        sampled.sort_unstable();
        let mut locals: Vec<(usize, Vec<ModelParams>)> = Vec::new();
        for &client in &sampled {
            let data = scenario.client_data(0, client);
            let mut brng = rng::stream(seed, Stream::BatchOrder, &[0, round as u64, client as u64]);
            let mut w = global.clone();
            let mut v = GradientBundle::zeros(arch);
            let mut order: Vec<usize> = (0..data.len()).collect();
            for _ in 0..training.local_epochs {
                order.shuffle(&mut brng);
                for batch in order.chunks(training.batch_size) {
                    let weighted: Vec<WeightedExample<'_>> = batch
                        .iter()
                        .map(|&i| WeightedExample {
                            features: &data[i].features,
                            label: data[i].label,
                            weight: 1.0 / batch.len() as f64,
                        })
                        .collect();
                    let g = weighted_grad(&w, &weighted).expect("grad");
                    let (nw, nv) = sgd_step(&w, &g, training.lr, training.momentum, &v).expect("sgd");
                    w = nw;
                    v = nv;
                }
            }
            locals.push((data.len(), vec![w]));
        }
        let updates: Vec<(usize, &[ModelParams])> =
            locals.iter().map(|(n, w)| (*n, w.as_slice())).collect();
        global = aggregate(&updates, training.global_lr).expect("aggregate").remove(0);
    }
    global
}

fn single_cluster_equivalence() -> Outcome {
    let config = desk();
    let training = config.training();
    let mut identical = 0;
    let seeds = [0u64, 1, 2];
    for &seed in &seeds {
        let scenario = build_scenario(&config.scenario(), seed).expect("scenario");
        let mut state = SimState::new(&scenario, &training, Method::FedavgRetrain, seed).expect("state");
        run_time_step(&mut state, &scenario, &training).expect("step");
        let reference = independent_fedavg_step(&scenario, &config, seed);
        let same = state.models.len() == 1
            && state.models[0]
                .values()
                .iter()
                .zip(reference.values())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        identical += same as usize;
    }
    outcome(
        identical == seeds.len(),
        format!("{identical}/{} seeds bit-identical after {} rounds", seeds.len(), training.rounds),
    )
}

fn qualitative_ordering(reports: &[RunReport], elapsed: Duration) -> Outcome {
    let by = reports_by_method(reports);
    let mean_acc = |m: Method| {
        let v: Vec<f64> = by[&m].iter().map(|r| average_accuracy(r).expect("complete")).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    // accuracy at the last step on the tasks of the step before it
    let recent_tasks = |m: Method| {
        let v: Vec<f64> = by[&m]
            .iter()
            .map(|r| {
                let last = r.steps.last().expect("steps");
                let rotation = desk().rotations[r.num_steps - 2];
                let acc: Vec<f64> = last
                    .task_accuracy
                    .iter()
                    .filter(|t| t.task.rotation == rotation)
                    .map(|t| t.accuracy)
                    .collect();
                acc.iter().sum::<f64>() / acc.len() as f64
            })
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (o, f, c, a) = (
        mean_acc(Method::Oracle),
        mean_acc(Method::Feddaa),
        mean_acc(Method::ClusteredRetrain),
        mean_acc(Method::FedavgRetrain),
    );
    let (rf, rc) = (recent_tasks(Method::Feddaa), recent_tasks(Method::ClusteredRetrain));
    outcome(
        o >= f && f > c && c > a && rf - rc >= 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "average accuracy oracle {o:.3}, feddaa {f:.3}, clustered_retrain {c:.3}, fedavg_retrain {a:.3}; \
             step-5 tasks at step 6: feddaa {rf:.3} vs clustered_retrain {rc:.3}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("read dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
        })
        .collect()
}

fn byte_identical_outputs() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut config = desk();
        config.output_dir = tmp.path().join(run);
        runner::run(&config).expect("run");
        outputs.push(dir_files(&config.output_dir));
    }
    let csvs = outputs[0].keys().filter(|k| k.ends_with(".csv")).count();
    outcome(
        csvs == 20 && outputs[0] == outputs[1],
        format!("{csvs} CSV files plus summary compared across two full runs"),
    )
}

fn main() {
    let config = desk();
    let mut feddaa_only = config.clone();
    feddaa_only.methods = vec![Method::Feddaa];
    let start = Instant::now();
    let feddaa_reports = runner::run_all(&feddaa_only).expect("feddaa run");
    let ncd_elapsed = start.elapsed();

    let start = Instant::now();
    let all_reports = runner::run_all(&config).expect("full run");
    let full_elapsed = start.elapsed();

    let results = [
        ("1 cluster-count recovery", cluster_count_recovery(&feddaa_reports, ncd_elapsed)),
        ("2 drift detection", drift_detection(&all_reports)),
        ("3 EM monotonicity", em_monotonicity()),
        ("4 gradient finite differences", finite_differences()),
        ("5 oracle equivalences", oracle_equivalences()),
        ("6 single-cluster FedAvg equivalence", single_cluster_equivalence()),
        ("7 qualitative ordering", qualitative_ordering(&all_reports, full_elapsed)),
        ("8 byte-identical outputs", byte_identical_outputs()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
