//! Responsibilities, mixture weights, label constants and the approximated
//! log-likelihood, plus the client-side EM/SGD update.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledExample;
use crate::error::{Error, Result};
use crate::model::{loss, sgd_step, weighted_grad, GradientBundle, ModelParams, WeightedExample};
use crate::rng::SimRng;

/// Lower bound applied to every label constant before renormalization.
pub const LABEL_FLOOR: f64 = 1e-6;

/// `exp(-loss) / A_{y,c}`.
pub fn tilde_i(loss: f64, label_constant: f64) -> f64 {
    (-loss).exp() / label_constant
}

/// `ln` of [`tilde_i`], computed without the exponential.
pub fn log_tilde_i(loss: f64, label_constant: f64) -> f64 {
    -loss - label_constant.ln()
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// `gamma_c = alpha_c * I_c / sum_n alpha_n * I_n` from raw `I` values.
pub fn gamma_update(alpha: &[f64], tilde: &[f64]) -> Result<Vec<f64>> {
    check_same_len(alpha.len(), tilde.len())?;
    let weighted: Vec<f64> = alpha.iter().zip(tilde).map(|(a, i)| a * i).collect();
    let total: f64 = weighted.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite("responsibility normalizer"));
    }
    Ok(weighted.into_iter().map(|w| w / total).collect())
}

/// Same as [`gamma_update`] but from `ln I`, normalized with a log-sum-exp.
pub fn gamma_update_log(alpha: &[f64], log_tilde: &[f64]) -> Result<Vec<f64>> {
    check_same_len(alpha.len(), log_tilde.len())?;
    let terms: Vec<f64> = alpha
        .iter()
        .zip(log_tilde)
        .map(|(&a, &l)| if a > 0.0 { a.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("responsibility normalizer"));
    }
    let exps: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Column means of the responsibility rows.
pub fn alpha_update(responsibilities: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = responsibilities.first().ok_or(Error::Empty("responsibilities"))?;
    let mut sums = vec![0.0; first.len()];
    for row in responsibilities {
        check_same_len(sums.len(), row.len())?;
        sums.iter_mut().zip(row).for_each(|(s, g)| *s += g);
    }
    let n = responsibilities.len() as f64;
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// `ln sum_c alpha_c * I_c` for one sample.
fn log_mixture(alpha: &[f64], log_tilde: &[f64]) -> f64 {
    let terms: Vec<f64> = alpha
        .iter()
        .zip(log_tilde)
        .map(|(&a, &l)| if a > 0.0 { a.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Per-client mixture weights, one stochastic row per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureWeights {
    pub rows: Vec<Vec<f64>>,
}

impl MixtureWeights {
    pub fn uniform(num_clients: usize, num_clusters: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / num_clusters as f64; num_clusters]; num_clients],
        }
    }

    pub fn one_hot(clusters: &[usize], num_clusters: usize) -> Self {
        Self {
            rows: clusters
                .iter()
                .map(|&c| (0..num_clusters).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn row(&self, client: usize) -> &[f64] {
        &self.rows[client]
    }

    pub fn num_clusters(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// `A_{y,c}`: estimated label marginal of every cluster, stored `[y][c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConstants {
    num_classes: usize,
    num_clusters: usize,
    values: Vec<f64>,
}

impl LabelConstants {
    pub fn uniform(num_classes: usize, num_clusters: usize) -> Self {
        Self {
            num_classes,
            num_clusters,
            values: vec![1.0 / num_classes as f64; num_classes * num_clusters],
        }
    }

    pub fn get(&self, label: usize, cluster: usize) -> f64 {
        self.values[label * self.num_clusters + cluster]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    /// Column `c` as a label distribution.
    pub fn column(&self, cluster: usize) -> Vec<f64> {
        (0..self.num_classes).map(|y| self.get(y, cluster)).collect()
    }
}

/// Label-masked responsibility mass `sum 1{y_i = y} gamma_{i,c}` per `(y, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    num_classes: usize,
    num_clusters: usize,
    mass: Vec<f64>,
}

impl LabelStats {
    pub fn new(num_classes: usize, num_clusters: usize) -> Self {
        Self {
            num_classes,
            num_clusters,
            mass: vec![0.0; num_classes * num_clusters],
        }
    }

    pub fn add(&mut self, label: usize, gamma: &[f64]) {
        let row = &mut self.mass[label * self.num_clusters..(label + 1) * self.num_clusters];
        row.iter_mut().zip(gamma).for_each(|(m, g)| *m += g);
    }

    pub fn merge(&mut self, other: &LabelStats) {
        self.mass.iter_mut().zip(&other.mass).for_each(|(m, o)| *m += o);
    }

    /// Mass ratios, floored at [`LABEL_FLOOR`] and renormalized over labels.
    /// Clusters without mass keep a uniform column.
    pub fn estimate(&self) -> LabelConstants {
        let (r, c) = (self.num_classes, self.num_clusters);
        let mut values = vec![0.0; r * c];
        for cluster in 0..c {
            let total: f64 = (0..r).map(|y| self.mass[y * c + cluster]).sum();
            let column: Vec<f64> = (0..r)
                .map(|y| {
                    let a = if total > 0.0 {
                        self.mass[y * c + cluster] / total
                    } else {
                        1.0 / r as f64
                    };
                    a.max(LABEL_FLOOR)
                })
                .collect();
            let norm: f64 = column.iter().sum();
            for (y, a) in column.into_iter().enumerate() {
                values[y * c + cluster] = a / norm;
            }
        }
        LabelConstants {
            num_classes: r,
            num_clusters: c,
            values,
        }
    }
}

pub fn estimate_label_constants(
    responsibilities: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<LabelConstants> {
    check_same_len(responsibilities.len(), labels.len())?;
    let c = responsibilities.first().ok_or(Error::Empty("responsibilities"))?.len();
    let mut stats = LabelStats::new(num_classes, c);
    for (gamma, &y) in responsibilities.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        check_same_len(c, gamma.len())?;
        stats.add(y, gamma);
    }
    Ok(stats.estimate())
}

fn log_tilde_row(
    models: &[ModelParams],
    constants: &LabelConstants,
    example: &LabeledExample,
) -> Result<Vec<f64>> {
    models
        .iter()
        .enumerate()
        .map(|(c, m)| {
            Ok(log_tilde_i(
                loss(m, &example.features, example.label)?,
                constants.get(example.label, c),
            ))
        })
        .collect()
}

/// Responsibilities of every sample under the current models.
pub fn e_step(
    models: &[ModelParams],
    alpha: &[f64],
    constants: &LabelConstants,
    data: &[&LabeledExample],
) -> Result<Vec<Vec<f64>>> {
    check_same_len(models.len(), alpha.len())?;
    data.iter()
        .map(|ex| gamma_update_log(alpha, &log_tilde_row(models, constants, ex)?))
        .collect()
}

/// Sum over the samples of `ln sum_c alpha_c * I_c`.
pub fn log_likelihood_sum(
    models: &[ModelParams],
    alpha: &[f64],
    constants: &LabelConstants,
    data: &[&LabeledExample],
) -> Result<f64> {
    check_same_len(models.len(), alpha.len())?;
    let mut total = 0.0;
    for ex in data {
        total += log_mixture(alpha, &log_tilde_row(models, constants, ex)?);
    }
    Ok(total)
}

/// Mean approximated log-likelihood over all samples of all clients.
pub fn objective_value(
    models: &[ModelParams],
    alphas: &MixtureWeights,
    constants: &LabelConstants,
    datasets: &[Vec<&LabeledExample>],
) -> Result<f64> {
    check_same_len(alphas.rows.len(), datasets.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (alpha, data) in alphas.rows.iter().zip(datasets) {
        total += log_likelihood_sum(models, alpha, constants, data)?;
        count += data.len();
    }
    if count == 0 {
        return Err(Error::Empty("objective datasets"));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

/// How responsibilities are obtained during a local update.
#[derive(Debug, Clone, PartialEq)]
pub enum Responsibility {
    /// EM updates from the current models.
    Em,
    /// Every sample takes this row and `alpha` stays fixed.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub models: Vec<ModelParams>,
    pub alpha: Vec<f64>,
    pub stats: LabelStats,
}

/// Client update: a full E-step, then for every mini-batch refresh the
/// batch's responsibilities and the mixture row and take one weighted SGD
/// step per cluster model with weights `gamma / batch length`.
pub fn local_update(
    models: &[ModelParams],
    alpha: &[f64],
    constants: &LabelConstants,
    data: &[&LabeledExample],
    options: &LocalOptions,
    responsibility: &Responsibility,
    rng: &mut SimRng,
) -> Result<LocalResult> {
    if data.is_empty() {
        return Err(Error::Empty("local training set"));
    }
    if options.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    check_same_len(models.len(), alpha.len())?;
    let c = models.len();
    let (mut gammas, mut alpha) = match responsibility {
        Responsibility::Em => {
            let gammas = e_step(models, alpha, constants, data)?;
            let alpha = alpha_update(&gammas)?;
            (gammas, alpha)
        }
        Responsibility::Fixed(row) => {
            check_same_len(c, row.len())?;
            (vec![row.clone(); data.len()], alpha.to_vec())
        }
    };
    let mut local: Vec<ModelParams> = models.to_vec();
    let mut velocity: Vec<GradientBundle> =
        models.iter().map(|m| GradientBundle::zeros(m.arch())).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..options.epochs {
        order.shuffle(rng);
        for batch in order.chunks(options.batch_size) {
            if let Responsibility::Em = responsibility {
                for &i in batch {
                    gammas[i] = gamma_update_log(&alpha, &log_tilde_row(&local, constants, data[i])?)?;
                }
                alpha = alpha_update(&gammas)?;
            }
            let scale = 1.0 / batch.len() as f64;
            for cluster in 0..c {
                let weighted: Vec<WeightedExample<'_>> = batch
                    .iter()
                    .map(|&i| WeightedExample {
                        features: &data[i].features,
                        label: data[i].label,
                        weight: gammas[i][cluster] * scale,
                    })
                    .collect();
                let grad = if weighted.iter().all(|w| w.weight == 0.0) {
                    GradientBundle::zeros(local[cluster].arch())
                } else {
                    weighted_grad(&local[cluster], &weighted)?
                };
                let (params, v) = sgd_step(
                    &local[cluster],
                    &grad,
                    options.lr,
                    options.momentum,
                    &velocity[cluster],
                )?;
                local[cluster] = params;
                velocity[cluster] = v;
            }
        }
    }
    let mut stats = LabelStats::new(constants.num_classes(), c);
    for (ex, g) in data.iter().zip(&gammas) {
        stats.add(ex.label, g);
    }
    Ok(LocalResult {
        models: local,
        alpha,
        stats,
    })
}

/// One deterministic full-batch EM iteration over all clients with `A` held
/// fixed: responsibilities from the current state, mixture rows set to their
/// means, and one plain gradient step per model on the size-weighted sum of
/// client gradients (weights `gamma / N_k`).
pub fn full_batch_em_step(
    models: &[ModelParams],
    alphas: &mut MixtureWeights,
    constants: &LabelConstants,
    datasets: &[Vec<&LabeledExample>],
    lr: f64,
) -> Result<Vec<ModelParams>> {
    check_same_len(alphas.rows.len(), datasets.len())?;
    let mut locals: Vec<(usize, Vec<ModelParams>)> = Vec::with_capacity(datasets.len());
    for (alpha, data) in alphas.rows.iter_mut().zip(datasets) {
        if data.is_empty() {
            return Err(Error::Empty("client dataset"));
        }
        let gammas = e_step(models, alpha, constants, data)?;
        *alpha = alpha_update(&gammas)?;
        let scale = 1.0 / data.len() as f64;
        let mut updated = Vec::with_capacity(models.len());
        for (cluster, model) in models.iter().enumerate() {
            let batch: Vec<WeightedExample<'_>> = data
                .iter()
                .zip(&gammas)
                .map(|(ex, g)| WeightedExample {
                    features: &ex.features,
                    label: ex.label,
                    weight: g[cluster] * scale,
                })
                .collect();
            let grad = weighted_grad(model, &batch)?;
            let zero = GradientBundle::zeros(model.arch());
            updated.push(sgd_step(model, &grad, lr, 0.0, &zero)?.0);
        }
        locals.push((data.len(), updated));
    }
    let refs: Vec<(usize, &[ModelParams])> =
        locals.iter().map(|(n, m)| (*n, m.as_slice())).collect();
    super::aggregate(&refs, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_params, Architecture};
    use crate::rng::{self, Stream};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn tilde_examples() {
        assert_eq!(tilde_i(0.0, 1.0), 1.0);
        assert!((tilde_i(2f64.ln(), 0.5) - 1.0).abs() < 1e-15);
        assert!((log_tilde_i(0.7, 0.3) - tilde_i(0.7, 0.3).ln()).abs() < 1e-14);
    }

    #[test]
    fn gamma_examples() {
        let g = gamma_update(&[0.5, 0.5], &[3.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.75, 0.25]);
        let g = gamma_update(&[0.0, 1.0, 0.0], &[2.0, 0.1, 7.0]).unwrap();
        assert_eq!(g, vec![0.0, 1.0, 0.0]);
        let g = gamma_update_log(&[0.25; 4], &[-1.5; 4]).unwrap();
        assert!(g.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let g = gamma_update_log(&[0.5, 0.5], &[3f64.ln(), 0.0]).unwrap();
        assert!((g[0] - 0.75).abs() < 1e-15 && (g[1] - 0.25).abs() < 1e-15);
        // huge losses underflow the direct form but not the log form
        let g = gamma_update_log(&[0.5, 0.5], &[-2000.0, -2001.0]).unwrap();
        assert!((g[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
        assert!(gamma_update(&[0.5, 0.5], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha_update(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        let a = alpha_update(&[vec![0.2, 0.8], vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
        assert!((a[0] - 0.2).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        assert!(alpha_update(&[]).is_err());
    }

    #[test]
    fn label_constants_examples() {
        let labels = [0, 1, 1, 2];
        let gammas = vec![vec![0.5, 0.5]; 4];
        let a = estimate_label_constants(&gammas, &labels, 3).unwrap();
        for c in 0..2 {
            assert!((a.get(0, c) - 0.25).abs() < 1e-12);
            assert!((a.get(1, c) - 0.5).abs() < 1e-12);
        }
        // cluster 0 has mass only on label-3 samples
        let labels = [3, 3, 1, 0];
        let gammas = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let a = estimate_label_constants(&gammas, &labels, 4).unwrap();
        let norm = 1.0 + 3.0 * LABEL_FLOOR;
        assert!((a.get(3, 0) - 1.0 / norm).abs() < 1e-15);
        assert!((a.get(0, 0) - LABEL_FLOOR / norm).abs() < 1e-15);
        for c in 0..2 {
            assert!((a.column(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn toy_data(seed: u64, n: usize, d: usize, r: usize) -> Vec<LabeledExample> {
        let mut rng = SimRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                LabeledExample::new(
                    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    rng.random_range(0..r),
                )
            })
            .collect()
    }

    #[test]
    fn single_cluster_objective_reduces_to_mean_log_ratio() {
        let arch = Architecture::linear(3, 4);
        let model = init_params(arch, 5).unwrap();
        let data = toy_data(2, 12, 3, 4);
        let refs: Vec<&LabeledExample> = data.iter().collect();
        let constants = estimate_label_constants(
            &vec![vec![1.0]; 12],
            &data.iter().map(|e| e.label).collect::<Vec<_>>(),
            4,
        )
        .unwrap();
        let alphas = MixtureWeights::uniform(1, 1);
        let l = objective_value(std::slice::from_ref(&model), &alphas, &constants, std::slice::from_ref(&refs))
            .unwrap();
        let expected: f64 = data
            .iter()
            .map(|e| -loss(&model, &e.features, e.label).unwrap() - constants.get(e.label, 0).ln())
            .sum::<f64>()
            / 12.0;
        assert!((l - expected).abs() < 1e-12);

        let doubled: Vec<&LabeledExample> = refs.iter().chain(refs.iter()).copied().collect();
        let l2 = objective_value(std::slice::from_ref(&model), &alphas, &constants, &[doubled])
            .unwrap();
        assert!((l - l2).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_direct_mixture_sum() {
        let arch = Architecture::linear(2, 3);
        let models = vec![init_params(arch, 1).unwrap(), init_params(arch, 2).unwrap()];
        let data = toy_data(8, 4, 2, 3);
        let refs: Vec<&LabeledExample> = data.iter().collect();
        let constants = LabelConstants::uniform(3, 2);
        let alphas = MixtureWeights {
            rows: vec![vec![0.3, 0.7]],
        };
        let l = objective_value(&models, &alphas, &constants, &[refs]).unwrap();
        let mut expected = 0.0;
        for e in &data {
            let mix: f64 = (0..2)
                .map(|c| alphas.rows[0][c] * forward(&models[c], &e.features).unwrap()[e.label] * 3.0)
                .sum();
            expected += mix.ln();
        }
        assert!((l - expected / 4.0).abs() < 1e-12);
    }

    fn opts(batch: usize) -> LocalOptions {
        LocalOptions {
            epochs: 1,
            batch_size: batch,
            lr: 0.05,
            momentum: 0.9,
        }
    }

    #[test]
    fn zero_weight_cluster_is_untouched() {
        let arch = Architecture::linear(3, 4);
        let models = vec![init_params(arch, 1).unwrap(), init_params(arch, 2).unwrap()];
        let data = toy_data(3, 20, 3, 4);
        let refs: Vec<&LabeledExample> = data.iter().collect();
        let mut rng = rng::stream(0, Stream::BatchOrder, &[]);
        let out = local_update(
            &models,
            &[1.0, 0.0],
            &LabelConstants::uniform(4, 2),
            &refs,
            &opts(6),
            &Responsibility::Em,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.models[1], models[1]);
        assert_ne!(out.models[0], models[0]);
        assert_eq!(out.alpha, vec![1.0, 0.0]);
        assert!(local_update(
            &models,
            &[1.0, 0.0],
            &LabelConstants::uniform(4, 2),
            &[],
            &opts(6),
            &Responsibility::Em,
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn single_cluster_is_plain_minibatch_sgd() {
        let arch = Architecture::linear(3, 4);
        let model = init_params(arch, 4).unwrap();
        let data = toy_data(3, 23, 3, 4);
        let refs: Vec<&LabeledExample> = data.iter().collect();
        let o = LocalOptions {
            epochs: 2,
            ..opts(5)
        };
        let mut rng = rng::stream(9, Stream::BatchOrder, &[1]);
        let out = local_update(
            std::slice::from_ref(&model),
            &[1.0],
            &LabelConstants::uniform(4, 1),
            &refs,
            &o,
            &Responsibility::Em,
            &mut rng,
        )
        .unwrap();

        let mut rng = rng::stream(9, Stream::BatchOrder, &[1]);
        let mut w = model.clone();
        let mut v = GradientBundle::zeros(arch);
        let mut order: Vec<usize> = (0..23).collect();
        for _ in 0..2 {
            order.shuffle(&mut rng);
            for batch in order.chunks(5) {
                let b: Vec<WeightedExample<'_>> = batch
                    .iter()
                    .map(|&i| WeightedExample {
                        features: &data[i].features,
                        label: data[i].label,
                        weight: 1.0 / batch.len() as f64,
                    })
                    .collect();
                let g = weighted_grad(&w, &b).unwrap();
                (w, v) = sgd_step(&w, &g, o.lr, o.momentum, &v).unwrap();
            }
        }
        assert_eq!(out.models[0], w);
    }

    #[test]
    fn full_batch_step_increases_objective() {
        let arch = Architecture::linear(3, 4);
        let models = vec![init_params(arch, 10).unwrap(), init_params(arch, 11).unwrap()];
        let data = toy_data(5, 40, 3, 4);
        let datasets = vec![data[..20].iter().collect::<Vec<_>>(), data[20..].iter().collect()];
        let constants = LabelConstants::uniform(4, 2);
        let mut alphas = MixtureWeights::uniform(2, 2);
        let before = objective_value(&models, &alphas, &constants, &datasets).unwrap();
        let new_models = full_batch_em_step(&models, &mut alphas, &constants, &datasets, 1e-2).unwrap();
        let after = objective_value(&new_models, &alphas, &constants, &datasets).unwrap();
        assert!(after > before);
    }

    proptest! {
        #[test]
        fn updates_stay_stochastic(
            alpha in proptest::collection::vec(0.01f64..1.0, 1..6),
            logs in proptest::collection::vec(-50.0f64..5.0, 6),
            extra in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 6), 1..8),
        ) {
            let c = alpha.len();
            let s: f64 = alpha.iter().sum();
            let alpha: Vec<f64> = alpha.iter().map(|a| a / s).collect();
            let g = gamma_update_log(&alpha, &logs[..c]).unwrap();
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let mut rows = vec![g];
            for e in &extra {
                let t: f64 = e[..c].iter().sum::<f64>() + 1e-9;
                rows.push(e[..c].iter().map(|x| (x + 1e-9 / c as f64) / t).collect());
            }
            let a = alpha_update(&rows).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
