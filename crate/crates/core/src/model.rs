//! Desk-scale softmax classifier with hand-written gradients.
//!
//! Two shapes are supported: a linear softmax model (`hidden_dim == 0`) and a
//! one-hidden-layer tanh MLP. Parameters live in one flat buffer so that
//! aggregation and optimizer updates are plain vector arithmetic.
//!
//! Flat layout, all matrices row-major `[out][in]`:
//! - linear: `W (R x D)`, `b (R)`
//! - MLP:    `W1 (H x D)`, `b1 (H)`, `W2 (R x H)`, `b2 (R)`

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 0,
            output_dim,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::InvalidDimensions("input dim must be >= 1".into()));
        }
        if self.output_dim < 2 {
            return Err(Error::InvalidDimensions("output dim must be >= 2".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (d, h, r) = (self.input_dim, self.hidden_dim, self.output_dim);
        if h == 0 {
            r * d + r
        } else {
            h * d + h + r * h + r
        }
    }

    /// `(offset, rows, cols)` of each weight matrix, followed by its bias.
    fn layers(&self) -> Vec<LayerSpan> {
        let (d, h, r) = (self.input_dim, self.hidden_dim, self.output_dim);
        if h == 0 {
            vec![LayerSpan::new(0, r, d)]
        } else {
            let first = LayerSpan::new(0, h, d);
            let second = LayerSpan::new(first.end(), r, h);
            vec![first, second]
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    weights: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

impl LayerSpan {
    fn new(offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            weights: offset,
            bias: offset + rows * cols,
            rows,
            cols,
        }
    }

    fn end(&self) -> usize {
        self.bias + self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

/// Partial derivatives, shape-congruent with the [`ModelParams`] they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            values: vec![0.0; arch.num_params()],
        })
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_classes(&self) -> usize {
        self.arch.output_dim
    }

    /// Weight matrix of layer `layer` as rows.
    pub fn layer_weights(&self, layer: usize) -> Vec<&[f64]> {
        let span = self.arch.layers()[layer];
        self.values[span.weights..span.bias]
            .chunks(span.cols)
            .collect()
    }

    pub fn layer_bias(&self, layer: usize) -> &[f64] {
        let span = self.arch.layers()[layer];
        &self.values[span.bias..span.end()]
    }

    pub fn num_layers(&self) -> usize {
        self.arch.layers().len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Element-wise mean of a nonempty list of same-shape models.
    pub fn mean_of(models: &[ModelParams]) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("model list"))?;
        let mut acc = vec![0.0; first.values.len()];
        for m in models {
            check_same_arch(first.arch, m.arch)?;
            for (a, v) in acc.iter_mut().zip(&m.values) {
                *a += v;
            }
        }
        let n = models.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(Self {
            arch: first.arch,
            values: acc,
        })
    }
}

impl GradientBundle {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.num_params()],
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                actual: values.len(),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_same_arch(a: Architecture, b: Architecture) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a.num_params(),
            actual: b.num_params(),
        });
    }
    Ok(())
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(arch: Architecture, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng: SimRng = rand::SeedableRng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch)?;
    for span in arch.layers() {
        let bound = 1.0 / (span.cols as f64).sqrt();
        for w in &mut params.values[span.weights..span.bias] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

fn affine(values: &[f64], span: LayerSpan, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let weights = &values[span.weights..span.bias];
    let bias = &values[span.bias..span.end()];
    for (row, b) in weights.chunks(span.cols).zip(bias) {
        let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
        out.push(dot + b);
    }
}

struct Activations {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch.input_dim,
            actual: x.len(),
        });
    }
    Ok(())
}

fn activations(params: &ModelParams, x: &[f64]) -> Activations {
    let layers = params.arch.layers();
    let mut hidden = Vec::new();
    let mut logits = Vec::with_capacity(params.arch.output_dim);
    if layers.len() == 1 {
        affine(&params.values, layers[0], x, &mut logits);
    } else {
        affine(&params.values, layers[0], x, &mut hidden);
        hidden.iter_mut().for_each(|h| *h = h.tanh());
        affine(&params.values, layers[1], &hidden, &mut logits);
    }
    Activations { hidden, logits }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[y]`, accurate when `p_y` is close to one.
fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let ly = logits[y];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if ly >= max {
        let rest: f64 = logits
            .iter()
            .enumerate()
            .filter(|&(r, _)| r != y)
            .map(|(_, l)| (l - ly).exp())
            .sum();
        rest.ln_1p()
    } else {
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        (max - ly) + sum.ln()
    }
}

/// Class probabilities for one input.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    check_input(params, x)?;
    Ok(softmax(&activations(params, x).logits))
}

/// Cross-entropy loss of one example.
pub fn loss(params: &ModelParams, x: &[f64], y: usize) -> Result<f64> {
    check_input(params, x)?;
    check_label(params, y)?;
    Ok(cross_entropy(&activations(params, x).logits, y))
}

fn check_label(params: &ModelParams, y: usize) -> Result<()> {
    if y >= params.arch.output_dim {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_classes: params.arch.output_dim,
        });
    }
    Ok(())
}

/// One weighted training example borrowed from a dataset.
#[derive(Debug, Clone, Copy)]
pub struct WeightedExample<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

/// `sum_i weight_i * grad loss(x_i, y_i)`. Weights are used as given.
pub fn weighted_grad(params: &ModelParams, batch: &[WeightedExample<'_>]) -> Result<GradientBundle> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    let arch = params.arch;
    let layers = arch.layers();
    let mut grad = GradientBundle::zeros(arch);
    let mut delta = vec![0.0; arch.output_dim];
    let mut hidden_delta = vec![0.0; arch.hidden_dim];
    for ex in batch {
        check_input(params, ex.features)?;
        check_label(params, ex.label)?;
        if ex.weight == 0.0 {
            continue;
        }
        let act = activations(params, ex.features);
        let probs = softmax(&act.logits);
        for (r, d) in delta.iter_mut().enumerate() {
            let target = if r == ex.label { 1.0 } else { 0.0 };
            *d = ex.weight * (probs[r] - target);
        }
        let out_span = *layers.last().expect("at least one layer");
        let out_input: &[f64] = if layers.len() == 1 {
            ex.features
        } else {
            &act.hidden
        };
        accumulate_layer(&mut grad.values, out_span, &delta, out_input);

        if layers.len() == 2 {
            let w2 = &params.values[out_span.weights..out_span.bias];
            for (j, hd) in hidden_delta.iter_mut().enumerate() {
                let back: f64 = (0..out_span.rows)
                    .map(|r| w2[r * out_span.cols + j] * delta[r])
                    .sum();
                let h = act.hidden[j];
                *hd = back * (1.0 - h * h);
            }
            accumulate_layer(&mut grad.values, layers[0], &hidden_delta, ex.features);
        }
    }
    Ok(grad)
}

fn accumulate_layer(grad: &mut [f64], span: LayerSpan, delta: &[f64], input: &[f64]) {
    for (r, d) in delta.iter().enumerate() {
        let row = &mut grad[span.weights + r * span.cols..span.weights + (r + 1) * span.cols];
        for (g, x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
        grad[span.bias + r] += d;
    }
}

/// Heavy-ball SGD: `v <- momentum * v + g`, `w <- w - lr * v`.
pub fn sgd_step(
    params: &ModelParams,
    grad: &GradientBundle,
    lr: f64,
    momentum: f64,
    velocity: &GradientBundle,
) -> Result<(ModelParams, GradientBundle)> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum {momentum} must lie in [0, 1)"
        )));
    }
    check_same_arch(params.arch, grad.arch)?;
    check_same_arch(params.arch, velocity.arch)?;
    if grad.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let new_velocity: Vec<f64> = velocity
        .values
        .iter()
        .zip(&grad.values)
        .map(|(v, g)| momentum * v + g)
        .collect();
    let new_params: Vec<f64> = params
        .values
        .iter()
        .zip(&new_velocity)
        .map(|(w, v)| w - lr * v)
        .collect();
    if new_params.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("model parameters"));
    }
    Ok((
        ModelParams {
            arch: params.arch,
            values: new_params,
        },
        GradientBundle {
            arch: params.arch,
            values: new_velocity,
        },
    ))
}
