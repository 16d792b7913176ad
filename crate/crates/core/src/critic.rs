//! Fully connected relu critic `T(x, y)` with hand-written backpropagation
//! and an Adam optimizer.
//!
//! Inputs are the concatenation `[x, y]`. Hidden layers use relu, the output
//! layer is a single linear unit. Scores are never clipped here.

use std::fmt::Write as _;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriticError {
    #[error("invalid critic config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("stale or missing activations: {0}")]
    StaleActivations(String),
    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },
    #[error("malformed snapshot at line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, CriticError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
}

impl CriticConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_widths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Two hidden layers of 100 units over `[x, y]` with `x, y` in `R^dim`.
    pub fn for_task_dim(dim: usize) -> Self {
        Self {
            input_dim: 2 * dim,
            hidden_widths: vec![100, 100],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(CriticError::Config("input_dim must be positive".into()));
        }
        if self.hidden_widths.is_empty() {
            return Err(CriticError::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_widths.contains(&0) {
            return Err(CriticError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_widths);
        widths.push(1);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Dense layer `out = input . weights + bias`, weights stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of every layer. Also used to hold gradients and
/// optimizer moments, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParameters {
    pub layers: Vec<Layer>,
}

/// Gradients have exactly the parameter layout.
pub type Gradients = CriticParameters;

impl CriticParameters {
    pub fn zeros(config: &CriticConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(fan_in, fan_out)| Layer {
                    weights: Array2::zeros((fan_in, fan_out)),
                    bias: Array1::zeros(fan_out),
                })
                .collect(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Tensor names and contents in a fixed order: per layer, weights then bias.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layers.{i}.weights"), contiguous(&l.weights)),
                    (
                        format!("layers.{i}.bias"),
                        l.bias.as_slice().expect("owned"),
                    ),
                ]
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weights.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("owned"),
            ]
        })
    }

    /// All parameters concatenated in [`Self::tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    /// Overwrites all parameters from a slice in [`Self::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(CriticError::DimensionMismatch(format!(
                "expected {} values, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    /// Textual snapshot; see the crate README for the format.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::from("critic-snapshot v1\n");
        for (name, data) in self.tensors() {
            let shape = if name.ends_with("weights") {
                let l: usize = name.split('.').nth(1).and_then(|s| s.parse().ok()).unwrap();
                let (r, c) = self.layers[l].weights.dim();
                format!("{r} {c}")
            } else {
                data.len().to_string()
            };
            writeln!(out, "{name} {shape}").unwrap();
            let row: Vec<String> = data.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let err = |line: usize, reason: &str| CriticError::Snapshot {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "critic-snapshot v1")) => {}
            _ => return Err(err(1, "missing header `critic-snapshot v1`")),
        }
        let mut layers: Vec<Layer> = Vec::new();
        let mut pending: Option<Array2<f64>> = None;
        while let Some((ln, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = header.split_whitespace().collect();
            let name = fields[0];
            let dims: Vec<usize> = fields[1..]
                .iter()
                .map(|f| f.parse().map_err(|_| err(ln, "bad shape")))
                .collect::<Result<_>>()?;
            let (vln, body) = lines.next().ok_or_else(|| err(ln, "missing values"))?;
            let values: Vec<f64> = body
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| err(vln, "bad number")))
                .collect::<Result<_>>()?;
            let expected_name = if pending.is_none() {
                format!("layers.{}.weights", layers.len())
            } else {
                format!("layers.{}.bias", layers.len())
            };
            if name != expected_name {
                return Err(err(ln, &format!("expected tensor {expected_name}")));
            }
            match (pending.take(), dims.as_slice()) {
                (None, &[r, c]) => {
                    let w = Array2::from_shape_vec((r, c), values)
                        .map_err(|_| err(vln, "value count does not match shape"))?;
                    pending = Some(w);
                }
                (Some(weights), &[n]) => {
                    if values.len() != n || n != weights.ncols() {
                        return Err(err(vln, "bias length does not match weights"));
                    }
                    layers.push(Layer {
                        weights,
                        bias: Array1::from(values),
                    });
                }
                _ => return Err(err(ln, "bad shape")),
            }
        }
        if pending.is_some() {
            return Err(err(text.lines().count(), "weights without bias"));
        }
        if layers.len() < 2 {
            return Err(err(text.lines().count(), "need at least two layers"));
        }
        for w in layers.windows(2) {
            if w[0].weights.ncols() != w[1].weights.nrows() {
                return Err(err(0, "consecutive layer shapes disagree"));
            }
        }
        if layers.last().unwrap().weights.ncols() != 1 {
            return Err(err(0, "output layer must have one unit"));
        }
        Ok(Self { layers })
    }
}

fn contiguous(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// He-normal weights `N(0, 2 / fan_in)`, zero biases.
pub fn init_critic(config: &CriticConfig, seed: u64) -> Result<CriticParameters> {
    let mut params = CriticParameters::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let fan_in = layer.weights.nrows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        layer.weights.mapv_inplace(|_| normal.sample(&mut rng));
    }
    Ok(params)
}

/// Scores plus the per-layer inputs needed by [`backward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub scores: Vec<f64>,
    /// Input to each layer: the raw batch for layer 0, relu activations after.
    activations: Vec<Array2<f64>>,
    shapes: Vec<(usize, usize)>,
}

impl ForwardPass {
    pub fn batch_len(&self) -> usize {
        self.scores.len()
    }
}

/// Scores every row of `[xs, ys]`.
pub fn forward_batch(
    params: &CriticParameters,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
) -> Result<ForwardPass> {
    if xs.nrows() != ys.nrows() {
        return Err(CriticError::DimensionMismatch(format!(
            "xs has {} rows, ys has {}",
            xs.nrows(),
            ys.nrows()
        )));
    }
    let input = concatenate(Axis(1), &[xs, ys]).expect("row counts checked");
    forward_input(params, input)
}

/// Scores the joint rows `[xs, ys]` followed by the marginal rows
/// `[xs, ys_shuffled]` in a single pass. The first half of the scores belongs
/// to the joint pairs.
pub fn forward_joint_and_marginal(
    params: &CriticParameters,
    xs: ArrayView2<f64>,
    ys: ArrayView2<f64>,
    ys_shuffled: ArrayView2<f64>,
) -> Result<ForwardPass> {
    if xs.nrows() != ys.nrows() || xs.nrows() != ys_shuffled.nrows() {
        return Err(CriticError::DimensionMismatch(
            "joint and marginal batches differ in length".into(),
        ));
    }
    let joint = concatenate(Axis(1), &[xs, ys]).expect("row counts checked");
    let marg = concatenate(Axis(1), &[xs, ys_shuffled]).expect("row counts checked");
    let input = concatenate(Axis(0), &[joint.view(), marg.view()]).expect("same width");
    forward_input(params, input)
}

/// Forward pass over an already concatenated input matrix.
pub fn forward_input(params: &CriticParameters, input: Array2<f64>) -> Result<ForwardPass> {
    let shapes = params.layer_shapes();
    if input.ncols() != shapes[0].0 {
        return Err(CriticError::DimensionMismatch(format!(
            "input has {} columns, critic expects {}",
            input.ncols(),
            shapes[0].0
        )));
    }
    let last = params.layers.len() - 1;
    let mut activations = Vec::with_capacity(params.layers.len());
    let mut current = input;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut pre = current.dot(&layer.weights);
        pre += &layer.bias;
        activations.push(current);
        if i < last {
            pre.mapv_inplace(|v| v.max(0.0));
        }
        current = pre;
    }
    Ok(ForwardPass {
        scores: current.column(0).to_vec(),
        activations,
        shapes,
    })
}

/// Gradient of `sum_i score_grads[i] * score_i` with respect to every
/// parameter. `relu'(0)` is taken as 0.
pub fn backward_batch(
    params: &CriticParameters,
    pass: &ForwardPass,
    score_grads: &[f64],
) -> Result<Gradients> {
    if pass.activations.len() != params.layers.len() || pass.shapes != params.layer_shapes() {
        return Err(CriticError::StaleActivations(
            "forward pass was computed for a different architecture".into(),
        ));
    }
    if score_grads.len() != pass.batch_len() {
        return Err(CriticError::StaleActivations(format!(
            "{} score gradients for a batch of {}",
            score_grads.len(),
            pass.batch_len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut delta = Array2::from_shape_vec((score_grads.len(), 1), score_grads.to_vec())
        .expect("column vector");
    for i in (0..params.layers.len()).rev() {
        let input = &pass.activations[i];
        grads.layers[i].weights = input.t().dot(&delta).as_standard_layout().into_owned();
        grads.layers[i].bias = delta.sum_axis(Axis(0));
        if i > 0 {
            let mut upstream = delta.dot(&params.layers[i].weights.t());
            // activations[i] = relu(pre), positive exactly where pre > 0
            upstream.zip_mut_with(input, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = upstream;
        }
    }
    Ok(grads)
}

/// Splits a stacked joint/marginal score vector.
pub fn split_scores(scores: &[f64]) -> (&[f64], &[f64]) {
    scores.split_at(scores.len() / 2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: CriticParameters,
    pub second_moment: CriticParameters,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &CriticParameters, config: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam descent step on `params`. Callers that maximize an
/// objective pass the gradient of its negation.
///
/// Gradients are checked for finiteness before anything is modified.
pub fn optimizer_step(
    params: &mut CriticParameters,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.layer_shapes() != params.layer_shapes()
        || state.first_moment.layer_shapes() != params.layer_shapes()
    {
        return Err(CriticError::DimensionMismatch(
            "gradient or optimizer state shapes differ from parameters".into(),
        ));
    }
    for (name, t) in grads.tensors() {
        if let Some(idx) = t.iter().position(|g| !g.is_finite()) {
            return Err(CriticError::NonFiniteGradient {
                path: format!("{name}[{idx}]"),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    let grad_tensors = grads.tensors();
    for (((p, (_, g)), m), v) in params
        .tensors_mut()
        .zip(grad_tensors)
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
    {
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
