//! Multilayer perceptron classifier trained with Adam.
//!
//! Hidden layers use ReLU and the output layer is linear. The output width is
//! set by the head: N logits for the softmax losses, N-1 task logits for CORN.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{ClassIndex, HeadKind, LossKind, Objective};
use crate::numeric::{affine_batch, affine_batch_backward, derive_seed, Mat2, Rng, Vec1};

/// Default learning rate for Adam.
pub const DEFAULT_LR: f64 = 2e-4;

/// Weights and bias of one dense layer. Also used to hold per-layer gradients
/// and optimizer moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weights: Mat2,
    pub bias: Vec1,
}

impl Layer {
    fn zeros_like(other: &Layer) -> Layer {
        Layer {
            weights: Mat2::zeros(other.weights.dim()),
            bias: Vec1::zeros(other.bias.len()),
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }
}

/// Parameter gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// All gradient entries in the same order as [`MlpModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    head: HeadKind,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// He-initialized network (`std = sqrt(2 / fan_in)`) with zero biases.
    pub fn new(layer_sizes: &[usize], head: HeadKind, seed: u64) -> Result<Self> {
        Self::check_sizes(layer_sizes, head)?;
        let mut rng = Rng::new(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                Layer {
                    weights: Mat2::from_shape_fn((fan_out, fan_in), |_| std * rng.normal()),
                    bias: Vec1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            head,
            layers,
        })
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], head: HeadKind) -> Result<Self> {
        let mut m = Self::new(layer_sizes, head, 0)?;
        m.layers
            .iter_mut()
            .for_each(|l| l.weights.fill(0.0));
        Ok(m)
    }

    fn check_sizes(layer_sizes: &[usize], head: HeadKind) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("need at least input and output layer sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let out = *layer_sizes.last().unwrap();
        if head.n_classes(out) < 2 {
            return Err(Error::invalid(format!(
                "output width {out} gives fewer than 2 classes for a {} head",
                head.as_str()
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes(*self.layer_sizes.last().unwrap())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter, layer by layer: weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match model input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Head outputs for a batch of shape `(batch, input_dim)`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Mat2> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut act = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            act = affine_batch(act.view(), l.weights.view(), l.bias.view())?;
            if i < last {
                act.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(act)
    }

    /// Mean batch loss and gradients of every parameter. Does not modify the model.
    pub fn forward_backward(
        &self,
        x: ArrayView2<f64>,
        labels: &[ClassIndex],
        objective: Objective,
    ) -> Result<(f64, Gradients)> {
        self.check_input(&x)?;
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if labels.len() != x.nrows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        if objective.head() != self.head {
            return Err(Error::invalid(format!(
                "{} loss needs a {} head, model has {}",
                objective.kind(),
                objective.head().as_str(),
                self.head.as_str()
            )));
        }
        let n_classes = self.n_classes();
        if let Some(bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }

        let last = self.layers.len() - 1;
        // inputs[i] feeds layer i; pre[i] is its affine output.
        let mut inputs: Vec<Mat2> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Mat2> = Vec::with_capacity(self.layers.len());
        let mut act = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let z = affine_batch(act.view(), l.weights.view(), l.bias.view())?;
            inputs.push(act);
            act = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }

        let loss = objective.batch_loss(act.view(), labels)?;
        let mut delta = loss.grad_logits;
        let mut grads = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let (dx, dw, db) = affine_batch_backward(delta.view(), inputs[i].view(), l.weights.view())?;
            grads[i] = Some(Layer {
                weights: dw,
                bias: db,
            });
            if i > 0 {
                delta = dx;
                ndarray::Zip::from(&mut delta)
                    .and(&pre[i - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
        }
        Ok((
            loss.value,
            Gradients {
                layers: grads.into_iter().map(Option::unwrap).collect(),
            },
        ))
    }

    /// Argmax (lowest index on ties) for softmax heads, CORN rank rule otherwise.
    pub fn predict_labels(&self, x: ArrayView2<f64>) -> Result<Vec<ClassIndex>> {
        let out = self.forward(x)?;
        Ok(out
            .axis_iter(Axis(0))
            .map(|row| self.head.predict(&row.to_vec()))
            .collect())
    }

    /// Writes the plain-text checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }

    /// Checkpoint layout (version 1), one record per line:
    ///
    /// ```text
    /// cdwce-model 1
    /// head softmax
    /// layer_sizes 16 32 32 4
    /// layer 0
    /// <row 0 of W as space separated floats>
    /// ...
    /// <bias>
    /// layer 1
    /// ...
    /// ```
    ///
    /// Floats are written in shortest round-trip exponent form, so loading is
    /// lossless.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let join = |it: &mut dyn Iterator<Item = &f64>| {
            it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
        };
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "head {}", self.head.as_str()).unwrap();
        let sizes: Vec<String> = self.layer_sizes.iter().map(usize::to_string).collect();
        writeln!(out, "layer_sizes {}", sizes.join(" ")).unwrap();
        for (i, l) in self.layers.iter().enumerate() {
            writeln!(out, "layer {i}").unwrap();
            for row in l.weights.rows() {
                writeln!(out, "{}", join(&mut row.iter())).unwrap();
            }
            writeln!(out, "{}", join(&mut l.bias.iter())).unwrap();
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Schema(format!("checkpoint truncated: expected {what}")))
        };
        let field = |(n, line): (usize, &str), key: &str| -> Result<String> {
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Schema(format!("checkpoint line {n}: expected '{key}'")))
        };

        let version = field(next("header")?, CHECKPOINT_MAGIC)?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(Error::Schema(format!(
                "unsupported checkpoint version '{version}'"
            )));
        }
        let head: HeadKind = field(next("head")?, "head")?
            .parse()
            .map_err(|e: Error| Error::Schema(e.to_string()))?;
        let sizes = field(next("layer_sizes")?, "layer_sizes")?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Schema(format!("bad layer_sizes: {e}")))?;
        let mut model = Self::zeros(&sizes, head).map_err(|e| Error::Schema(e.to_string()))?;

        let parse_row = |(n, line): (usize, &str), len: usize| -> Result<Vec<f64>> {
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Schema(format!("checkpoint line {n}: {e}")))?;
            if vals.len() != len || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "checkpoint line {n}: expected {len} finite values"
                )));
            }
            Ok(vals)
        };
        for (i, l) in model.layers.iter_mut().enumerate() {
            let idx = field(next("layer")?, "layer")?;
            if idx != i.to_string() {
                return Err(Error::Schema(format!("expected layer {i}, found '{idx}'")));
            }
            let (rows, cols) = l.weights.dim();
            for r in 0..rows {
                let vals = parse_row(next("weights")?, cols)?;
                l.weights.row_mut(r).assign(&Vec1::from(vals));
            }
            l.bias = Vec1::from(parse_row(next("bias")?, rows)?);
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &str = "cdwce-model";
const CHECKPOINT_VERSION: u32 = 1;

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Layer>,
    second: Vec<Layer>,
}

impl AdamState {
    pub fn new(model: &MlpModel, lr: f64) -> Self {
        let zeros: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let shapes_match = grads.layers.len() == model.layers.len()
        && state.first.len() == model.layers.len()
        && model
            .layers
            .iter()
            .zip(&grads.layers)
            .zip(&state.first)
            .all(|((p, g), m)| p.same_shape(g) && p.same_shape(m));
    if !shapes_match {
        return Err(Error::invalid("gradient shapes do not match the model"));
    }

    state.step += 1;
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (((p, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        ndarray::Zip::from(&mut p.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Required for `cdw_ce`, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Ce,
            power: None,
            hidden: vec![32, 32],
            epochs: 100,
            batch_size: 32,
            lr: DEFAULT_LR,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.loss, self.power)
    }

    pub fn validate(&self) -> Result<()> {
        self.objective()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    /// `[input, hidden..., head width]` for a dataset.
    pub fn layer_sizes(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.loss.head().width(n_classes));
        sizes
    }
}

/// A trained model with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MlpModel,
    pub loss_trace: Vec<f64>,
}

impl FitResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace has one entry per epoch")
    }
}

/// Minibatch Adam over `config.epochs` epochs, reshuffling each epoch.
pub fn fit(mut model: MlpModel, dataset: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if dataset.n_classes() != model.n_classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model predicts {}",
            dataset.n_classes(),
            model.n_classes()
        )));
    }
    let objective = config.objective()?;
    let mut state = AdamState::new(&model, config.lr);
    let mut rng = Rng::new(derive_seed(&[config.seed, SHUFFLE_STREAM]));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let width = dataset.feature_dim();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut xb = Mat2::zeros((chunk.len(), width));
            let mut yb = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&dataset.features().row(i));
                yb.push(dataset.labels()[i]);
            }
            let (loss, grads) = model.forward_backward(xb.view(), &yb, objective)?;
            adam_step(&mut model, &grads, &mut state)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::invalid("training diverged to a non-finite loss"));
        }
        loss_trace.push(mean);
    }
    Ok(FitResult { model, loss_trace })
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Initializes a model sized for `dataset` from `config.seed` and fits it.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    let sizes = config.layer_sizes(dataset.feature_dim(), dataset.n_classes());
    let model = MlpModel::new(&sizes, config.loss.head(), derive_seed(&[config.seed, INIT_STREAM]))?;
    fit(model, dataset, config)
}

/// Convenience: predictions for every row of a dataset.
pub fn predict_dataset(model: &MlpModel, dataset: &Dataset) -> Result<Vec<ClassIndex>> {
    model.predict_labels(dataset.features().view())
}
