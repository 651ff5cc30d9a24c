//! Small feedforward softmax classifier with exact backpropagation.
//!
//! Weights are stored `inputs × outputs`, so a layer computes `z = a·W + b`
//! on row-major batches. Hidden layers apply the configured activation; the
//! final layer feeds a softmax. All arithmetic is `f64`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::EmptyInput(format!("dataset is {n}x{d}")));
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        if labels.len() != n {
            return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::InvalidArgument(format!("label {y} of sample {i} is not below {classes}")));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("feature entry {} of sample {} is not finite", pos % d, pos / d)));
        }
        Ok(Self { features, labels, classes })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Rows `indices` (in that order), keeping the class count.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiplies `grad` in place by the activation derivative at `z`.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        if let Activation::Relu = self {
            Zip::from(grad).and(z).for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of the classifier; gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
    activation: Activation,
}

impl ModelParams {
    /// All-zero parameters for layer sizes `[d, h1, ..., k]`.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weights: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Self { layers, activation })
    }

    /// Gaussian initialization scaled by fan-in, zero biases.
    pub fn init(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(sizes, activation)?;
        let mut rng = seeding::stream(seed, &[seeding::tag::INIT]);
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        for layer in &mut params.layers {
            let fan_in = layer.weights.nrows() as f64;
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            layer.weights.mapv_inplace(|_| normal.sample(&mut rng));
        }
        Ok(params)
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.ncols() {
                return Err(Error::Dimension(format!("layer {i}: bias length {} vs {} outputs", layer.bias.len(), layer.weights.ncols())));
            }
            if i > 0 && layers[i - 1].weights.ncols() != layer.weights.nrows() {
                return Err(Error::Dimension(format!("layer {i} expects {} inputs, previous layer emits {}", layer.weights.nrows(), layers[i - 1].weights.ncols())));
            }
        }
        let params = Self { layers, activation };
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("parameters contain non-finite entries".into()));
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weights.ncols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Length of a last-layer feature row: `(h + 1) * k`.
    pub fn last_layer_len(&self) -> usize {
        let last = self.layers.last().expect("at least one layer");
        (last.weights.nrows() + 1) * last.weights.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weights: Array2::zeros(l.weights.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
            activation: self.activation,
        }
    }

    /// Iterates every scalar: per layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension(format!("{} values for {} parameters", values.len(), self.num_params())));
        }
        for (dst, &src) in self.iter_mut().zip(values) {
            *dst = src;
        }
        Ok(())
    }

    /// Last layer flattened like a feature row: weights row-major, then bias.
    pub fn last_layer_flat(&self) -> Vec<f64> {
        let last = self.layers.last().expect("at least one layer");
        last.weights.iter().chain(last.bias.iter()).copied().collect()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!("input has {} columns, model expects {}", x.ncols(), self.input_dim())));
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("input entry {} of row {} is not finite", pos % x.ncols(), pos / x.ncols())));
        }
        Ok(())
    }
}

/// Supervision for a batch: integer labels or probability rows.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(&'a [usize]),
    Soft(ArrayView2<'a, f64>),
}

impl Target<'_> {
    fn check(&self, rows: usize, classes: usize) -> Result<()> {
        match self {
            Target::Hard(labels) => {
                if labels.len() != rows {
                    return Err(Error::Dimension(format!("{} labels for batch of {rows}", labels.len())));
                }
                if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
                    return Err(Error::InvalidArgument(format!("label {y} out of range for {classes} classes")));
                }
            }
            Target::Soft(t) => {
                if t.dim() != (rows, classes) {
                    return Err(Error::Dimension(format!("soft target is {:?}, expected {:?}", t.dim(), (rows, classes))));
                }
                for (i, row) in t.outer_iter().enumerate() {
                    let sum: f64 = row.sum();
                    if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::InvalidArgument(format!("soft target row {i} is not a distribution")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Dense target matrix.
    pub fn to_dense(&self, classes: usize) -> Array2<f64> {
        match self {
            Target::Hard(labels) => {
                let mut t = Array2::zeros((labels.len(), classes));
                for (i, &y) in labels.iter().enumerate() {
                    t[[i, y]] = 1.0;
                }
                t
            }
            Target::Soft(t) => t.to_owned(),
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Target::Hard(labels) => labels.len(),
            Target::Soft(t) => t.nrows(),
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input; `acts[l]` feeds layer `l`.
    pub acts: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.logits.nrows()
    }

    /// Input to the final linear layer.
    pub fn penultimate(&self) -> ArrayView2<'_, f64> {
        self.acts.last().expect("input is always cached").view()
    }

    /// Per-sample cross-entropy `-sum_c t_c log p_c`.
    pub fn sample_losses(&self, target: &Target<'_>) -> Vec<f64> {
        match target {
            Target::Hard(labels) => labels.iter().enumerate().map(|(i, &y)| -self.log_probs[[i, y]]).collect(),
            Target::Soft(t) => t
                .outer_iter()
                .zip(self.log_probs.outer_iter())
                .map(|(ti, lp)| -ti.iter().zip(lp).map(|(a, b)| a * b).sum::<f64>())
                .collect(),
        }
    }

    /// `softmax(z) - t`, the per-sample loss gradient w.r.t. logits.
    pub fn logit_residual(&self, target: &Target<'_>) -> Array2<f64> {
        let mut r = self.probs.clone();
        match target {
            Target::Hard(labels) => {
                for (i, &y) in labels.iter().enumerate() {
                    r[[i, y]] -= 1.0;
                }
            }
            Target::Soft(t) => r -= t,
        }
        r
    }

    fn check_against(&self, params: &ModelParams) -> Result<()> {
        let sizes = params.sizes();
        if self.acts.len() != sizes.len() - 1 {
            return Err(Error::Cache(format!("cache has {} layers, model has {}", self.acts.len(), sizes.len() - 1)));
        }
        for (l, a) in self.acts.iter().enumerate() {
            if a.ncols() != sizes[l] || a.nrows() != self.batch() {
                return Err(Error::Cache(format!("activation {l} is {:?}", a.dim())));
            }
        }
        if self.logits.ncols() != params.classes() {
            return Err(Error::Cache("logit width differs from model classes".into()));
        }
        Ok(())
    }
}

/// Row-wise stable softmax; returns `(probs, log_probs)`.
pub fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut log_probs = logits.clone();
    for mut row in log_probs.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - lse);
    }
    let probs = log_probs.mapv(f64::exp);
    (probs, log_probs)
}

pub fn forward(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    params.check_input(&x)?;
    let n_layers = params.layers.len();
    let mut acts = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    acts.push(x.to_owned());
    for layer in &params.layers[..n_layers - 1] {
        let z = acts.last().expect("nonempty").dot(&layer.weights) + &layer.bias;
        acts.push(params.activation.apply(&z));
        pre.push(z);
    }
    let last = &params.layers[n_layers - 1];
    let logits = acts.last().expect("nonempty").dot(&last.weights) + &last.bias;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logits overflowed".into()));
    }
    let (probs, log_probs) = softmax_rows(&logits);
    Ok(ForwardCache { acts, pre, logits, probs, log_probs })
}

/// Mean cross-entropy over the batch and the cache for backpropagation.
pub fn forward_loss(params: &ModelParams, x: ArrayView2<'_, f64>, target: Target<'_>) -> Result<(f64, ForwardCache)> {
    let cache = forward(params, x)?;
    target.check(cache.batch(), params.classes())?;
    let losses = cache.sample_losses(&target);
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok((loss, cache))
}

/// Gradient of the mean loss w.r.t. every parameter.
pub fn backward_grads(params: &ModelParams, cache: &ForwardCache, target: Target<'_>) -> Result<ModelParams> {
    cache.check_against(params)?;
    target.check(cache.batch(), params.classes())?;
    let scale = 1.0 / cache.batch() as f64;
    let weights = vec![scale; cache.batch()];
    backward_weighted(params, cache, &cache.logit_residual(&target), &weights)
}

/// Backpropagates per-sample logit gradients `dlogits`, each row scaled by
/// `row_weights[i]`, and sums over the batch.
pub fn backward_weighted(params: &ModelParams, cache: &ForwardCache, dlogits: &Array2<f64>, row_weights: &[f64]) -> Result<ModelParams> {
    cache.check_against(params)?;
    if dlogits.dim() != cache.logits.dim() || row_weights.len() != cache.batch() {
        return Err(Error::Dimension("logit gradient does not match cache".into()));
    }
    let mut delta = dlogits.clone();
    for (mut row, &w) in delta.outer_iter_mut().zip(row_weights) {
        row.mapv_inplace(|v| v * w);
    }
    let mut grads = params.zeros_like();
    for l in (0..params.layers.len()).rev() {
        let a = &cache.acts[l];
        grads.layers[l].weights = a.t().dot(&delta);
        grads.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&params.layers[l].weights.t());
            params.activation.backprop(&cache.pre[l - 1], &mut back);
            delta = back;
        }
    }
    Ok(grads)
}

/// Backpropagates per-sample logit gradients to the inputs (no batch averaging).
pub fn input_grad(params: &ModelParams, cache: &ForwardCache, dlogits: &Array2<f64>) -> Result<Array2<f64>> {
    cache.check_against(params)?;
    let mut delta = dlogits.clone();
    for l in (0..params.layers.len()).rev() {
        let mut back = delta.dot(&params.layers[l].weights.t());
        if l > 0 {
            params.activation.backprop(&cache.pre[l - 1], &mut back);
        }
        delta = back;
    }
    Ok(delta)
}

/// Rows `[vec(a_i ⊗ δ_i), δ_i]` for penultimate activations `a` and logit
/// gradients `δ`.
pub fn last_layer_rows(penultimate: ArrayView2<'_, f64>, dlogits: ArrayView2<'_, f64>) -> Array2<f64> {
    let (b, h) = penultimate.dim();
    let k = dlogits.ncols();
    let mut out = Array2::zeros((b, (h + 1) * k));
    for (i, mut row) in out.outer_iter_mut().enumerate() {
        let a = penultimate.row(i);
        let d = dlogits.row(i);
        for r in 0..h {
            let ar = a[r];
            let mut block = row.slice_mut(s![r * k..(r + 1) * k]);
            Zip::from(&mut block).and(&d).for_each(|o, &dv| *o = ar * dv);
        }
        row.slice_mut(s![h * k..]).assign(&d);
    }
    out
}

/// Per-sample gradients w.r.t. the final linear layer, one row per sample.
pub fn per_sample_last_layer_grad(params: &ModelParams, x: ArrayView2<'_, f64>, target: Target<'_>) -> Result<Array2<f64>> {
    let (_, cache) = forward_loss(params, x, target)?;
    Ok(last_layer_rows(cache.penultimate(), cache.logit_residual(&target).view()))
}

/// Gradient w.r.t. logits `z` of `-sum_c softmax(z)_c log q_c` with `q` held
/// fixed: `p ∘ (sum_c p_c log q_c - log q)`.
pub fn target_side_ce_dlogits(probs: ArrayView2<'_, f64>, fixed_log_q: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((mut o, p), lq) in out.outer_iter_mut().zip(probs.outer_iter()).zip(fixed_log_q.outer_iter()) {
        let mean: f64 = p.iter().zip(lq.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut o).and(&p).and(&lq).for_each(|o, &pc, &lqc| *o = pc * (mean - lqc));
    }
    out
}

/// Central differences of `f` at `theta`.
pub fn central_difference<F>(mut f: F, theta: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe)?;
        probe[i] = orig - step;
        let down = f(&probe)?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Central-difference estimate of the mean-loss gradient.
pub fn finite_diff_grad(params: &ModelParams, x: ArrayView2<'_, f64>, target: Target<'_>, step: f64) -> Result<ModelParams> {
    let mut work = params.clone();
    let flat = central_difference(
        |theta| {
            work.assign_flat(theta)?;
            Ok(forward_loss(&work, x, target)?.0)
        },
        &params.flatten(),
        step,
    )?;
    let mut grad = params.zeros_like();
    grad.assign_flat(&flat)?;
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm2(a).max(norm2(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Class with the highest logit per row (lowest index on ties).
pub fn predict(params: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let cache = forward(params, x)?;
    Ok(cache.logits.outer_iter().map(|row| argmax(row)).collect())
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
