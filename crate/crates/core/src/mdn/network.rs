//! Feed-forward network with rectifier hidden layers and three linear heads
//! (pose, shape coefficients, category logits), its loss and the analytic
//! gradient of the mean batch loss.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{
    head_transform, log_normal_diag, log_sum_exp, mixture_head_len, pose_loss,
    variance_activation, variance_activation_grad, GmmParams, POSE_DIM,
};
use crate::error::{Error, Result};
use crate::geometry::{DepthImage, RotVec, MASKED};
use crate::shapespace::Coefficients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// Gaussian-mixture pose head trained by negative log-likelihood.
    Mdn,
    /// Direct axis-angle regression trained by squared error.
    Point,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdn" => Ok(HeadMode::Mdn),
            "point" => Ok(HeadMode::Point),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Side of the square, downsampled network input.
    pub input_side: usize,
    pub hidden_sizes: Vec<usize>,
    pub components: usize,
    pub shape_dim: usize,
    pub n_categories: usize,
    pub lambda_pose: f64,
    pub lambda_shape: f64,
    pub lambda_class: f64,
    pub mode: HeadMode,
    pub elu_alpha: f64,
    pub var_epsilon: f64,
    /// Depth of the object center, used to normalize input depths.
    pub object_distance: f64,
}

impl NetworkConfig {
    pub fn new(shape_dim: usize, n_categories: usize) -> Self {
        Self {
            input_side: 32,
            hidden_sizes: vec![256, 256],
            components: 5,
            shape_dim,
            n_categories,
            lambda_pose: 1.0,
            lambda_shape: 1.0,
            lambda_class: 1.0,
            mode: HeadMode::Mdn,
            elu_alpha: 1.0,
            var_epsilon: 1e-6,
            object_distance: 2.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0
            || self.hidden_sizes.is_empty()
            || self.hidden_sizes.contains(&0)
            || self.components == 0
            || self.shape_dim == 0
            || self.n_categories == 0
        {
            return Err(Error::invalid("network sizes must be positive"));
        }
        for l in [self.lambda_pose, self.lambda_shape, self.lambda_class] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid("loss weights must be non-negative"));
            }
        }
        if !(self.elu_alpha > 0.0 && self.var_epsilon > 0.0) {
            return Err(Error::invalid("elu_alpha and var_epsilon must be positive"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_side * self.input_side
    }

    pub fn pose_head_len(&self) -> usize {
        match self.mode {
            HeadMode::Mdn => mixture_head_len(self.components),
            HeadMode::Point => POSE_DIM,
        }
    }
}

/// Shape of one dense layer inside the flat parameter vector. The weight
/// matrix (`rows × cols`, column-major) is followed by `rows` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights<'a>(&self, params: &'a [f64]) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&params[self.offset..self.offset + self.weight_len()], self.rows, self.cols)
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.weight_len();
        &params[start..start + self.rows]
    }
}

/// Hidden layers in order, then the `pose`, `shape` and `class` heads.
pub fn layer_layout(cfg: &NetworkConfig) -> Vec<LayerShape> {
    let mut layers = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, rows: usize, cols: usize, layers: &mut Vec<LayerShape>| {
        layers.push(LayerShape { name, rows, cols, offset });
        offset += rows * cols + rows;
    };
    let mut fan_in = cfg.input_len();
    for (i, &h) in cfg.hidden_sizes.iter().enumerate() {
        push(format!("hidden{i}"), h, fan_in, &mut layers);
        fan_in = h;
    }
    push("pose".into(), cfg.pose_head_len(), fan_in, &mut layers);
    push("shape".into(), cfg.shape_dim, fan_in, &mut layers);
    push("class".into(), cfg.n_categories, fan_in, &mut layers);
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

impl NetworkWeights {
    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = layer_layout(cfg);
        let total = layers.iter().map(LayerShape::len).sum();
        Ok(Self {
            layers,
            params: vec![0.0; total],
        })
    }

    pub fn from_params(cfg: &NetworkConfig, params: Vec<f64>) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        Error::check_len(w.params.len(), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite weight".into()));
        }
        w.params = params;
        Ok(w)
    }

    /// He-uniform hidden layers; small heads so the initial mixture is
    /// near-uniform with unit variances and spread-out means.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(cfg)?;
        let n_hidden = cfg.hidden_sizes.len();
        let c = cfg.components;
        for (li, layer) in w.layers.iter().enumerate() {
            let range = (6.0 / layer.cols as f64).sqrt();
            let scale = if li < n_hidden { 1.0 } else { 0.1 };
            let ws = &mut w.params[layer.offset..layer.offset + layer.weight_len()];
            for v in ws.iter_mut() {
                *v = scale * rng.random_range(-range..range);
            }
            if li == n_hidden && cfg.mode == HeadMode::Mdn {
                let start = layer.offset + layer.weight_len();
                for v in &mut w.params[start + c..start + 4 * c] {
                    *v = rng.random_range(-1.5..1.5);
                }
            }
        }
        Ok(w)
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Rounds every parameter to the nearest `f32`, matching what the
    /// weight file stores.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.layers != layer_layout(cfg) {
            return Err(Error::invalid("weights do not match the network config"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PosePrediction {
    Mixture(GmmParams),
    Point(RotVec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub pose: PosePrediction,
    pub shape_coeffs: Coefficients,
    pub category_probs: Vec<f64>,
}

impl PredictionOutput {
    pub fn mixture(&self) -> Option<&GmmParams> {
        match &self.pose {
            PosePrediction::Mixture(g) => Some(g),
            PosePrediction::Point(_) => None,
        }
    }
}

/// Supervision for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub pose: RotVec,
    pub shape_coeffs: Coefficients,
    pub category: usize,
}

/// A preprocessed network input with its supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub target: Target,
}

/// Downsamples a depth image to `side × side` by box averaging. Background
/// maps to 0, valid depths to `(depth − object_distance + 1) / 2` clamped
/// to `[0, 1]`.
pub fn preprocess(image: &DepthImage, side: usize, object_distance: f64) -> Result<Vec<f64>> {
    let (w, h) = (image.width(), image.height());
    if side == 0 || side > w || side > h {
        return Err(Error::invalid(format!(
            "cannot downsample {w}x{h} image to {side}x{side}"
        )));
    }
    let norm = |d: f32| -> f64 {
        if d == MASKED {
            0.0
        } else {
            ((d as f64 - object_distance + 1.0) / 2.0).clamp(0.0, 1.0)
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        let (r0, r1) = (r * h / side, (r + 1) * h / side);
        for c in 0..side {
            let (c0, c1) = (c * w / side, (c + 1) * w / side);
            let mut acc = 0.0;
            for rr in r0..r1 {
                for cc in c0..c1 {
                    acc += norm(image.at(rr, cc));
                }
            }
            out.push(acc / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    Ok(out)
}

struct ForwardCache {
    /// Layer inputs: `acts[0]` is the batch input, `acts[l + 1]` the
    /// rectified output of hidden layer `l`.
    acts: Vec<DMatrix<f64>>,
    /// Hidden pre-activations.
    pre: Vec<DMatrix<f64>>,
    pose: DMatrix<f64>,
    shape: DMatrix<f64>,
    class: DMatrix<f64>,
}

fn affine(layer: &LayerShape, params: &[f64], input: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = layer.weights(params) * input;
    let b = layer.bias(params);
    for mut col in z.column_iter_mut() {
        for (v, bi) in col.iter_mut().zip(b) {
            *v += bi;
        }
    }
    z
}

fn forward_batch(weights: &NetworkWeights, cfg: &NetworkConfig, inputs: DMatrix<f64>) -> Result<ForwardCache> {
    let n_hidden = cfg.hidden_sizes.len();
    let params = &weights.params;
    let mut acts = vec![inputs];
    let mut pre = Vec::with_capacity(n_hidden);
    for layer in &weights.layers[..n_hidden] {
        let z = affine(layer, params, acts.last().expect("input"));
        let a = z.map(|v| v.max(0.0));
        pre.push(z);
        acts.push(a);
    }
    let last = acts.last().expect("hidden");
    let pose = affine(&weights.layers[n_hidden], params, last);
    let shape = affine(&weights.layers[n_hidden + 1], params, last);
    let class = affine(&weights.layers[n_hidden + 2], params, last);
    for m in [&pose, &shape, &class] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure("non-finite activation".into()));
        }
    }
    Ok(ForwardCache {
        acts,
        pre,
        pose,
        shape,
        class,
    })
}

fn input_matrix(cfg: &NetworkConfig, inputs: &[&[f64]]) -> Result<DMatrix<f64>> {
    let n = cfg.input_len();
    for x in inputs {
        Error::check_len(n, x.len())?;
    }
    Ok(DMatrix::from_fn(n, inputs.len(), |r, c| inputs[c][r]))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

fn output_from_columns(cfg: &NetworkConfig, pose: &[f64], shape: &[f64], class: &[f64]) -> Result<PredictionOutput> {
    let pose = match cfg.mode {
        HeadMode::Mdn => PosePrediction::Mixture(head_transform(
            pose,
            cfg.components,
            cfg.elu_alpha,
            cfg.var_epsilon,
        )?),
        HeadMode::Point => PosePrediction::Point(RotVec([pose[0], pose[1], pose[2]])),
    };
    Ok(PredictionOutput {
        pose,
        shape_coeffs: Coefficients(shape.to_vec()),
        category_probs: softmax(class),
    })
}

/// Runs the network on an already-preprocessed input vector.
pub fn forward_features(weights: &NetworkWeights, input: &[f64], cfg: &NetworkConfig) -> Result<PredictionOutput> {
    weights.check(cfg)?;
    let cache = forward_batch(weights, cfg, input_matrix(cfg, &[input])?)?;
    output_from_columns(
        cfg,
        cache.pose.column(0).as_slice(),
        cache.shape.column(0).as_slice(),
        cache.class.column(0).as_slice(),
    )
}

pub fn forward(weights: &NetworkWeights, image: &DepthImage, cfg: &NetworkConfig) -> Result<PredictionOutput> {
    let input = preprocess(image, cfg.input_side, cfg.object_distance)?;
    forward_features(weights, &input, cfg)
}

/// `λ_p·pose + λ_s·‖ĉ − c‖² + λ_c·(−ln p[true])`. In point mode the pose
/// term is the squared error of the three pose parameters.
pub fn total_loss(pred: &PredictionOutput, target: &Target, cfg: &NetworkConfig) -> Result<f64> {
    Error::check_len(target.shape_coeffs.len(), pred.shape_coeffs.len())?;
    if target.category >= pred.category_probs.len() {
        return Err(Error::invalid("category index out of range"));
    }
    let y = target.pose.0;
    let pose = match &pred.pose {
        PosePrediction::Mixture(g) => pose_loss(&y, g),
        PosePrediction::Point(p) => (0..POSE_DIM).map(|j| (p.0[j] - y[j]).powi(2)).sum(),
    };
    let shape: f64 = pred
        .shape_coeffs
        .as_slice()
        .iter()
        .zip(target.shape_coeffs.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let class = -pred.category_probs[target.category].ln();
    Ok(cfg.lambda_pose * pose + cfg.lambda_shape * shape + cfg.lambda_class * class)
}

/// Loss of one sample from raw head outputs and its gradient with respect to
/// those outputs.
fn sample_loss_grad(
    cfg: &NetworkConfig,
    pose: &[f64],
    shape: &[f64],
    class: &[f64],
    target: &Target,
    g_pose: &mut [f64],
    g_shape: &mut [f64],
    g_class: &mut [f64],
) -> f64 {
    let y = target.pose.0;
    let pose_term = match cfg.mode {
        HeadMode::Mdn => {
            let c = cfg.components;
            let logits = &pose[..c];
            let lse_pi = log_sum_exp(logits);
            let mut var = vec![[0.0; POSE_DIM]; c];
            let mut means = vec![[0.0; POSE_DIM]; c];
            let mut log_terms = vec![0.0; c];
            for i in 0..c {
                for j in 0..POSE_DIM {
                    means[i][j] = pose[c + POSE_DIM * i + j];
                    var[i][j] = variance_activation(pose[4 * c + POSE_DIM * i + j], cfg.elu_alpha, cfg.var_epsilon);
                }
                log_terms[i] = logits[i] - lse_pi + log_normal_diag(&y, &means[i], &var[i]);
            }
            let lse = log_sum_exp(&log_terms);
            for i in 0..c {
                let resp = (log_terms[i] - lse).exp();
                let weight = (logits[i] - lse_pi).exp();
                g_pose[i] = cfg.lambda_pose * (weight - resp);
                for j in 0..POSE_DIM {
                    let d = y[j] - means[i][j];
                    let v = var[i][j];
                    g_pose[c + POSE_DIM * i + j] = cfg.lambda_pose * (-resp * d / v);
                    let dl_dvar = resp * 0.5 * (1.0 / v - d * d / (v * v));
                    let z = pose[4 * c + POSE_DIM * i + j];
                    g_pose[4 * c + POSE_DIM * i + j] =
                        cfg.lambda_pose * dl_dvar * variance_activation_grad(z, cfg.elu_alpha);
                }
            }
            -lse
        }
        HeadMode::Point => {
            let mut acc = 0.0;
            for j in 0..POSE_DIM {
                let d = pose[j] - y[j];
                acc += d * d;
                g_pose[j] = cfg.lambda_pose * 2.0 * d;
            }
            acc
        }
    };

    let mut shape_term = 0.0;
    for ((g, p), t) in g_shape.iter_mut().zip(shape).zip(target.shape_coeffs.as_slice()) {
        let d = p - t;
        shape_term += d * d;
        *g = cfg.lambda_shape * 2.0 * d;
    }

    let probs = softmax(class);
    let lse = log_sum_exp(class);
    let class_term = lse - class[target.category];
    for (k, g) in g_class.iter_mut().enumerate() {
        let onehot = if k == target.category { 1.0 } else { 0.0 };
        *g = cfg.lambda_class * (probs[k] - onehot);
    }

    cfg.lambda_pose * pose_term + cfg.lambda_shape * shape_term + cfg.lambda_class * class_term
}

fn check_target(cfg: &NetworkConfig, t: &Target) -> Result<()> {
    Error::check_len(cfg.shape_dim, t.shape_coeffs.len())?;
    if t.category >= cfg.n_categories {
        return Err(Error::invalid(format!("category {} out of range", t.category)));
    }
    if !t.pose.is_finite() {
        return Err(Error::invalid("non-finite pose target"));
    }
    Ok(())
}

/// Mean loss over the batch and its exact gradient with respect to every
/// parameter, in the flat parameter layout.
pub fn loss_gradient(weights: &NetworkWeights, batch: &[TrainingSample], cfg: &NetworkConfig) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; weights.len()];
    let loss = accumulate_gradient(weights, batch, cfg, &mut grad)?;
    Ok((loss, grad))
}

/// Mean batch loss; writes the gradient into `grad` (overwriting it).
pub(crate) fn accumulate_gradient(
    weights: &NetworkWeights,
    batch: &[TrainingSample],
    cfg: &NetworkConfig,
    grad: &mut [f64],
) -> Result<f64> {
    weights.check(cfg)?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Error::check_len(weights.len(), grad.len())?;
    for s in batch {
        check_target(cfg, &s.target)?;
    }
    let inputs: Vec<&[f64]> = batch.iter().map(|s| s.input.as_slice()).collect();
    let cache = forward_batch(weights, cfg, input_matrix(cfg, &inputs)?)?;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;

    let mut g_pose = DMatrix::zeros(cache.pose.nrows(), b);
    let mut g_shape = DMatrix::zeros(cache.shape.nrows(), b);
    let mut g_class = DMatrix::zeros(cache.class.nrows(), b);
    let mut loss = 0.0;
    for (k, s) in batch.iter().enumerate() {
        loss += sample_loss_grad(
            cfg,
            cache.pose.column(k).as_slice(),
            cache.shape.column(k).as_slice(),
            cache.class.column(k).as_slice(),
            &s.target,
            g_pose.column_mut(k).as_mut_slice(),
            g_shape.column_mut(k).as_mut_slice(),
            g_class.column_mut(k).as_mut_slice(),
        );
    }
    if !loss.is_finite() {
        return Err(Error::NumericFailure("non-finite loss".into()));
    }
    g_pose *= inv_b;
    g_shape *= inv_b;
    g_class *= inv_b;

    let n_hidden = cfg.hidden_sizes.len();
    let params = &weights.params;
    let last = &cache.acts[n_hidden];
    let mut d_hidden: Option<DMatrix<f64>> = None;
    for (head, g) in [(n_hidden, &g_pose), (n_hidden + 1, &g_shape), (n_hidden + 2, &g_class)] {
        let layer = &weights.layers[head];
        write_layer_grad(layer, g, last, grad);
        let back = layer.weights(params).tr_mul(g);
        d_hidden = Some(match d_hidden {
            Some(acc) => acc + back,
            None => back,
        });
    }
    let mut delta = d_hidden.expect("three heads");
    for l in (0..n_hidden).rev() {
        delta.zip_apply(&cache.pre[l], |d, z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let layer = &weights.layers[l];
        write_layer_grad(layer, &delta, &cache.acts[l], grad);
        if l > 0 {
            delta = layer.weights(params).tr_mul(&delta);
        }
    }
    Ok(loss * inv_b)
}

fn write_layer_grad(layer: &LayerShape, delta: &DMatrix<f64>, input: &DMatrix<f64>, grad: &mut [f64]) {
    let gw = delta * input.transpose();
    grad[layer.offset..layer.offset + layer.weight_len()].copy_from_slice(gw.as_slice());
    let gb: DVector<f64> = delta.column_sum();
    let start = layer.offset + layer.weight_len();
    grad[start..start + layer.rows].copy_from_slice(gb.as_slice());
}

/// Mean loss over a set of samples, evaluated in chunks.
pub fn mean_loss(weights: &NetworkWeights, samples: &[TrainingSample], cfg: &NetworkConfig) -> Result<f64> {
    weights.check(cfg)?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|s| s.input.as_slice()).collect();
        let cache = forward_batch(weights, cfg, input_matrix(cfg, &inputs)?)?;
        for (k, s) in chunk.iter().enumerate() {
            check_target(cfg, &s.target)?;
            let pred = output_from_columns(
                cfg,
                cache.pose.column(k).as_slice(),
                cache.shape.column(k).as_slice(),
                cache.class.column(k).as_slice(),
            )?;
            total += total_loss(&pred, &s.target, cfg)?;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Predictions for many preprocessed inputs at once.
pub fn forward_many(weights: &NetworkWeights, inputs: &[&[f64]], cfg: &NetworkConfig) -> Result<Vec<PredictionOutput>> {
    weights.check(cfg)?;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(256) {
        let cache = forward_batch(weights, cfg, input_matrix(cfg, chunk)?)?;
        for k in 0..chunk.len() {
            out.push(output_from_columns(
                cfg,
                cache.pose.column(k).as_slice(),
                cache.shape.column(k).as_slice(),
                cache.class.column(k).as_slice(),
            )?);
        }
    }
    Ok(out)
}
