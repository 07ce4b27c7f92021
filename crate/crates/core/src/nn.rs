//! Minimal dense-network substrate: explicit forward/backward passes over
//! fully connected layers, He-normal initialization, bias-corrected Adam,
//! and the reconstruction losses used for anomaly scoring.
//!
//! Everything is `f64` and deterministic given the caller's RNG; there is no
//! autodiff. The topologies involved are small MLPs, so weights live in flat
//! row-major `Vec<f64>` per layer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Negative slope of the leaky ReLU.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Clamp bound keeping cross-entropy away from log(0).
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("layer widths must be >= 1 (got {input}x{output})")]
    BadLayerSpec { input: usize, output: usize },
    #[error("layer {index} expects input width {expected}, previous layer emits {got}")]
    ShapeChain {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("input length {got} does not match network input width {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("forward cache does not match this network")]
    CacheMismatch,
    #[error("non-finite gradient; update aborted")]
    NonFiniteGradient,
    #[error("cross-entropy target out of [0,1] at index {index}: {value}")]
    BceDomain { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_RELU_SLOPE * z
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`, where `a = apply(z)` is already known.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Result<Self, NnError> {
        if input_width == 0 || output_width == 0 {
            return Err(NnError::BadLayerSpec {
                input: input_width,
                output: output_width,
            });
        }
        Ok(Self {
            input_width,
            output_width,
            activation,
        })
    }
}

/// One dense layer; weights are row-major `(output_width, input_width)`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// He-normal weights (zero-mean, variance `2 / input_width`) and zero biases.
pub fn he_normal_init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Layer {
    let std = (2.0 / spec.input_width as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("std is positive");
    let w = (0..spec.output_width * spec.input_width)
        .map(|_| normal.sample(rng))
        .collect();
    let b = vec![0.0; spec.output_width];
    Layer { spec, w, b }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer values captured during a forward pass, sufficient for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    zs: Vec<Vec<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Per-layer pre-activations. Gradient checkers use these to reject
    /// inputs whose pass sits within the finite-difference step of a
    /// piecewise-linear kink, where central differences are invalid.
    pub fn preactivations(&self) -> &[Vec<f64>] {
        &self.zs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub d_input: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrad {
                    dw: vec![0.0; l.w.len()],
                    db: vec![0.0; l.b.len()],
                })
                .collect(),
            d_input: vec![0.0; mlp.input_width()],
        }
    }

    /// Accumulates `other * scale` into `self` (input gradient included).
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.layers.iter_mut().zip(other.layers.iter()) {
            for (d, s) in dst.dw.iter_mut().zip(src.dw.iter()) {
                *d += s * scale;
            }
            for (d, s) in dst.db.iter_mut().zip(src.db.iter()) {
                *d += s * scale;
            }
        }
        for (d, s) in self.d_input.iter_mut().zip(other.d_input.iter()) {
            *d += s * scale;
        }
    }

    /// Flat parameter-order view matching [`Mlp::param`].
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for lg in &self.layers {
            if i < lg.dw.len() {
                return lg.dw[i];
            }
            i -= lg.dw.len();
            if i < lg.db.len() {
                return lg.db[i];
            }
            i -= lg.db.len();
        }
        panic!("gradient index {index} out of range");
    }
}

impl Mlp {
    fn validate_chain(layers: &[Layer]) -> Result<(), NnError> {
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[1].spec.input_width != pair[0].spec.output_width {
                return Err(NnError::ShapeChain {
                    index: idx + 1,
                    expected: pair[1].spec.input_width,
                    got: pair[0].spec.output_width,
                });
            }
        }
        Ok(())
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        assert!(!layers.is_empty(), "network needs at least one layer");
        Self::validate_chain(&layers)?;
        Ok(Self { layers })
    }

    /// All-zero parameters with the given chain of specs.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .map(|&spec| Layer {
                spec,
                w: vec![0.0; spec.output_width * spec.input_width],
                b: vec![0.0; spec.output_width],
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn he_init<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NnError> {
        let layers = specs.iter().map(|&s| he_normal_init(s, rng)).collect();
        Self::from_layers(layers)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().spec.output_width
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameter access, layer by layer, weights then biases.
    pub fn param(&self, index: usize) -> f64 {
        let mut i = index;
        for l in &self.layers {
            if i < l.w.len() {
                return l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w[i] = value;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = value;
                return;
            }
            i -= l.b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// Forward pass returning the output and a cache for [`Mlp::backward`].
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if x.len() != self.input_width() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_width(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let n_out = layer.spec.output_width;
            let n_in = layer.spec.input_width;
            let mut z = layer.b.clone();
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &layer.w[i * n_in..(i + 1) * n_in];
                let mut acc = 0.0;
                for (w, aj) in row.iter().zip(a.iter()) {
                    acc += w * aj;
                }
                *zi += acc;
            }
            let out: Vec<f64> = z.iter().map(|&zi| layer.spec.activation.apply(zi)).collect();
            inputs.push(std::mem::replace(&mut a, out.clone()));
            zs.push(z);
            outputs.push(out);
            debug_assert_eq!(a.len(), n_out);
        }
        let y = a;
        Ok((y, ForwardCache { inputs, zs, outputs }))
    }

    /// Output without the cache.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Backpropagates `upstream = dL/d(output)` through the cached pass.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Gradients, NnError> {
        if cache.inputs.len() != self.layers.len() || upstream.len() != self.output_width() {
            return Err(NnError::CacheMismatch);
        }
        for (layer, input) in self.layers.iter().zip(cache.inputs.iter()) {
            if input.len() != layer.spec.input_width {
                return Err(NnError::CacheMismatch);
            }
        }
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.to_vec();
        for (layer, (input, (z, out))) in self
            .layers
            .iter()
            .zip(
                cache
                    .inputs
                    .iter()
                    .zip(cache.zs.iter().zip(cache.outputs.iter())),
            )
            .rev()
        {
            let n_in = layer.spec.input_width;
            // dz = delta ⊙ act'(z)
            let dz: Vec<f64> = delta
                .iter()
                .zip(z.iter().zip(out.iter()))
                .map(|(&d, (&zi, &ai))| d * layer.spec.activation.derivative(zi, ai))
                .collect();
            let mut dw = vec![0.0; layer.w.len()];
            for (i, &dzi) in dz.iter().enumerate() {
                let row = &mut dw[i * n_in..(i + 1) * n_in];
                for (dwj, &aj) in row.iter_mut().zip(input.iter()) {
                    *dwj = dzi * aj;
                }
            }
            // delta for the previous layer: W^T dz
            let mut prev = vec![0.0; n_in];
            for (i, &dzi) in dz.iter().enumerate() {
                let row = &layer.w[i * n_in..(i + 1) * n_in];
                for (pj, &wij) in prev.iter_mut().zip(row.iter()) {
                    *pj += wij * dzi;
                }
            }
            grads.push(LayerGrad { dw, db: dz });
            delta = prev;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            d_input: delta,
        })
    }
}

/// Bias-corrected Adam over an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: Vec<LayerMoments>,
}

#[derive(Debug, Clone)]
struct LayerMoments {
    mw: Vec<f64>,
    vw: Vec<f64>,
    mb: Vec<f64>,
    vb: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, model: &Mlp) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| LayerMoments {
                mw: vec![0.0; l.w.len()],
                vw: vec![0.0; l.w.len()],
                mb: vec![0.0; l.b.len()],
                vb: vec![0.0; l.b.len()],
            })
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts without touching
    /// parameters or optimizer state.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        let finite = grads
            .layers
            .iter()
            .all(|lg| lg.dw.iter().chain(lg.db.iter()).all(|g| g.is_finite()));
        if !finite {
            return Err(NnError::NonFiniteGradient);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((layer, lm), lg) in model
            .layers_mut()
            .iter_mut()
            .zip(self.moments.iter_mut())
            .zip(grads.layers.iter())
        {
            update_slice(
                &mut layer.w,
                &mut lm.mw,
                &mut lm.vw,
                &lg.dw,
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_slice(
                &mut layer.b,
                &mut lm.mb,
                &mut lm.vb,
                &lg.db,
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Mse,
}

/// Reconstruction loss summed over dimensions.
///
/// `Mse` is the sum of squared differences. `Bce` is the cross-entropy with
/// `x_hat` clamped into `[BCE_EPS, 1 - BCE_EPS]`; targets must lie in [0,1].
pub fn recon_loss(x: &[f64], x_hat: &[f64], kind: LossKind) -> Result<f64, NnError> {
    assert_eq!(x.len(), x_hat.len(), "reconstruction length mismatch");
    match kind {
        LossKind::Mse => Ok(x
            .iter()
            .zip(x_hat.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()),
        LossKind::Bce => {
            let mut total = 0.0;
            for (i, (&xi, &hi)) in x.iter().zip(x_hat.iter()).enumerate() {
                if !(0.0..=1.0).contains(&xi) {
                    return Err(NnError::BceDomain { index: i, value: xi });
                }
                let h = hi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                total -= xi * h.ln() + (1.0 - xi) * (1.0 - h).ln();
            }
            Ok(total)
        }
    }
}

/// d(recon_loss)/d(x_hat), consistent with the clamping in [`recon_loss`].
pub fn recon_loss_grad(x: &[f64], x_hat: &[f64], kind: LossKind) -> Vec<f64> {
    match kind {
        LossKind::Mse => x
            .iter()
            .zip(x_hat.iter())
            .map(|(a, b)| 2.0 * (b - a))
            .collect(),
        LossKind::Bce => x
            .iter()
            .zip(x_hat.iter())
            .map(|(&xi, &hi)| {
                if hi <= BCE_EPS || hi >= 1.0 - BCE_EPS {
                    0.0 // clamp is saturated; the loss is locally flat in x_hat
                } else {
                    (hi - xi) / (hi * (1.0 - hi))
                }
            })
            .collect(),
    }
}

/// Loss of the network reconstruction `model(x)` against `target`.
fn model_loss(model: &Mlp, x: &[f64], target: &[f64], kind: LossKind) -> Result<f64, NnError> {
    let y = model.infer(x)?;
    recon_loss(target, &y, kind)
}

/// Central finite differences of `model_loss` with respect to every parameter.
pub fn numeric_gradients(
    model: &Mlp,
    x: &[f64],
    target: &[f64],
    kind: LossKind,
    fd_step: f64,
) -> Result<Vec<f64>, NnError> {
    let mut probe = model.clone();
    let n = model.param_count();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let original = probe.param(i);
        probe.set_param(i, original + fd_step);
        let plus = model_loss(&probe, x, target, kind)?;
        probe.set_param(i, original - fd_step);
        let minus = model_loss(&probe, x, target, kind)?;
        probe.set_param(i, original);
        grads.push((plus - minus) / (2.0 * fd_step));
    }
    Ok(grads)
}

/// Analytic gradients of `model_loss` with respect to every parameter, in
/// the flat order of [`Mlp::param`].
pub fn analytic_gradients(
    model: &Mlp,
    x: &[f64],
    target: &[f64],
    kind: LossKind,
) -> Result<Vec<f64>, NnError> {
    let (y, cache) = model.forward(x)?;
    let upstream = recon_loss_grad(target, &y, kind);
    let grads = model.backward(&cache, &upstream)?;
    Ok((0..model.param_count()).map(|i| grads.param(i)).collect())
}

/// Guarded relative error with an explicit floor: magnitudes below the
/// floor compare in absolute terms, so all-zero cases stay finite and
/// finite-difference roundoff on near-zero gradients is not mistaken for a
/// gradient bug.
pub fn relative_error_with_floor(a: f64, n: f64, floor: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(floor);
    (a - n).abs() / denom
}

/// [`relative_error_with_floor`] with the default floor for O(1) losses.
pub fn relative_error(a: f64, n: f64) -> f64 {
    relative_error_with_floor(a, n, 1e-6)
}

/// Worst analytic-vs-numeric discrepancy across all parameters.
pub fn grad_check(
    model: &Mlp,
    x: &[f64],
    target: &[f64],
    kind: LossKind,
    fd_step: f64,
) -> Result<f64, NnError> {
    let analytic = analytic_gradients(model, x, target, kind)?;
    let numeric = numeric_gradients(model, x, target, kind, fd_step)?;
    Ok(analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
