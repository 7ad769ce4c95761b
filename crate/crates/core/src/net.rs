//! Velocity-field regressor: a small MLP on `(x1, x2, t)` with manual
//! backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// Anything that can be integrated as a time-dependent 2D velocity field.
pub trait VelocityField: Sync {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2;

    fn velocity_batch(&self, xs: &[Vec2], t: f64) -> Vec<Vec2> {
        xs.iter().map(|&x| self.velocity(x, t)).collect()
    }
}

/// One affine layer; `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(other: &Layer) -> Self {
        Self {
            weight: Array2::zeros(other.weight.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.weight.dim() == other.weight.dim() && self.bias.len() == other.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldNet {
    layer_sizes: Vec<usize>,
    layers: Vec<Layer>,
    activation: Activation,
}

/// Parameter-shaped buffers (gradients, Adam moments).
pub type Gradients = Vec<Layer>;

impl VectorFieldNet {
    pub const INPUT_DIM: usize = 3;
    pub const OUTPUT_DIM: usize = 2;

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = Stream::new(seed);
        for layer in &mut net.layers {
            let (fan_out, fan_in) = layer.weight.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.uniform_range(-bound, bound));
        }
        Ok(net)
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::parameter("layer_sizes", "need at least one layer"));
        }
        let mut sizes = vec![layers[0].weight.ncols()];
        for (i, l) in layers.iter().enumerate() {
            if l.weight.ncols() != *sizes.last().unwrap() || l.bias.len() != l.weight.nrows() {
                return Err(Error::Shape(format!("layer {i} does not chain")));
            }
            sizes.push(l.weight.nrows());
        }
        validate_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            layers,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Gradients {
        self.layers.iter().map(Layer::zeros_like).collect()
    }

    /// `v(x, t)` for a single point.
    pub fn forward(&self, x: Vec2, t: f64) -> Vec2 {
        let mut h = vec![x[0], x[1], t];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<f64> = layer
                .weight
                .rows()
                .into_iter()
                .zip(layer.bias.iter())
                .map(|(row, b)| row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            if i != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            h = z;
        }
        [h[0], h[1]]
    }

    /// Batched forward on an `n x 3` input matrix; returns `n x 2`.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight.t());
            z += &layer.bias;
            if i != last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        h
    }

    /// Activations of every layer for `input`; index 0 is the input itself.
    /// Pre-activations are kept only when the activation derivative needs them.
    fn forward_trace(&self, input: Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let last = self.layers.len() - 1;
        let mut acts = vec![input];
        let mut pre = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weight.t());
            z += &layer.bias;
            if i != last {
                let act = self.activation;
                if act == Activation::Silu {
                    pre.push(z.clone());
                }
                z.mapv_inplace(|v| act.apply(v));
            }
            acts.push(z);
        }
        (acts, pre)
    }
}

impl VelocityField for VectorFieldNet {
    fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        self.forward(x, t)
    }

    fn velocity_batch(&self, xs: &[Vec2], t: f64) -> Vec<Vec2> {
        if xs.is_empty() {
            return Vec::new();
        }
        let input = Array2::from_shape_fn((xs.len(), 3), |(r, c)| if c < 2 { xs[r][c] } else { t });
        let out = self.forward_batch(input.view());
        out.rows().into_iter().map(|r| [r[0], r[1]]).collect()
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::parameter("layer_sizes", "need at least input and output sizes"));
    }
    if sizes[0] != VectorFieldNet::INPUT_DIM {
        return Err(Error::parameter("layer_sizes", "input size must be 3 (x1, x2, t)"));
    }
    if *sizes.last().unwrap() != VectorFieldNet::OUTPUT_DIM {
        return Err(Error::parameter("layer_sizes", "output size must be 2"));
    }
    if sizes.contains(&0) {
        return Err(Error::parameter("layer_sizes", "zero-width layer"));
    }
    Ok(())
}

/// Source/target pairs and interpolation times for one gradient step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainBatch {
    pub x0: Vec<Vec2>,
    pub x1: Vec<Vec2>,
    pub t: Vec<f64>,
}

impl TrainBatch {
    pub fn validate(&self) -> Result<()> {
        if self.x0.len() != self.x1.len() || self.x0.len() != self.t.len() {
            return Err(Error::Shape(format!(
                "batch lengths differ: x0 {}, x1 {}, t {}",
                self.x0.len(),
                self.x1.len(),
                self.t.len()
            )));
        }
        if self.x0.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        if let Some(t) = self.t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::parameter("t", format!("{t} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Mean squared error between `v(x_t, t)` and `x1 - x0` along the linear
/// interpolant, with exact gradients.
pub fn cfm_loss_and_grad(net: &VectorFieldNet, batch: &TrainBatch) -> Result<(f64, Gradients)> {
    batch.validate()?;
    let n = batch.len();
    let input = Array2::from_shape_fn((n, 3), |(r, c)| {
        let t = batch.t[r];
        match c {
            2 => t,
            _ => (1.0 - t) * batch.x0[r][c] + t * batch.x1[r][c],
        }
    });
    let target = Array2::from_shape_fn((n, 2), |(r, c)| batch.x1[r][c] - batch.x0[r][c]);

    let (acts, pre) = net.forward_trace(input);
    let out = acts.last().unwrap();
    let diff = out - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;

    let mut grads = net.zero_grads();
    let mut delta = diff * (2.0 / n as f64);
    for l in (0..net.layers.len()).rev() {
        grads[l].weight = delta.t().dot(&acts[l]);
        grads[l].bias = delta.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        let mut back = delta.dot(&net.layers[l].weight);
        let act = net.activation;
        match act {
            Activation::Tanh => {
                Zip::from(&mut back)
                    .and(&acts[l])
                    .for_each(|d, &a| *d *= act.derivative(0.0, a));
            }
            Activation::Silu => {
                Zip::from(&mut back)
                    .and(&pre[l - 1])
                    .and(&acts[l])
                    .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            }
        }
        delta = back;
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(net: &VectorFieldNet, config: AdamConfig) -> Self {
        Self {
            m: net.zero_grads(),
            v: net.zero_grads(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. Parameters are untouched if any gradient
/// entry is non-finite.
pub fn adam_step(net: &mut VectorFieldNet, state: &mut AdamState, grads: &[Layer]) -> Result<()> {
    if grads.len() != net.layers.len()
        || grads.iter().zip(&net.layers).any(|(g, l)| !g.same_shape(l))
    {
        return Err(Error::Shape("gradients do not match network parameters".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.weight.iter().chain(g.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient in layer {i}")));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, m), v), g) in net
        .layers
        .iter_mut()
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
        .zip(grads)
    {
        Zip::from(&mut layer.weight)
            .and(&mut m.weight)
            .and(&mut v.weight)
            .and(&g.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut layer.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .and(&g.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Layer], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.weight.iter().chain(g.bias.iter()))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.weight.mapv_inplace(|v| v * s);
            g.bias.mapv_inplace(|v| v * s);
        }
    }
    norm
}
