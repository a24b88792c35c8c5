//! The embedding network: an MLP with ReLU hidden layers whose output is
//! normalised onto the unit sphere.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabeledPoint;
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, ensure_finite, l2_norm, spectral_norm, streams, Matrix, SeededRng};

/// Pre-normalisation magnitudes below this are treated as a broken model.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Network parameters. `weights[i]` maps layer `i` (width `layer_dims[i]`) to
/// layer `i + 1`. The same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn new(layer_dims: Vec<usize>, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        validate_dims(&layer_dims)?;
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::shape("layer count does not match layer_dims"));
        }
        for i in 0..layers {
            if weights[i].rows() != layer_dims[i + 1] || weights[i].cols() != layer_dims[i] {
                return Err(Error::shape(alloc::format!(
                    "weights[{i}] is {}x{}, expected {}x{}",
                    weights[i].rows(),
                    weights[i].cols(),
                    layer_dims[i + 1],
                    layer_dims[i]
                )));
            }
            if biases[i].len() != layer_dims[i + 1] {
                return Err(Error::shape(alloc::format!("biases[{i}] has wrong length")));
            }
            ensure_finite(&biases[i])?;
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_dims).expect("dims already validated")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("nonempty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// All parameter tensors in canonical order: weights by layer, then biases by layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.data())
            .chain(self.biases.iter().map(|b| b.as_slice()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.data_mut())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            axpy(alpha, b, a);
        }
    }

    /// 64-bit FNV-1a over dims and parameter bits; keys embedding caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for &d in &self.layer_dims {
            feed(d as u64);
        }
        for t in self.tensors() {
            for v in t {
                feed(v.to_bits());
            }
        }
        h
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid("layer_dims needs at least an input and an output width"));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer widths must be positive"));
    }
    Ok(())
}

/// He initialisation: weights ~ N(0, 2 / fan_in), biases zero.
pub fn init_params(layer_dims: &[usize], rng: SeededRng) -> Result<MlpParams> {
    let mut params = MlpParams::zeros(layer_dims)?;
    let mut rng = rng;
    for w in params.weights.iter_mut() {
        let std = libm::sqrt(2.0 / w.cols() as f64);
        for v in w.data_mut() {
            *v = std * rng.normal();
        }
    }
    Ok(params)
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
    pub pre_norm_embedding: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl ForwardTrace {
    pub fn pre_norm_magnitude(&self) -> f64 {
        l2_norm(&self.pre_norm_embedding)
    }
}

pub fn forward(params: &MlpParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::shape(alloc::format!(
            "input has length {}, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let layers = params.num_layers();
    let mut pre_activations = Vec::with_capacity(layers);
    let mut post_activations: Vec<Vec<f64>> = Vec::with_capacity(layers);
    for i in 0..layers {
        let input = if i == 0 { x } else { post_activations[i - 1].as_slice() };
        let mut z = params.weights[i].matvec(input);
        for (zi, bi) in z.iter_mut().zip(&params.biases[i]) {
            *zi += bi;
        }
        let a = if i + 1 < layers {
            z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
        } else {
            z.clone()
        };
        pre_activations.push(z);
        post_activations.push(a);
    }
    let pre_norm_embedding = post_activations[layers - 1].clone();
    let r = l2_norm(&pre_norm_embedding);
    if !r.is_finite() {
        return Err(Error::NonFinite);
    }
    if r < DEGENERATE_NORM {
        return Err(Error::DegenerateEmbedding);
    }
    let embedding = pre_norm_embedding.iter().map(|v| v / r).collect();
    Ok(ForwardTrace {
        input: x.to_vec(),
        pre_activations,
        post_activations,
        pre_norm_embedding,
        embedding,
    })
}

/// Unit-sphere embedding of `x`.
pub fn embed(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    forward(params, x).map(|t| t.embedding)
}

fn check_trace(params: &MlpParams, trace: &ForwardTrace, cotangent: &[f64]) -> Result<()> {
    if cotangent.len() != params.embedding_dim() {
        return Err(Error::shape("cotangent length differs from embedding dimension"));
    }
    if trace.input.len() != params.input_dim() || trace.pre_activations.len() != params.num_layers() {
        return Err(Error::shape("trace does not belong to these parameters"));
    }
    for (z, &d) in trace.pre_activations.iter().zip(&params.layer_dims[1..]) {
        if z.len() != d {
            return Err(Error::shape("trace does not belong to these parameters"));
        }
    }
    ensure_finite(cotangent)
}

/// Pulls a cotangent on the unit embedding back through `z ↦ z / |z|`.
fn through_normalisation(trace: &ForwardTrace, cotangent: &[f64]) -> Vec<f64> {
    let r = trace.pre_norm_magnitude();
    let e = &trace.embedding;
    let radial = dot(e, cotangent);
    cotangent
        .iter()
        .zip(e)
        .map(|(g, ei)| (g - ei * radial) / r)
        .collect()
}

/// Backward sweep. Calls `on_layer(i, g_pre, layer_input)` for every layer
/// from the top down; returns the input cotangent when `want_input` is set.
fn backward(
    params: &MlpParams,
    trace: &ForwardTrace,
    cotangent: &[f64],
    want_input: bool,
    mut on_layer: impl FnMut(usize, &[f64], &[f64]),
) -> Option<Vec<f64>> {
    let layers = params.num_layers();
    let mut g = through_normalisation(trace, cotangent);
    for i in (0..layers).rev() {
        let layer_input = if i == 0 {
            trace.input.as_slice()
        } else {
            trace.post_activations[i - 1].as_slice()
        };
        on_layer(i, &g, layer_input);
        if i == 0 {
            return want_input.then(|| params.weights[0].matvec_t(&g));
        }
        let mut below = params.weights[i].matvec_t(&g);
        for (b, z) in below.iter_mut().zip(&trace.pre_activations[i - 1]) {
            if *z <= 0.0 {
                *b = 0.0;
            }
        }
        g = below;
    }
    unreachable!("at least one layer")
}

/// `uᵀ ∂f(x)/∂x` for the sphere-normalised network.
pub fn vjp_input(params: &MlpParams, trace: &ForwardTrace, cotangent: &[f64]) -> Result<Vec<f64>> {
    check_trace(params, trace, cotangent)?;
    Ok(backward(params, trace, cotangent, true, |_, _, _| {}).expect("input requested"))
}

/// `uᵀ ∂f(x)/∂θ`, shaped like the parameters.
pub fn vjp_params(params: &MlpParams, trace: &ForwardTrace, cotangent: &[f64]) -> Result<MlpParams> {
    let mut grads = params.zeros_like();
    vjp_params_into(params, trace, cotangent, &mut grads)?;
    Ok(grads)
}

/// Accumulating form of [`vjp_params`].
pub fn vjp_params_into(
    params: &MlpParams,
    trace: &ForwardTrace,
    cotangent: &[f64],
    grads: &mut MlpParams,
) -> Result<()> {
    check_trace(params, trace, cotangent)?;
    if grads.layer_dims != params.layer_dims {
        return Err(Error::shape("gradient buffer has different layer dims"));
    }
    let MlpParams {
        weights: gw,
        biases: gb,
        ..
    } = grads;
    backward(params, trace, cotangent, false, |i, g, input| {
        let w = &mut gw[i];
        let cols = w.cols();
        let data = w.data_mut();
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, input, &mut data[r * cols..(r + 1) * cols]);
            }
        }
        for (b, &gr) in gb[i].iter_mut().zip(g) {
            *b += gr;
        }
    });
    Ok(())
}

/// ADAM with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64, weight_decay: f64) -> Self {
        Self {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            weight_decay,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps_hat: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps_hat = eps_hat;
        self
    }

    /// In-place update of `params`.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<()> {
        if grads.layer_dims != params.layer_dims || self.first_moment.layer_dims != params.layer_dims {
            return Err(Error::shape("optimizer state, params and grads disagree"));
        }
        if !grads.is_finite() {
            return Err(Error::Diverged);
        }
        let t = self.step + 1;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let decay = 1.0 - self.lr * self.weight_decay;
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps_hat);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first_moment.tensors_mut())
            .zip(self.second_moment.tensors_mut())
        {
            for i in 0..p.len() {
                if decay != 1.0 {
                    p[i] *= decay;
                }
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        self.step = t;
        if !params.is_finite() {
            return Err(Error::Diverged);
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::apply`].
pub fn adam_step(params: &MlpParams, grads: &MlpParams, state: &AdamState) -> Result<(MlpParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.apply(&mut p, grads)?;
    Ok((p, s))
}

/// Lipschitz constants of the embedding map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBound {
    /// Product of layer spectral norms: a global bound on the pre-normalisation map.
    pub unnormalized: f64,
    /// `unnormalized / min_pre_norm`. Only valid where the pre-normalisation
    /// magnitude stays at or above `min_pre_norm`.
    pub normalized: f64,
    pub min_pre_norm: f64,
}

/// Power-iteration steps used per layer by [`lipschitz_upper_bound`].
pub const LIPSCHITZ_POWER_ITERS: usize = 500;

pub fn lipschitz_upper_bound(params: &MlpParams, reference_points: &[LabeledPoint]) -> Result<LipschitzBound> {
    if reference_points.is_empty() {
        return Err(Error::insufficient("no reference points"));
    }
    let mut unnormalized = 1.0;
    for (i, w) in params.weights.iter().enumerate() {
        let rng = SeededRng::new(0, streams::SPECTRAL).substream(i as u64);
        unnormalized *= spectral_norm(w, LIPSCHITZ_POWER_ITERS, rng)?;
    }
    let mut min_pre_norm = f64::INFINITY;
    for p in reference_points {
        let r = forward(params, &p.x)?.pre_norm_magnitude();
        min_pre_norm = min_pre_norm.min(r);
    }
    Ok(LipschitzBound {
        unnormalized,
        normalized: unnormalized / min_pre_norm,
        min_pre_norm,
    })
}
