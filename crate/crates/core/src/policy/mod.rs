//! Shared Gaussian policy with a value head.
//!
//! The trunk is a stack of tanh dense layers (35 -> 256 -> 256 -> 256 by default).
//! Two heads read the last hidden layer: a tanh-squashed action mean (steering,
//! throttle) and a scalar state value. The log standard deviation is a free,
//! state-independent parameter per action dimension.
//!
//! All parameters live in one flat vector so optimizers, checkpoints and
//! finite-difference checks can treat them uniformly; [`Layout`] maps layers to
//! offsets inside it.

pub mod checkpoint;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::comms::{Observation, OBSERVATION_LEN};
use crate::real::Real;

pub const ACTION_DIM: usize = 2;
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("observation has {found} values, expected {expected}")]
    ObservationLength { expected: usize, found: usize },
    #[error("observation contains a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("empty minibatch")]
    EmptyMinibatch,
    #[error("parameter vector has {found} values, layout needs {expected}")]
    ParameterCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl Default for PolicyShape {
    fn default() -> Self {
        Self {
            input: OBSERVATION_LEN,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSlot {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: usize,
    pub bias: usize,
}

/// Offsets of every layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub trunk: Vec<DenseSlot>,
    pub action_head: DenseSlot,
    pub value_head: DenseSlot,
    pub log_std: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(shape: &PolicyShape) -> Self {
        let mut off = 0;
        let mut slot = |in_dim: usize, out_dim: usize| {
            let s = DenseSlot {
                in_dim,
                out_dim,
                weights: off,
                bias: off + in_dim * out_dim,
            };
            off += in_dim * out_dim + out_dim;
            s
        };
        let mut trunk = Vec::with_capacity(shape.hidden.len());
        let mut prev = shape.input;
        for &h in &shape.hidden {
            trunk.push(slot(prev, h));
            prev = h;
        }
        let action_head = slot(prev, ACTION_DIM);
        let value_head = slot(prev, 1);
        let log_std = off;
        Self {
            trunk,
            action_head,
            value_head,
            log_std,
            len: log_std + ACTION_DIM,
        }
    }

    /// Every dense layer in storage order (trunk, action head, value head).
    pub fn dense_layers(&self) -> impl Iterator<Item = &DenseSlot> {
        self.trunk.iter().chain([&self.action_head, &self.value_head])
    }

    fn last_hidden(&self, shape: &PolicyShape) -> usize {
        *shape.hidden.last().unwrap_or(&shape.input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyParameters<T: Real> {
    pub shape: PolicyShape,
    pub layout: Layout,
    pub data: Vec<T>,
}

/// Gradient with the same layout as the parameters.
pub type Gradients<T> = Vec<T>;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] = acc[0] + x[0] * y[0];
        acc[1] = acc[1] + x[1] * y[1];
        acc[2] = acc[2] + x[2] * y[2];
        acc[3] = acc[3] + x[3] * y[3];
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dense_forward<T: Real>(data: &[T], s: &DenseSlot, input: &[T], out: &mut Vec<T>) {
    out.clear();
    let w = &data[s.weights..s.weights + s.in_dim * s.out_dim];
    let b = &data[s.bias..s.bias + s.out_dim];
    out.extend(
        w.chunks_exact(s.in_dim)
            .zip(b)
            .map(|(row, &bias)| dot(row, input) + bias),
    );
}

/// Orthonormal rows (or columns, when there are more rows than columns), scaled by `gain`.
fn orthogonal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<T> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = if rows <= cols { basis[r][c] } else { basis[c][r] };
            out[r * cols + c] = T::lit(v * gain);
        }
    }
    out
}

/// Deterministic initialization from `seed`.
pub fn init_policy<T: Real>(shape: &PolicyShape, seed: u64) -> PolicyParameters<T> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let layout = Layout::new(shape);
    let mut data = vec![T::zero(); layout.len];
    for s in &layout.trunk {
        let w = orthogonal::<T, _>(s.out_dim, s.in_dim, 5.0 / 3.0, &mut rng);
        data[s.weights..s.weights + w.len()].copy_from_slice(&w);
    }
    for (s, gain) in [(layout.action_head, 0.01), (layout.value_head, 1.0)] {
        let w = orthogonal::<T, _>(s.out_dim, s.in_dim, gain, &mut rng);
        data[s.weights..s.weights + w.len()].copy_from_slice(&w);
    }
    for v in &mut data[layout.log_std..layout.log_std + ACTION_DIM] {
        *v = T::lit(0.5f64.ln());
    }
    PolicyParameters {
        shape: shape.clone(),
        layout,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput<T: Real> {
    pub mean: [T; ACTION_DIM],
    pub value: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ActionSample<T: Real> {
    /// Clamped to `[-1, 1]`; what the vehicle executes.
    pub action: [T; ACTION_DIM],
    /// Pre-clamp Gaussian draw; what `log_prob` refers to.
    pub raw: [T; ACTION_DIM],
    pub log_prob: T,
    pub value: T,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T: Real> {
    /// `hidden[0]` is the input, `hidden[k]` the output of trunk layer `k - 1`.
    hidden: Vec<Vec<T>>,
    mean: [T; ACTION_DIM],
    value: T,
}

fn half_ln_two_pi<T: Real>() -> T {
    T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Log density of a diagonal Gaussian.
pub fn gaussian_log_prob<T: Real>(x: &[T; ACTION_DIM], mean: &[T; ACTION_DIM], log_std: &[T]) -> T {
    (0..ACTION_DIM)
        .map(|i| {
            let sigma = log_std[i].exp();
            let z = (x[i] - mean[i]) / sigma;
            -T::lit(0.5) * z * z - log_std[i] - half_ln_two_pi()
        })
        .sum()
}

impl<T: Real> PolicyParameters<T> {
    pub fn from_data(shape: PolicyShape, data: Vec<T>) -> Result<Self, PolicyError> {
        let layout = Layout::new(&shape);
        if data.len() != layout.len {
            return Err(PolicyError::ParameterCount {
                expected: layout.len,
                found: data.len(),
            });
        }
        Ok(Self { shape, layout, data })
    }

    pub fn log_std(&self) -> &[T] {
        &self.data[self.layout.log_std..self.layout.log_std + ACTION_DIM]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian `f64` encoding of every parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.data {
            h.update(v.as_f64().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Differential entropy of the action distribution.
    pub fn entropy(&self) -> T {
        let c = T::lit(0.5) + half_ln_two_pi();
        self.log_std().iter().map(|&s| s + c).sum()
    }

    fn validate_input(&self, obs: &[T]) -> Result<(), PolicyError> {
        if obs.len() != self.shape.input {
            return Err(PolicyError::ObservationLength {
                expected: self.shape.input,
                found: obs.len(),
            });
        }
        if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteInput(i));
        }
        Ok(())
    }

    fn forward_cached(&self, obs: &[T], cache: &mut ForwardCache<T>) {
        let depth = self.layout.trunk.len();
        cache.hidden.resize_with(depth + 1, Vec::new);
        cache.hidden[0].clear();
        cache.hidden[0].extend_from_slice(obs);
        for (k, s) in self.layout.trunk.iter().enumerate() {
            let (done, rest) = cache.hidden.split_at_mut(k + 1);
            let out = &mut rest[0];
            dense_forward(&self.data, s, &done[k], out);
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        let last = &cache.hidden[depth];
        let mut head = Vec::with_capacity(ACTION_DIM);
        dense_forward(&self.data, &self.layout.action_head, last, &mut head);
        for i in 0..ACTION_DIM {
            cache.mean[i] = head[i].tanh();
        }
        dense_forward(&self.data, &self.layout.value_head, last, &mut head);
        cache.value = head[0];
    }

    /// Action mean in `(-1, 1)` and state value.
    pub fn forward(&self, obs: &[T]) -> Result<PolicyOutput<T>, PolicyError> {
        self.validate_input(obs)?;
        let mut cache = ForwardCache::default();
        self.forward_cached(obs, &mut cache);
        Ok(PolicyOutput {
            mean: cache.mean,
            value: cache.value,
        })
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation<T>,
        rng: &mut R,
    ) -> Result<ActionSample<T>, PolicyError> {
        let out = self.forward(obs.as_slice())?;
        let log_std = self.log_std();
        let raw: [T; ACTION_DIM] = std::array::from_fn(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            out.mean[i] + log_std[i].exp() * T::lit(eps)
        });
        let action = raw.map(|v| v.max(-T::one()).min(T::one()));
        Ok(ActionSample {
            action,
            raw,
            log_prob: gaussian_log_prob(&raw, &out.mean, log_std),
            value: out.value,
        })
    }

    /// Exploration-free action: the clamped mean.
    pub fn mean_action(&self, obs: &Observation<T>) -> Result<ActionSample<T>, PolicyError> {
        let out = self.forward(obs.as_slice())?;
        Ok(ActionSample {
            action: out.mean,
            raw: out.mean,
            log_prob: gaussian_log_prob(&out.mean, &out.mean, self.log_std()),
            value: out.value,
        })
    }
}

/// One training sample for the PPO loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T: Real> {
    pub obs: Observation<T>,
    /// Pre-clamp action the log-probability refers to.
    pub action: [T; ACTION_DIM],
    pub old_log_prob: T,
    pub advantage: T,
    pub ret: T,
}

/// Weights of the PPO composite loss
/// `-surrogate_coef * clipped_surrogate + value_coef * value_mse - entropy_coef * entropy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LossDefinition<T: Real> {
    pub clip_epsilon: T,
    pub surrogate_coef: T,
    pub value_coef: T,
    pub entropy_coef: T,
}

impl<T: Real> LossDefinition<T> {
    pub fn ppo(clip_epsilon: T, value_coef: T, entropy_coef: T) -> Self {
        Self {
            clip_epsilon,
            surrogate_coef: T::one(),
            value_coef,
            entropy_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LossStats<T: Real> {
    pub total: T,
    /// Mean clipped surrogate (higher is better).
    pub surrogate: T,
    pub unclipped_surrogate: T,
    pub value_loss: T,
    pub entropy: T,
    pub clip_fraction: T,
}

/// Scalar loss only, without gradients.
pub fn loss_value<T: Real>(
    params: &PolicyParameters<T>,
    minibatch: &[Sample<T>],
    loss: &LossDefinition<T>,
) -> Result<LossStats<T>, PolicyError> {
    evaluate(params, minibatch, loss, None)
}

/// Exact reverse-mode gradient of the composite loss over `minibatch`.
pub fn gradients<T: Real>(
    params: &PolicyParameters<T>,
    minibatch: &[Sample<T>],
    loss: &LossDefinition<T>,
) -> Result<(Gradients<T>, LossStats<T>), PolicyError> {
    let mut grad = vec![T::zero(); params.layout.len];
    let stats = evaluate(params, minibatch, loss, Some(&mut grad))?;
    Ok((grad, stats))
}

fn evaluate<T: Real>(
    params: &PolicyParameters<T>,
    minibatch: &[Sample<T>],
    loss: &LossDefinition<T>,
    mut grad: Option<&mut Gradients<T>>,
) -> Result<LossStats<T>, PolicyError> {
    if minibatch.is_empty() {
        return Err(PolicyError::EmptyMinibatch);
    }
    let layout = &params.layout;
    let n = T::from_usize_lossy(minibatch.len());
    let inv_n = T::one() / n;
    let log_std: [T; ACTION_DIM] = std::array::from_fn(|i| params.log_std()[i]);
    let inv_var: [T; ACTION_DIM] = log_std.map(|s| (-(s + s)).exp());
    let lo = T::one() - loss.clip_epsilon;
    let hi = T::one() + loss.clip_epsilon;

    let mut cache = ForwardCache::default();
    let width = layout.last_hidden(&params.shape);
    let max_width = params.shape.hidden.iter().copied().max().unwrap_or(0).max(params.shape.input);
    let mut d_hidden = vec![T::zero(); max_width];
    let mut d_prev = vec![T::zero(); max_width];

    let mut surrogate_sum = T::zero();
    let mut unclipped_sum = T::zero();
    let mut value_sum = T::zero();
    let mut clipped = 0usize;

    for s in minibatch {
        params.validate_input(s.obs.as_slice())?;
        params.forward_cached(s.obs.as_slice(), &mut cache);
        let logp = gaussian_log_prob(&s.action, &cache.mean, &log_std);
        let ratio = (logp - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let clipped_ratio = ratio.max(lo).min(hi);
        let clipped_term = clipped_ratio * s.advantage;
        let surr = unclipped.min(clipped_term);
        let unclipped_active = unclipped <= clipped_term;
        if clipped_ratio != ratio {
            clipped += 1;
        }
        surrogate_sum = surrogate_sum + surr;
        unclipped_sum = unclipped_sum + unclipped;
        let verr = cache.value - s.ret;
        value_sum = value_sum + verr * verr;

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        // dL/dlogp of this sample's contribution.
        let d_logp = if unclipped_active {
            -loss.surrogate_coef * ratio * s.advantage * inv_n
        } else {
            T::zero()
        };
        let d_value = (loss.value_coef + loss.value_coef) * verr * inv_n;

        let last = &cache.hidden[layout.trunk.len()];
        d_hidden[..width].iter_mut().for_each(|v| *v = T::zero());

        // Action head: mean = tanh(u).
        let a = layout.action_head;
        for i in 0..ACTION_DIM {
            let diff = s.action[i] - cache.mean[i];
            let d_mean = d_logp * diff * inv_var[i];
            let d_u = d_mean * (T::one() - cache.mean[i] * cache.mean[i]);
            g[layout.log_std + i] = g[layout.log_std + i] + d_logp * (diff * diff * inv_var[i] - T::one());
            let row = a.weights + i * a.in_dim;
            for j in 0..width {
                g[row + j] = g[row + j] + d_u * last[j];
                d_hidden[j] = d_hidden[j] + params.data[row + j] * d_u;
            }
            g[a.bias + i] = g[a.bias + i] + d_u;
        }
        // Value head: linear.
        let v = layout.value_head;
        for j in 0..width {
            g[v.weights + j] = g[v.weights + j] + d_value * last[j];
            d_hidden[j] = d_hidden[j] + params.data[v.weights + j] * d_value;
        }
        g[v.bias] = g[v.bias] + d_value;

        // Trunk, last layer first.
        for (k, sl) in layout.trunk.iter().enumerate().rev() {
            let out = &cache.hidden[k + 1];
            let input = &cache.hidden[k];
            for o in 0..sl.out_dim {
                d_hidden[o] = d_hidden[o] * (T::one() - out[o] * out[o]);
            }
            if k > 0 {
                d_prev[..sl.in_dim].iter_mut().for_each(|v| *v = T::zero());
            }
            for o in 0..sl.out_dim {
                let dz = d_hidden[o];
                if dz == T::zero() {
                    continue;
                }
                let row = sl.weights + o * sl.in_dim;
                let g_row = &mut g[row..row + sl.in_dim];
                for (gw, &x) in g_row.iter_mut().zip(input.iter()) {
                    *gw = *gw + dz * x;
                }
                if k > 0 {
                    let w_row = &params.data[row..row + sl.in_dim];
                    for (dp, &w) in d_prev[..sl.in_dim].iter_mut().zip(w_row) {
                        *dp = *dp + w * dz;
                    }
                }
                g[sl.bias + o] = g[sl.bias + o] + dz;
            }
            if k > 0 {
                std::mem::swap(&mut d_hidden, &mut d_prev);
            }
        }
    }

    let entropy = params.entropy();
    if let Some(g) = grad.as_deref_mut() {
        for i in 0..ACTION_DIM {
            g[layout.log_std + i] = g[layout.log_std + i] - loss.entropy_coef;
        }
    }
    let surrogate = surrogate_sum * inv_n;
    let value_loss = value_sum * inv_n;
    let total = -loss.surrogate_coef * surrogate + loss.value_coef * value_loss - loss.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(PolicyError::NonFiniteLoss);
    }
    if let Some(g) = grad {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteLoss);
        }
    }
    Ok(LossStats {
        total,
        surrogate,
        unclipped_surrogate: unclipped_sum * inv_n,
        value_loss,
        entropy,
        clip_fraction: T::from_usize_lossy(clipped) * inv_n,
    })
}
