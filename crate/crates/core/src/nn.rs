//! Small dense networks with hand-written reverse-mode gradients, a diagonal
//! Gaussian policy head, and Adam.
//!
//! All trainable values live in one flat `Vec<f64>`: the actor layers, then
//! the critic layers, then the per-dimension `log_std`. Each layer stores its
//! weight matrix (`out × in`, column-major) followed by its bias.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{contract, Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"RISPOLCY";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Layout of one ReLU multilayer perceptron inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpShape {
    sizes: Vec<usize>,
    output: Activation,
    offset: usize,
}

/// Activations kept from a batched forward pass (columns are samples).
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `layers[0]` is the input; `layers[l]` the post-activation of layer `l`.
    layers: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.layers.last().expect("cache holds the input at least")
    }
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>, output: Activation, offset: usize) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        Self { sizes, output, offset }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// `(weight offset, bias offset, in, out)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut off = self.offset;
        self.sizes.windows(2).map(move |w| {
            let (i, o) = (w[0], w[1]);
            let at = off;
            off += i * o + o;
            (at, at + i * o, i, o)
        })
    }

    pub fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> Result<MlpCache> {
        if x.nrows() != self.input_dim() {
            return Err(contract(format!("network expects inputs of length {}, got {}", self.input_dim(), x.nrows())));
        }
        let depth = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(depth + 1);
        layers.push(x.clone());
        for (l, (w_off, b_off, i, o)) in self.layers().enumerate() {
            let w = DMatrixView::from_slice(&theta[w_off..w_off + i * o], o, i);
            let b = &theta[b_off..b_off + o];
            let mut z = w * layers.last().unwrap();
            for mut col in z.column_iter_mut() {
                for (zk, bk) in col.iter_mut().zip(b) {
                    *zk += bk;
                }
            }
            if l + 1 < depth {
                z.apply(|v| *v = v.max(0.0));
            } else if self.output == Activation::Tanh {
                z.apply(|v| *v = v.tanh());
            }
            layers.push(z);
        }
        Ok(MlpCache { layers })
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the network output is `d_out`.
    pub fn backward(&self, theta: &[f64], cache: &MlpCache, d_out: &DMatrix<f64>, grad: &mut [f64]) {
        let layers: Vec<_> = self.layers().collect();
        let mut delta = d_out.clone();
        if self.output == Activation::Tanh {
            delta.zip_apply(cache.output(), |d, y| *d *= 1.0 - y * y);
        }
        for (l, &(w_off, b_off, i, o)) in layers.iter().enumerate().rev() {
            let input = &cache.layers[l];
            {
                let mut gw = DMatrixViewMut::from_slice(&mut grad[w_off..w_off + i * o], o, i);
                gw.gemm(1.0, &delta, &input.transpose(), 1.0);
            }
            for (gb, row) in grad[b_off..b_off + o].iter_mut().zip(delta.row_iter()) {
                *gb += row.sum();
            }
            if l > 0 {
                let w = DMatrixView::from_slice(&theta[w_off..w_off + i * o], o, i);
                let mut next = w.transpose() * &delta;
                // relu'(0) = 0
                next.zip_apply(input, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = next;
            }
        }
    }

    fn init_glorot<R: Rng + ?Sized>(&self, theta: &mut [f64], rng: &mut R) {
        for (w_off, b_off, i, o) in self.layers() {
            let limit = (6.0 / (i + o) as f64).sqrt();
            for w in &mut theta[w_off..w_off + i * o] {
                *w = rng.gen_range(-limit..=limit);
            }
            theta[b_off..b_off + o].fill(0.0);
        }
    }
}

/// Actor, critic, and state-independent log standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    obs_dim: usize,
    act_dim: usize,
    hidden: Vec<usize>,
    actor: MlpShape,
    critic: MlpShape,
    log_std_offset: usize,
    theta: Vec<f64>,
}

/// Batched forward pass through both networks.
#[derive(Debug, Clone)]
pub struct PolicyForward {
    actor: MlpCache,
    critic: MlpCache,
}

impl PolicyForward {
    /// Action means, `act_dim × batch`.
    pub fn means(&self) -> &DMatrix<f64> {
        self.actor.output()
    }

    pub fn values(&self) -> &[f64] {
        self.critic.output().as_slice()
    }
}

impl PolicyParams {
    pub const INITIAL_LOG_STD: f64 = -std::f64::consts::LN_2;

    /// All-zero weights with `log_std = ln 0.5`.
    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let actor = MlpShape::new(sizes(act_dim), Activation::Tanh, 0);
        let critic = MlpShape::new(sizes(1), Activation::Identity, actor.num_params());
        let log_std_offset = actor.num_params() + critic.num_params();
        let mut theta = vec![0.0; log_std_offset + act_dim];
        theta[log_std_offset..].fill(Self::INITIAL_LOG_STD);
        Self { obs_dim, act_dim, hidden: hidden.to_vec(), actor, critic, log_std_offset, theta }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(obs_dim, act_dim, hidden);
        p.actor.init_glorot(&mut p.theta, rng);
        p.critic.init_glorot(&mut p.theta, rng);
        p
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn actor_shape(&self) -> &MlpShape {
        &self.actor
    }

    pub fn critic_shape(&self) -> &MlpShape {
        &self.critic
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn log_std(&self) -> &[f64] {
        &self.theta[self.log_std_offset..]
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        self.log_std_offset..self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Stacks observations as columns.
    pub fn batch(&self, observations: &[&[f64]]) -> Result<DMatrix<f64>> {
        if let Some(bad) = observations.iter().find(|o| o.len() != self.obs_dim) {
            return Err(contract(format!("observation of length {} given to a policy expecting {}", bad.len(), self.obs_dim)));
        }
        Ok(DMatrix::from_iterator(self.obs_dim, observations.len(), observations.iter().flat_map(|o| o.iter().copied())))
    }

    pub fn forward(&self, obs: &DMatrix<f64>) -> Result<PolicyForward> {
        Ok(PolicyForward { actor: self.actor.forward(&self.theta, obs)?, critic: self.critic.forward(&self.theta, obs)? })
    }

    pub fn actor_mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = self.batch(&[obs])?;
        Ok(self.actor.forward(&self.theta, &x)?.output().as_slice().to_vec())
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        let x = self.batch(&[obs])?;
        Ok(self.critic.forward(&self.theta, &x)?.output()[0])
    }

    /// Gradient of a loss given its partials with respect to the action
    /// means (`act_dim × batch`), the values, and `log_std`.
    pub fn backward(&self, fwd: &PolicyForward, d_means: &DMatrix<f64>, d_values: &[f64], d_log_std: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        self.actor.backward(&self.theta, &fwd.actor, d_means, &mut grad);
        let dv = DMatrix::from_row_slice(1, d_values.len(), d_values);
        self.critic.backward(&self.theta, &fwd.critic, &dv, &mut grad);
        for (g, d) in grad[self.log_std_offset..].iter_mut().zip(d_log_std) {
            *g += d;
        }
        grad
    }

    /// Writes the binary checkpoint: magic, version, layer dims, then all
    /// parameters as little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(64 + 8 * self.theta.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in [self.obs_dim, self.act_dim, self.hidden.len()].into_iter().chain(self.hidden.iter().copied()) {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = bytes.as_slice();
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Checkpoint("truncated checkpoint".into()));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut read_dim = || -> Result<usize> {
            let v = u64::from_le_bytes(take(8)?.try_into().unwrap());
            usize::try_from(v).ok().filter(|&d| d <= 1 << 24).ok_or_else(|| Error::Checkpoint(format!("implausible dimension {v}")))
        };
        let obs_dim = read_dim()?;
        let act_dim = read_dim()?;
        let depth = read_dim()?;
        let hidden = (0..depth).map(|_| read_dim()).collect::<Result<Vec<_>>>()?;
        let count = read_dim()?;
        if obs_dim == 0 || act_dim == 0 || hidden.contains(&0) {
            return Err(Error::Checkpoint("zero layer width".into()));
        }
        let mut p = Self::zeros(obs_dim, act_dim, &hidden);
        if count != p.theta.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, header says {count}", p.theta.len())));
        }
        for v in p.theta.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        if !cur.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(p)
    }
}

/// Diagonal Gaussian log-density.
pub fn log_prob(mean: &[f64], log_std: &[f64], z: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    mean.iter()
        .zip(log_std)
        .zip(z)
        .map(|((m, ls), z)| {
            let u = (z - m) / ls.exp();
            -ls - half_ln_2pi - 0.5 * u * u
        })
        .sum()
}

/// Partials of [`log_prob`] with respect to the mean and `log_std`, written
/// into the provided buffers.
pub fn log_prob_grad(mean: &[f64], log_std: &[f64], z: &[f64], d_mean: &mut [f64], d_log_std: &mut [f64]) {
    for k in 0..mean.len() {
        let var = (2.0 * log_std[k]).exp();
        let diff = z[k] - mean[k];
        d_mean[k] = diff / var;
        d_log_std[k] = diff * diff / var - 1.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// `z` clipped to `[-1, 1]`; what the environment sees.
    pub action: Vec<f64>,
    /// Unclipped Gaussian draw.
    pub z: Vec<f64>,
    /// Log-density of `z`.
    pub log_prob: f64,
}

pub fn policy_sample<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> PolicySample {
    let z: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, ls)| {
            let e: f64 = StandardNormal.sample(rng);
            m + ls.exp() * e
        })
        .collect();
    let action = z.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    PolicySample { log_prob: log_prob(mean, log_std, &z), action, z }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(contract("optimizer state, parameters and gradient differ in length"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = flush(self.beta1 * self.m[i] + (1.0 - self.beta1) * g);
            self.v[i] = flush(self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g);
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Moments of parameters that stop receiving gradient (dead ReLU units)
/// decay geometrically into subnormal range, where float arithmetic is
/// orders of magnitude slower; they are zeroed long before that.
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-200 {
        0.0
    } else {
        x
    }
}
