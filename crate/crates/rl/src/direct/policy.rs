//! Stochastic action generators for the direct learners.
//!
//! Both generators are reparameterised: an action is a differentiable function of
//! the state, the network parameters and a standard-normal noise draw, so particle
//! gradients `dJ/da` can be pulled back to the parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use wgflow_core::{Activation, ForwardCache, Mlp};

use crate::env::EnvSpec;
use crate::error::{Result, RlError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Axis-aligned action box; actions are `center + half_width * tanh(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.is_empty() || low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(RlError::InvalidInput(
                "action box needs low < high in every dimension".into(),
            ));
        }
        Ok(Self { low, high })
    }

    pub fn from_spec(spec: &EnvSpec) -> Result<Self> {
        Self::new(spec.action_low.clone(), spec.action_high.clone())
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn center(&self, j: usize) -> f64 {
        0.5 * (self.low[j] + self.high[j])
    }

    pub fn half_width(&self, j: usize) -> f64 {
        0.5 * (self.high[j] - self.low[j])
    }

    pub fn log_volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| (h - l).ln()).sum()
    }

    /// `center + half_width * tanh(u)`.
    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, uj)| self.center(j) + self.half_width(j) * uj.tanh())
            .collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| v >= l && v <= h)
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Tanh hidden layers and a linear head.
pub fn tanh_mlp<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Result<Mlp> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    let mut acts = vec![Activation::Tanh; hidden.len()];
    acts.push(Activation::Identity);
    Ok(Mlp::glorot(&sizes, &acts, rng)?)
}

/// A reparameterised policy: noise in, latent values out, with exact backpropagation.
///
/// When [`ActionSampler::squash`] returns a box the action is `box.squash(latent)`;
/// otherwise the latent is the action itself.
pub trait ActionSampler: Clone + Send + Sync {
    type Cache: Send;

    fn net(&self) -> &Mlp;
    fn net_mut(&mut self) -> &mut Mlp;
    fn noise_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn squash(&self) -> Option<&ActionBox>;

    /// Latents for each noise draw at one state.
    fn latents(&self, state: &[f64], noises: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Self::Cache)>;

    /// Adds `scale * sum_i <latent_grads[i], d u_i / d params>` into `grads`.
    fn backward(&self, cache: &Self::Cache, latent_grads: &[Vec<f64>], grads: &mut [f64], scale: f64) -> Result<()>;

    fn to_action(&self, latent: &[f64]) -> Vec<f64> {
        match self.squash() {
            Some(b) => b.squash(latent),
            None => latent.to_vec(),
        }
    }

    fn actions(&self, state: &[f64], noises: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .latents(state, noises)?
            .0
            .iter()
            .map(|u| self.to_action(u))
            .collect())
    }

    fn draw_noise<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| (0..self.noise_dim()).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let noise = self.draw_noise(1, rng);
        Ok(self.actions(state, &noise)?.pop().expect("one draw"))
    }
}

fn check_grads(action_grads: &[Vec<f64>], count: usize, dim: usize) -> Result<()> {
    if action_grads.len() != count || action_grads.iter().any(|g| g.len() != dim) {
        return Err(RlError::InvalidInput(
            "action gradients do not match the cached actions".into(),
        ));
    }
    Ok(())
}

/// `a = f(s, xi)`: a network fed the state concatenated with a noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingNetwork {
    pub net: Mlp,
    bounds: ActionBox,
    noise_dim: usize,
}

/// Per-draw forward caches.
#[derive(Debug, Clone)]
pub struct SamplerCache {
    forward: Vec<ForwardCache<f64>>,
}

impl SamplingNetwork {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        noise_dim: usize,
        hidden: &[usize],
        bounds: ActionBox,
        rng: &mut R,
    ) -> Result<Self> {
        if obs_dim == 0 || noise_dim == 0 {
            return Err(RlError::InvalidInput(
                "sampling network needs positive state and noise sizes".into(),
            ));
        }
        let net = tanh_mlp(obs_dim + noise_dim, hidden, bounds.dim(), rng)?;
        Self::from_net(net, bounds, noise_dim)
    }

    pub fn from_net(net: Mlp, bounds: ActionBox, noise_dim: usize) -> Result<Self> {
        if net.output_dim() != bounds.dim() || net.input_dim() <= noise_dim {
            return Err(RlError::InvalidInput(
                "sampling network shape does not match the action box".into(),
            ));
        }
        Ok(Self { net, bounds, noise_dim })
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    /// `M` i.i.d. particles at `state` with the caches needed for backpropagation.
    pub fn policy_particles<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        count: usize,
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, SamplerCache)> {
        if count == 0 {
            return Err(RlError::InvalidInput("need at least one particle".into()));
        }
        let noise = self.draw_noise(count, rng);
        let (latents, cache) = self.latents(state, &noise)?;
        Ok((latents.iter().map(|u| self.bounds.squash(u)).collect(), cache))
    }
}

impl ActionSampler for SamplingNetwork {
    type Cache = SamplerCache;

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn squash(&self) -> Option<&ActionBox> {
        Some(&self.bounds)
    }

    fn latents(&self, state: &[f64], noises: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, SamplerCache)> {
        let mut input = Vec::with_capacity(self.net.input_dim());
        let mut forward = Vec::with_capacity(noises.len());
        let mut latents = Vec::with_capacity(noises.len());
        for xi in noises {
            input.clear();
            input.extend_from_slice(state);
            input.extend_from_slice(xi);
            let (out, fc) = self.net.forward(&input)?;
            latents.push(out);
            forward.push(fc);
        }
        Ok((latents, SamplerCache { forward }))
    }

    fn backward(&self, cache: &SamplerCache, latent_grads: &[Vec<f64>], grads: &mut [f64], scale: f64) -> Result<()> {
        check_grads(latent_grads, cache.forward.len(), self.action_dim())?;
        for (fc, g) in cache.forward.iter().zip(latent_grads) {
            self.net.backward_into(fc, g, Some(grads), scale)?;
        }
        Ok(())
    }
}

/// Tanh-squashed diagonal Gaussian: the network emits the mean and log-std of `u`,
/// and `a = center + half_width * tanh(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitPolicy {
    pub net: Mlp,
    bounds: ActionBox,
}

#[derive(Debug, Clone)]
pub struct ExplicitCache {
    forward: ForwardCache<f64>,
    std: Vec<f64>,
    /// Log-std sat outside `[LOG_STD_MIN, LOG_STD_MAX]`, so its gradient is zero.
    clamped: Vec<bool>,
    noises: Vec<Vec<f64>>,
}

impl ExplicitPolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], bounds: ActionBox, rng: &mut R) -> Result<Self> {
        if obs_dim == 0 {
            return Err(RlError::InvalidInput("policy needs a positive state size".into()));
        }
        let net = tanh_mlp(obs_dim, hidden, 2 * bounds.dim(), rng)?;
        Self::from_net(net, bounds)
    }

    pub fn from_net(net: Mlp, bounds: ActionBox) -> Result<Self> {
        if net.output_dim() != 2 * bounds.dim() {
            return Err(RlError::InvalidInput(
                "explicit policy head must emit mean and log-std".into(),
            ));
        }
        Ok(Self { net, bounds })
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    /// Mean and clamped log-std of the pre-squash Gaussian.
    pub fn head(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.net.predict(state)?;
        let k = self.bounds.dim();
        let log_std = out[k..].iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Ok((out[..k].to_vec(), log_std))
    }

    /// Action and its log-density for one noise draw.
    pub fn sample_with_log_prob(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (mean, log_std) = self.head(state)?;
        if noise.len() != mean.len() {
            return Err(RlError::InvalidInput(
                "noise dimension does not match the action".into(),
            ));
        }
        let mut logp = 0.0;
        let mut action = Vec::with_capacity(mean.len());
        for j in 0..mean.len() {
            let u = mean[j] + log_std[j].exp() * noise[j];
            action.push(self.bounds.center(j) + self.bounds.half_width(j) * u.tanh());
            logp += -0.5 * noise[j] * noise[j]
                - HALF_LN_2PI
                - log_std[j]
                - self.bounds.half_width(j).ln()
                - log_one_minus_tanh_sq(u);
        }
        Ok((action, logp))
    }

    /// Log-density of an action strictly inside the box.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (mean, log_std) = self.head(state)?;
        if action.len() != mean.len() {
            return Err(RlError::InvalidInput("action dimension mismatch".into()));
        }
        let mut logp = 0.0;
        for j in 0..mean.len() {
            let t = (action[j] - self.bounds.center(j)) / self.bounds.half_width(j);
            if !(t.abs() < 1.0) {
                return Err(RlError::InvalidInput("action on or outside the box boundary".into()));
            }
            let u = t.atanh();
            let z = (u - mean[j]) / log_std[j].exp();
            logp += -0.5 * z * z - HALF_LN_2PI - log_std[j] - self.bounds.half_width(j).ln() - log_one_minus_tanh_sq(u);
        }
        Ok(logp)
    }
}

impl ActionSampler for ExplicitPolicy {
    type Cache = ExplicitCache;

    fn net(&self) -> &Mlp {
        &self.net
    }

    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn noise_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    fn squash(&self) -> Option<&ActionBox> {
        Some(&self.bounds)
    }

    fn latents(&self, state: &[f64], noises: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, ExplicitCache)> {
        let k = self.bounds.dim();
        let (out, forward) = self.net.forward(state)?;
        let clamped: Vec<bool> = out[k..]
            .iter()
            .map(|l| !(LOG_STD_MIN..=LOG_STD_MAX).contains(l))
            .collect();
        let std: Vec<f64> = out[k..]
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect();
        let mut latents = Vec::with_capacity(noises.len());
        for xi in noises {
            if xi.len() != k {
                return Err(RlError::InvalidInput(
                    "noise dimension does not match the action".into(),
                ));
            }
            latents.push((0..k).map(|j| out[j] + std[j] * xi[j]).collect());
        }
        Ok((
            latents,
            ExplicitCache {
                forward,
                std,
                clamped,
                noises: noises.to_vec(),
            },
        ))
    }

    fn backward(&self, cache: &ExplicitCache, latent_grads: &[Vec<f64>], grads: &mut [f64], scale: f64) -> Result<()> {
        let k = self.bounds.dim();
        check_grads(latent_grads, cache.noises.len(), k)?;
        let mut head_grad = vec![0.0; 2 * k];
        for (g, xi) in latent_grads.iter().zip(&cache.noises) {
            for j in 0..k {
                head_grad[j] += g[j];
                if !cache.clamped[j] {
                    head_grad[k + j] += g[j] * cache.std[j] * xi[j];
                }
            }
        }
        self.net.backward_into(&cache.forward, &head_grad, Some(grads), scale)?;
        Ok(())
    }
}
