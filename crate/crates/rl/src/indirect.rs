//! Flows over policy parameters (IP-WGF).
//!
//! Each particle is a full Gaussian policy: a tanh network producing the action
//! mean followed by one learnable log-std per action dimension. The target density
//! over parameters is `p(theta) ∝ exp(J(theta) / alpha)`, so the score handed to the
//! JKO step is `grad J / alpha`, estimated by REINFORCE or A2C.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wgflow_core::jko::JkoDiagnostics;
use wgflow_core::{jko_step, Activation, Ensemble, Jko, Mlp, Optimizer, OptimizerSpec};

use crate::env::{rollout, EnvSpec, Trajectory, Transition};
use crate::error::{Result, RlError};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Shape of a Gaussian policy particle.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    net_len: usize,
}

impl GaussianPolicy {
    /// Tanh hidden layers and a linear mean head.
    pub fn new(obs_dim: usize, hidden: &[usize], action_dim: usize) -> Result<Self> {
        if obs_dim == 0 || action_dim == 0 || hidden.contains(&0) {
            return Err(RlError::InvalidInput("policy layer sizes must be positive".into()));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut activations = vec![Activation::Tanh; hidden.len()];
        activations.push(Activation::Identity);
        let net_len = wgflow_core::mlp::param_count(&sizes);
        Ok(Self {
            sizes,
            activations,
            net_len,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn action_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Network parameters plus one log-std per action dimension.
    pub fn particle_len(&self) -> usize {
        self.net_len + self.action_dim()
    }

    /// Every coordinate drawn from `N(0, sd^2)`, log-stds included.
    pub fn init_particle<R: Rng + ?Sized>(&self, sd: f64, rng: &mut R) -> Vec<f64> {
        (0..self.particle_len())
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Unpacks a particle for repeated evaluation.
    pub fn bind(&self, particle: &[f64]) -> Result<BoundPolicy> {
        if particle.len() != self.particle_len() {
            return Err(RlError::InvalidInput(format!(
                "particle has {} entries, policy needs {}",
                particle.len(),
                self.particle_len()
            )));
        }
        let (net, log_std) = particle.split_at(self.net_len);
        Ok(BoundPolicy {
            net: Mlp::from_flat(&self.sizes, &self.activations, wgflow_core::FlatView(net.to_vec()))?,
            log_std: log_std.to_vec(),
        })
    }
}

/// A policy particle unpacked into its network and log-stds.
#[derive(Debug, Clone)]
pub struct BoundPolicy {
    net: Mlp,
    log_std: Vec<f64>,
}

impl BoundPolicy {
    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.predict(state)?)
    }

    /// `action = mean + std * noise` and its log-density.
    pub fn sample_with_noise(&self, state: &[f64], noise: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mean = self.mean(state)?;
        if noise.len() != mean.len() {
            return Err(RlError::InvalidInput("noise length must equal action dim".into()));
        }
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, ls), z)| m + ls.exp() * z)
            .collect();
        let log_prob = noise
            .iter()
            .zip(&self.log_std)
            .map(|(z, ls)| -0.5 * z * z - ls - HALF_LN_2PI)
            .sum();
        Ok((action, log_prob))
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let noise: Vec<f64> = (0..self.log_std.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with_noise(state, &noise)
    }

    /// Log-density of `action` at `state`; adds `scale * grad` into `grad` when given.
    pub fn log_prob_into(&self, state: &[f64], action: &[f64], grad: Option<&mut [f64]>, scale: f64) -> Result<f64> {
        let (mean, cache) = self.net.forward(state)?;
        if action.len() != mean.len() {
            return Err(RlError::InvalidInput("action length must equal action dim".into()));
        }
        let mut log_prob = 0.0;
        let mut d_mean = vec![0.0; mean.len()];
        let mut d_log_std = vec![0.0; mean.len()];
        for d in 0..mean.len() {
            let inv_var = (-2.0 * self.log_std[d]).exp();
            let diff = action[d] - mean[d];
            log_prob += -0.5 * diff * diff * inv_var - self.log_std[d] - HALF_LN_2PI;
            d_mean[d] = diff * inv_var;
            d_log_std[d] = diff * diff * inv_var - 1.0;
        }
        if let Some(g) = grad {
            let net_len = self.net.len();
            self.net
                .backward_into(&cache, &d_mean, Some(&mut g[..net_len]), scale)?;
            for (gi, v) in g[net_len..].iter_mut().zip(&d_log_std) {
                *gi += scale * v;
            }
        }
        Ok(log_prob)
    }
}

/// Samples an action and returns it with its log-density and the log-density's
/// gradient with respect to the particle, all at the pre-clamp action.
pub fn stochastic_policy_sample<R: Rng + ?Sized>(
    policy: &GaussianPolicy,
    particle: &[f64],
    state: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let bound = policy.bind(particle)?;
    let (action, log_prob) = bound.sample(state, rng)?;
    let mut grad = vec![0.0; particle.len()];
    bound.log_prob_into(state, &action, Some(&mut grad), 1.0)?;
    Ok((action, log_prob, grad))
}

/// Discounted return-to-go `sum_l gamma^l r_(t+l)` for every step.
pub fn returns_to_go(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (t, tr) in traj.transitions.iter().enumerate().rev() {
        acc = tr.reward + gamma * acc;
        out[t] = acc;
    }
    out
}

/// How per-step score terms are combined within one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAveraging {
    /// `sum_t`: the gradient of the expected discounted episode return.
    Total,
    /// `(1/T) sum_t`: the per-step average.
    PerStep,
}

impl std::str::FromStr for StepAveraging {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Self::Total),
            "per-step" => Ok(Self::PerStep),
            other => Err(RlError::InvalidInput(format!("unknown step averaging `{other}`"))),
        }
    }
}

impl std::fmt::Display for StepAveraging {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Total => "total",
            Self::PerStep => "per-step",
        })
    }
}

/// `(1/K) sum_k sum_t gamma^t grad log pi(a_t|s_t) w_t` over `K` trajectories with
/// per-step weights `w`; [`StepAveraging::PerStep`] divides each inner sum by `T_k`.
pub fn weighted_score_grad(
    policy: &GaussianPolicy,
    particle: &[f64],
    trajectories: &[Trajectory],
    weights: &[Vec<f64>],
    gamma: f64,
    averaging: StepAveraging,
) -> Result<Vec<f64>> {
    let usable: Vec<usize> = (0..trajectories.len())
        .filter(|&k| !trajectories[k].is_empty())
        .collect();
    if usable.is_empty() {
        return Err(RlError::InvalidInput(
            "no transitions to estimate a gradient from".into(),
        ));
    }
    let bound = policy.bind(particle)?;
    let mut grad = vec![0.0; particle.len()];
    let per_traj = 1.0 / usable.len() as f64;
    for &k in &usable {
        let traj = &trajectories[k];
        let w = &weights[k];
        if w.len() != traj.len() {
            return Err(RlError::InvalidInput("one weight per transition required".into()));
        }
        let inv_t = match averaging {
            StepAveraging::Total => per_traj,
            StepAveraging::PerStep => per_traj / traj.len() as f64,
        };
        let mut discount = 1.0;
        for (tr, &wt) in traj.transitions.iter().zip(w) {
            let scale = inv_t * discount * wt;
            if scale != 0.0 {
                bound.log_prob_into(&tr.state, &tr.action, Some(&mut grad), scale)?;
            }
            discount *= gamma;
        }
    }
    Ok(grad)
}

/// REINFORCE ascent direction for `J`, weighting scores by returns-to-go.
pub fn reinforce_grad(
    policy: &GaussianPolicy,
    particle: &[f64],
    trajectories: &[Trajectory],
    gamma: f64,
    averaging: StepAveraging,
) -> Result<Vec<f64>> {
    let weights: Vec<Vec<f64>> = trajectories.iter().map(|t| returns_to_go(t, gamma)).collect();
    weighted_score_grad(policy, particle, trajectories, &weights, gamma, averaging)
}

/// State-value critic trained by temporal differences.
#[derive(Debug, Clone)]
pub struct CriticParams {
    pub net: Mlp,
    pub optimizer: Optimizer,
    pub gamma: f64,
}

impl CriticParams {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        gamma: f64,
        optimizer: OptimizerSpec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut acts = vec![Activation::Tanh; hidden.len()];
        acts.push(Activation::Identity);
        Self::from_net(Mlp::glorot(&sizes, &acts, rng)?, gamma, optimizer)
    }

    pub fn from_net(net: Mlp, gamma: f64, optimizer: OptimizerSpec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(RlError::InvalidInput(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if net.output_dim() != 1 {
            return Err(RlError::InvalidInput("critic must output a scalar".into()));
        }
        let optimizer = Optimizer::new(optimizer, net.len());
        Ok(Self { net, optimizer, gamma })
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.predict(state)?[0])
    }

    /// `r + gamma V(s')`, with no bootstrap past a terminal state.
    pub fn td_target(&self, tr: &Transition) -> Result<f64> {
        let next = if tr.terminal { 0.0 } else { self.value(&tr.next_state)? };
        Ok(tr.reward + self.gamma * next)
    }

    /// Gradient of `(1/N) sum 1/2 (target - V(s))^2` with targets held fixed, and the loss.
    pub fn td_gradient(&self, trajectories: &[Trajectory]) -> Result<(Vec<f64>, f64)> {
        let n: usize = trajectories.iter().map(Trajectory::len).sum();
        if n == 0 {
            return Err(RlError::InvalidInput(
                "critic update needs at least one transition".into(),
            ));
        }
        let mut grad = vec![0.0; self.net.len()];
        let mut loss = 0.0;
        let inv_n = 1.0 / n as f64;
        for tr in trajectories.iter().flat_map(|t| &t.transitions) {
            let target = self.td_target(tr)?;
            let (v, cache) = self.net.forward(&tr.state)?;
            let err = v[0] - target;
            loss += 0.5 * err * err * inv_n;
            self.net.backward_into(&cache, &[err], Some(&mut grad), inv_n)?;
        }
        Ok((grad, loss))
    }
}

/// One optimizer step on the TD loss; returns the loss before the step.
pub fn critic_td_update(critic: &mut CriticParams, trajectories: &[Trajectory]) -> Result<f64> {
    let (grad, loss) = critic.td_gradient(trajectories)?;
    critic.optimizer.update(critic.net.as_flat_mut(), &grad)?;
    Ok(loss)
}

/// One-step advantages `r_t + gamma V(s_(t+1)) - V(s_t)`.
pub fn advantages(critic: &CriticParams, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.transitions
        .iter()
        .map(|tr| Ok(critic.td_target(tr)? - critic.value(&tr.state)?))
        .collect()
}

/// A2C ascent direction: REINFORCE with advantages in place of returns.
pub fn a2c_grad(
    policy: &GaussianPolicy,
    particle: &[f64],
    trajectories: &[Trajectory],
    critic: &CriticParams,
    averaging: StepAveraging,
) -> Result<Vec<f64>> {
    if critic.net.input_dim() != policy.obs_dim() {
        return Err(RlError::InvalidInput(
            "critic input size differs from observation size".into(),
        ));
    }
    let weights = trajectories
        .iter()
        .map(|t| advantages(critic, t))
        .collect::<Result<Vec<_>>>()?;
    weighted_score_grad(policy, particle, trajectories, &weights, critic.gamma, averaging)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Reinforce,
    A2c,
}

impl std::str::FromStr for Estimator {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(Self::Reinforce),
            "a2c" => Ok(Self::A2c),
            other => Err(RlError::InvalidInput(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reinforce => "reinforce",
            Self::A2c => "a2c",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndirectConfig {
    /// Temperature of `p(theta) ∝ exp(J / alpha)`.
    pub alpha: f64,
    pub gamma: f64,
    /// Multiplies every reward before gradient estimation; statistics stay unscaled.
    pub reward_scale: f64,
    /// Environment steps per iteration, split evenly across particles.
    pub batch_size: usize,
    pub estimator: Estimator,
    pub averaging: StepAveraging,
    /// Standardise the per-step weights across the whole batch before assembly.
    pub standardize: bool,
    /// Worker threads for rollouts; results do not depend on it.
    pub threads: usize,
    pub jko: Jko,
}

impl IndirectConfig {
    /// Temperature 8, batch 5000, discount 0.99, Adam at 5e-3, `eps = 0.4`.
    pub fn new() -> Self {
        Self {
            alpha: 8.0,
            gamma: 0.99,
            reward_scale: 1.0,
            batch_size: 5000,
            estimator: Estimator::Reinforce,
            averaging: StepAveraging::Total,
            standardize: true,
            threads: 1,
            jko: Jko::new(OptimizerSpec::adam(5e-3)),
        }
    }

    pub fn validate(&self, particles: usize) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(RlError::InvalidInput(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RlError::InvalidInput(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !self.reward_scale.is_finite() {
            return Err(RlError::InvalidInput("reward scale must be finite".into()));
        }
        if self.batch_size < particles {
            return Err(RlError::InvalidInput(format!(
                "batch size {} is smaller than the {particles} particles",
                self.batch_size
            )));
        }
        Ok(self.jko.validate()?)
    }
}

impl Default for IndirectConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// Policy particles with one optimizer over the whole ensemble (per-coordinate state,
/// so equivalent to one optimizer per particle).
#[derive(Debug, Clone)]
pub struct PolicyParticleSet {
    pub policy: GaussianPolicy,
    pub particles: Ensemble,
    pub optimizer: Optimizer,
}

impl PolicyParticleSet {
    pub fn new(policy: GaussianPolicy, particles: Ensemble, optimizer: OptimizerSpec<f64>) -> Result<Self> {
        if particles.dim() != policy.particle_len() {
            return Err(RlError::InvalidInput(
                "particle length does not match the policy".into(),
            ));
        }
        let optimizer = Optimizer::new(optimizer, particles.as_flat().len());
        Ok(Self {
            policy,
            particles,
            optimizer,
        })
    }

    /// `count` particles drawn i.i.d. from `N(0, init_sd^2)` per coordinate.
    pub fn init<R: Rng + ?Sized>(
        policy: GaussianPolicy,
        count: usize,
        init_sd: f64,
        optimizer: OptimizerSpec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let points = (0..count).map(|_| policy.init_particle(init_sd, rng)).collect();
        Self::new(policy, Ensemble::new(points)?, optimizer)
    }

    pub fn count(&self) -> usize {
        self.particles.count()
    }

    pub fn bind(&self, i: usize) -> Result<BoundPolicy> {
        self.policy.bind(self.particles.point(i))
    }
}

/// Independent per-particle rollout streams derived from `seed`.
pub fn particle_streams(seed: u64, count: usize) -> Vec<ChaCha8Rng> {
    (0..count)
        .map(|i| wgflow_core::rng::indexed_stream(seed, "rollout", i))
        .collect()
}

/// Episodes totalling exactly `steps` transitions; the last one may be cut short.
pub fn collect_steps(
    bound: &BoundPolicy,
    spec: &EnvSpec,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    let mut remaining = steps;
    let mut failure = None;
    while remaining > 0 {
        let mut policy = |s: &[f64], r: &mut ChaCha8Rng| match bound.sample(s, r) {
            Ok((a, _)) => a,
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; spec.action_dim]
            }
        };
        let traj = rollout(spec, &mut policy, remaining.min(spec.horizon), rng)?;
        if let Some(e) = failure.take() {
            return Err(e);
        }
        remaining -= traj.len();
        out.push(traj);
    }
    Ok(out)
}

/// Per-iteration statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    /// Mean return of each particle's completed episodes (the partial episode when none completed).
    pub particle_returns: Vec<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub best_return: f64,
    pub env_steps: usize,
    pub diagnostics: JkoDiagnostics<f64>,
    pub critic_loss: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn episode_return(trajs: &[Trajectory]) -> f64 {
    let complete: Vec<f64> = trajs
        .iter()
        .filter(|t| t.is_complete())
        .map(Trajectory::total_reward)
        .collect();
    if complete.is_empty() {
        trajs
            .iter()
            .map(Trajectory::total_reward)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        complete.iter().sum::<f64>() / complete.len() as f64
    }
}

/// Rollouts for all particles, in parallel when `threads > 1`.
fn collect_all(
    set: &PolicyParticleSet,
    spec: &EnvSpec,
    steps: usize,
    rngs: &mut [ChaCha8Rng],
    threads: usize,
) -> Result<Vec<Vec<Trajectory>>> {
    let bound: Vec<BoundPolicy> = (0..set.count()).map(|i| set.bind(i)).collect::<Result<_>>()?;
    if threads <= 1 {
        return bound
            .iter()
            .zip(rngs.iter_mut())
            .map(|(b, r)| collect_steps(b, spec, steps, r))
            .collect();
    }
    let chunk = bound.len().div_ceil(threads);
    let mut results: Vec<Result<Vec<Trajectory>>> = Vec::with_capacity(bound.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = bound
            .chunks(chunk)
            .zip(rngs.chunks_mut(chunk))
            .map(|(bs, rs)| {
                scope.spawn(move || {
                    bs.iter()
                        .zip(rs.iter_mut())
                        .map(|(b, r)| collect_steps(b, spec, steps, r))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            results.extend(h.join().expect("rollout worker panicked"));
        }
    });
    results.into_iter().collect()
}

/// Per-step weights for every particle's trajectories, standardised across the batch
/// when requested.
fn step_weights(
    data: &[Vec<Trajectory>],
    critic: Option<&CriticParams>,
    cfg: &IndirectConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut weights = data
        .iter()
        .map(|trajs| {
            trajs
                .iter()
                .map(|t| match (cfg.estimator, critic) {
                    (Estimator::Reinforce, _) => Ok(returns_to_go(t, cfg.gamma)),
                    (Estimator::A2c, Some(c)) => advantages(c, t),
                    (Estimator::A2c, None) => Err(RlError::InvalidInput("A2C requires a critic".into())),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if cfg.standardize {
        let all: Vec<f64> = weights.iter().flatten().flatten().copied().collect();
        let (mean, sd) = mean_std(&all);
        let sd = if sd > 1e-8 { sd } else { 1.0 };
        for w in weights.iter_mut().flatten().flatten() {
            *w = (*w - mean) / sd;
        }
    }
    Ok(weights)
}

/// One IP-WGF iteration: rollouts, `grad J / alpha` per particle, then a JKO step
/// against the ensemble frozen at the start of the iteration.
///
/// `rngs` holds one stream per particle. With A2C the critic is fitted after the
/// advantages have been computed.
pub fn ip_wgf_iteration(
    set: &mut PolicyParticleSet,
    spec: &EnvSpec,
    mut critic: Option<&mut CriticParams>,
    cfg: &IndirectConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<IterationStats> {
    let m = set.count();
    cfg.validate(m)?;
    if rngs.len() != m {
        return Err(RlError::InvalidInput("one rollout stream per particle required".into()));
    }
    let steps = cfg.batch_size / m;
    let mut data = collect_all(set, spec, steps, rngs, cfg.threads)?;
    let particle_returns: Vec<f64> = data.iter().map(|d| episode_return(d)).collect();
    if cfg.reward_scale != 1.0 {
        for tr in data.iter_mut().flatten().flat_map(|t| t.transitions.iter_mut()) {
            tr.reward *= cfg.reward_scale;
        }
    }
    let weights = step_weights(&data, critic.as_deref(), cfg)?;
    let inv_alpha = 1.0 / cfg.alpha;
    let scores = (0..m)
        .map(|i| {
            let g = weighted_score_grad(
                &set.policy,
                set.particles.point(i),
                &data[i],
                &weights[i],
                cfg.gamma,
                cfg.averaging,
            )?;
            Ok(g.into_iter().map(|v| v * inv_alpha).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let previous = set.particles.clone();
    let mut field = |i: usize, _: &[f64]| scores[i].clone();
    let outcome = jko_step(&set.particles, &previous, &mut field, &cfg.jko, &mut set.optimizer)?;
    set.particles = outcome.ensemble;

    let critic_loss = match critic.as_deref_mut() {
        Some(c) if cfg.estimator == Estimator::A2c => {
            let all: Vec<Trajectory> = data.iter().flatten().cloned().collect();
            Some(critic_td_update(c, &all)?)
        }
        _ => None,
    };

    let (mean_return, std_return) = mean_std(&particle_returns);
    Ok(IterationStats {
        best_return: particle_returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        particle_returns,
        mean_return,
        std_return,
        env_steps: steps * m,
        diagnostics: outcome.diagnostics,
        critic_loss,
    })
}

/// Mean-action returns, one episode per particle, each reset from its own stream of `seed`.
pub fn evaluate_particles(set: &PolicyParticleSet, spec: &EnvSpec, seed: u64) -> Result<Vec<f64>> {
    (0..set.count())
        .map(|i| {
            let bound = set.bind(i)?;
            let mut rng = wgflow_core::rng::indexed_stream(seed, "evaluate", i);
            let mut failure = None;
            let mut policy = |s: &[f64], _: &mut ChaCha8Rng| {
                bound.mean(s).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    vec![0.0; spec.action_dim]
                })
            };
            let traj = rollout(spec, &mut policy, spec.horizon, &mut rng)?;
            match failure {
                Some(e) => Err(e),
                None => Ok(traj.total_reward()),
            }
        })
        .collect()
}
