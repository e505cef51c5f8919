//! The full off-policy loop: act, store, fit Q (and V), move the policy, smooth targets.

use rand_chacha::ChaCha8Rng;
use wgflow_core::rng::{indexed_stream, stream};
use wgflow_core::{Jko, Mlp, Optimizer, OptimizerSpec, ScaleRule};

use super::policy::{tanh_mlp, ActionBox, ActionSampler, ExplicitPolicy, SamplingNetwork};
use super::{
    jq_step, jv_step, policy_wgf_gradient, polyak_update, q_target, soft_v_estimate, Learner, PolicyStepStats,
};
use crate::env::{rollout, Env, EnvName, EnvSpec, Transition};
use crate::error::{Result, RlError};
use crate::replay::{ReplayBuffer, DEFAULT_CAPACITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectVariant {
    /// Sampling network, importance-estimated soft value.
    DpWgf,
    /// Explicit policy and a learned V-network.
    DpWgfV,
}

impl std::str::FromStr for DirectVariant {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp-wgf" => Ok(Self::DpWgf),
            "dp-wgf-v" => Ok(Self::DpWgfV),
            other => Err(RlError::InvalidInput(format!("unknown direct variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for DirectVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DpWgf => "dp-wgf",
            Self::DpWgfV => "dp-wgf-v",
        })
    }
}

/// How the previous-policy snapshot follows the live policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotStrategy {
    /// The policy before the current update.
    LastIterate,
    /// Exponential moving average of past policies.
    MovingAverage,
}

impl std::str::FromStr for SnapshotStrategy {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "last-iterate" => Ok(Self::LastIterate),
            "average" | "moving-average" => Ok(Self::MovingAverage),
            other => Err(RlError::InvalidInput(format!("unknown snapshot strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for SnapshotStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LastIterate => "last-iterate",
            Self::MovingAverage => "moving-average",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectConfig {
    pub variant: DirectVariant,
    pub hidden: Vec<usize>,
    /// Action particles per state for each of the current and snapshot policies.
    pub particles: usize,
    pub batch_size: usize,
    /// Shared by the Q, V and policy optimizers (Adam).
    pub learning_rate: f64,
    pub gamma: f64,
    /// Target-network smoothing.
    pub tau: f64,
    pub reward_scale: f64,
    pub w2_scale: f64,
    pub bandwidth: ScaleRule<f64>,
    pub lambda: ScaleRule<f64>,
    pub snapshot: SnapshotStrategy,
    pub snapshot_tau: f64,
    /// Uniform-proposal samples per next state for the DP-WGF soft value.
    pub value_samples: usize,
    /// Policy draws per state in the V-network target.
    pub value_actions: usize,
    /// Noise size of the sampling network; `None` uses the action size.
    pub noise_dim: Option<usize>,
    pub epoch_steps: usize,
    pub gradient_steps: usize,
    pub replay_capacity: usize,
    pub eval_episodes: usize,
    pub threads: usize,
}

impl DirectConfig {
    pub fn new(variant: DirectVariant) -> Self {
        Self {
            variant,
            hidden: vec![128, 128],
            particles: 32,
            batch_size: 64,
            learning_rate: 3e-4,
            gamma: 0.99,
            tau: 0.01,
            reward_scale: 1.0,
            w2_scale: 0.4,
            bandwidth: ScaleRule::Median,
            lambda: ScaleRule::Median,
            snapshot: SnapshotStrategy::MovingAverage,
            snapshot_tau: 0.01,
            value_samples: 32,
            value_actions: 4,
            noise_dim: None,
            epoch_steps: 1000,
            gradient_steps: 1,
            replay_capacity: DEFAULT_CAPACITY,
            eval_episodes: 10,
            threads: 1,
        }
    }

    /// Epoch length suited to the environment: the short multi-goal task uses 100 steps.
    pub fn for_env(variant: DirectVariant, env: EnvName) -> Self {
        let mut cfg = Self::new(variant);
        if env == EnvName::MultiGoal {
            cfg.epoch_steps = 100;
        }
        cfg
    }

    /// Scales of the particle step; the JKO optimizer field is unused here.
    pub fn jko(&self) -> Jko {
        let mut jko = Jko::new(OptimizerSpec::adam(self.learning_rate)).with_w2_scale(self.w2_scale);
        jko.bandwidth = self.bandwidth;
        jko.lambda = self.lambda;
        jko
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("particles", self.particles),
            ("batch_size", self.batch_size),
            ("value_samples", self.value_samples),
            ("value_actions", self.value_actions),
            ("epoch_steps", self.epoch_steps),
            ("gradient_steps", self.gradient_steps),
            ("replay_capacity", self.replay_capacity),
            ("threads", self.threads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(RlError::InvalidInput(format!("{name} must be >= 1")));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(RlError::InvalidInput(
                "hidden sizes must be non-empty and positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(self.reward_scale.is_finite()) {
            return Err(RlError::InvalidInput(
                "need learning_rate >= 0, gamma in [0, 1], finite reward_scale".into(),
            ));
        }
        for (name, tau) in [("tau", self.tau), ("snapshot_tau", self.snapshot_tau)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(RlError::InvalidInput(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.noise_dim == Some(0) {
            return Err(RlError::InvalidInput("noise_dim must be >= 1".into()));
        }
        self.jko().validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Actor {
    Sampler(SamplingNetwork),
    Explicit(ExplicitPolicy),
}

impl Actor {
    fn net(&self) -> &Mlp {
        match self {
            Actor::Sampler(p) => &p.net,
            Actor::Explicit(p) => &p.net,
        }
    }

    fn net_mut(&mut self) -> &mut Mlp {
        match self {
            Actor::Sampler(p) => &mut p.net,
            Actor::Explicit(p) => &mut p.net,
        }
    }

    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self {
            Actor::Sampler(p) => p.sample(state, rng),
            Actor::Explicit(p) => p.sample(state, rng),
        }
    }
}

/// Evaluation rollouts with the stochastic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Terminal-goal counts per goal on the multi-goal task; empty elsewhere.
    pub goal_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub env_steps: u64,
    pub updates: u64,
    /// Mean return of training episodes finished during the epoch (NaN if none).
    pub train_return: f64,
    pub q_loss: f64,
    /// Zero for DP-WGF.
    pub v_loss: f64,
    pub policy: PolicyStepStats,
    pub eval: EvalStats,
}

pub struct DirectAgent {
    spec: EnvSpec,
    cfg: DirectConfig,
    bounds: ActionBox,
    q: Learner,
    q_target: Mlp,
    v: Option<(Learner, Mlp)>,
    actor: Actor,
    actor_opt: Optimizer,
    snapshot: Actor,
    replay: ReplayBuffer,
    env: Env,
    episode_return: f64,
    finished: Vec<f64>,
    seed: u64,
    rng_env: ChaCha8Rng,
    rng_explore: ChaCha8Rng,
    rng_replay: ChaCha8Rng,
    rng_update: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
    epoch: usize,
}

#[derive(Default)]
struct UpdateSums {
    count: usize,
    q_loss: f64,
    v_loss: f64,
    policy: PolicyStepStats,
}

impl DirectAgent {
    /// Networks and streams are derived from `seed` through named sub-streams.
    pub fn new(spec: &EnvSpec, cfg: DirectConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let bounds = ActionBox::from_spec(spec)?;
        let adam = OptimizerSpec::adam(cfg.learning_rate);
        let mut init = stream(seed, "critic-init");
        let q_net = tanh_mlp(spec.obs_dim + spec.action_dim, &cfg.hidden, 1, &mut init)?;
        let v = match cfg.variant {
            DirectVariant::DpWgf => None,
            DirectVariant::DpWgfV => {
                let net = tanh_mlp(spec.obs_dim, &cfg.hidden, 1, &mut init)?;
                Some((Learner::new(net.clone(), adam), net))
            }
        };
        let mut init = stream(seed, "policy-init");
        let actor = match cfg.variant {
            DirectVariant::DpWgf => Actor::Sampler(SamplingNetwork::new(
                spec.obs_dim,
                cfg.noise_dim.unwrap_or(spec.action_dim),
                &cfg.hidden,
                bounds.clone(),
                &mut init,
            )?),
            DirectVariant::DpWgfV => Actor::Explicit(ExplicitPolicy::new(
                spec.obs_dim,
                &cfg.hidden,
                bounds.clone(),
                &mut init,
            )?),
        };
        let mut rng_env = stream(seed, "env");
        let env = Env::reset(spec, &mut rng_env)?;
        Ok(Self {
            spec: spec.clone(),
            bounds,
            q: Learner::new(q_net.clone(), adam),
            q_target: q_net,
            v,
            actor_opt: Optimizer::new(adam, actor.net().len()),
            snapshot: actor.clone(),
            actor,
            replay: ReplayBuffer::new(cfg.replay_capacity)?,
            env,
            episode_return: 0.0,
            finished: Vec::new(),
            seed,
            rng_env,
            rng_explore: stream(seed, "explore"),
            rng_replay: stream(seed, "replay"),
            rng_update: stream(seed, "noise"),
            env_steps: 0,
            updates: 0,
            epoch: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &DirectConfig {
        &self.cfg
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q.net
    }

    pub fn q_target_net(&self) -> &Mlp {
        &self.q_target
    }

    pub fn v_nets(&self) -> Option<(&Mlp, &Mlp)> {
        self.v.as_ref().map(|(l, t)| (&l.net, t))
    }

    pub fn policy_net(&self) -> &Mlp {
        self.actor.net()
    }

    pub fn snapshot_net(&self) -> &Mlp {
        self.snapshot.net()
    }

    /// One action from the live policy.
    pub fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.actor.sample(state, rng)
    }

    /// Collects one environment step, then runs the configured gradient steps once
    /// the replay pool holds a full batch.
    fn train_step(&mut self, sums: &mut UpdateSums) -> Result<()> {
        let state = self.env.observation();
        let action = self.actor.sample(&state, &mut self.rng_explore)?;
        let out = self.env.step(&action)?;
        self.episode_return += out.reward;
        self.env_steps += 1;
        let done = out.done();
        self.replay.push(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.observation,
            terminal: out.terminal,
            truncated: out.truncated,
        })?;
        if done {
            self.finished.push(std::mem::take(&mut self.episode_return));
            self.env = Env::reset(&self.spec, &mut self.rng_env)?;
        }
        if self.replay.len() >= self.cfg.batch_size {
            for _ in 0..self.cfg.gradient_steps {
                self.update(sums)?;
            }
        }
        Ok(())
    }

    fn update(&mut self, sums: &mut UpdateSums) -> Result<()> {
        let cfg = &self.cfg;
        let batch = self.replay.sample(cfg.batch_size, &mut self.rng_replay)?;
        let rng = &mut self.rng_update;
        let targets = match &self.v {
            None => {
                let (q_bar, bounds, n) = (&self.q_target, &self.bounds, cfg.value_samples);
                q_target(
                    &batch,
                    &mut |s| soft_v_estimate(q_bar, s, bounds, n, rng),
                    cfg.gamma,
                    cfg.reward_scale,
                )?
            }
            Some((_, v_bar)) => q_target(&batch, &mut |s| Ok(v_bar.predict(s)?[0]), cfg.gamma, cfg.reward_scale)?,
        };
        sums.q_loss += jq_step(&mut self.q, &batch, &targets)?;
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
        if let (Some((v, _)), Actor::Explicit(pi)) = (&mut self.v, &self.actor) {
            sums.v_loss += jv_step(v, &states, &self.q.net, pi, cfg.value_actions, rng)?;
        }
        let jko = cfg.jko();
        let (grads, stats) = match (&self.actor, &self.snapshot) {
            (Actor::Sampler(p), Actor::Sampler(s)) => {
                policy_wgf_gradient(p, s, &self.q.net, &states, cfg.particles, &jko, rng, cfg.threads)?
            }
            (Actor::Explicit(p), Actor::Explicit(s)) => {
                policy_wgf_gradient(p, s, &self.q.net, &states, cfg.particles, &jko, rng, cfg.threads)?
            }
            _ => unreachable!("snapshot is a copy of the actor"),
        };
        match cfg.snapshot {
            SnapshotStrategy::LastIterate => self.snapshot.net_mut().set_flat(self.actor.net().as_flat())?,
            SnapshotStrategy::MovingAverage => {
                polyak_update(self.actor.net(), self.snapshot.net_mut(), cfg.snapshot_tau)?
            }
        }
        self.actor_opt.update(self.actor.net_mut().as_flat_mut(), &grads)?;
        match &mut self.v {
            None => polyak_update(&self.q.net, &mut self.q_target, cfg.tau)?,
            Some((v, v_bar)) => polyak_update(&v.net, v_bar, cfg.tau)?,
        }
        self.updates += 1;
        sums.count += 1;
        sums.policy.mean_q += stats.mean_q;
        sums.policy.bandwidth += stats.bandwidth;
        sums.policy.lambda += stats.lambda;
        Ok(())
    }

    /// `epoch_steps` training steps followed by `eval_episodes` evaluation rollouts.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        let mut sums = UpdateSums::default();
        self.finished.clear();
        for _ in 0..self.cfg.epoch_steps {
            self.train_step(&mut sums)?;
        }
        let eval = self.evaluate(self.cfg.eval_episodes, &format!("evaluate-{}", self.epoch))?;
        self.epoch += 1;
        let n = sums.count.max(1) as f64;
        let train_return = if self.finished.is_empty() {
            f64::NAN
        } else {
            self.finished.iter().sum::<f64>() / self.finished.len() as f64
        };
        Ok(EpochStats {
            epoch: self.epoch,
            env_steps: self.env_steps,
            updates: self.updates,
            train_return,
            q_loss: sums.q_loss / n,
            v_loss: sums.v_loss / n,
            policy: PolicyStepStats {
                mean_q: sums.policy.mean_q / n,
                bandwidth: sums.policy.bandwidth / n,
                lambda: sums.policy.lambda / n,
            },
            eval,
        })
    }

    /// Rollouts of the stochastic policy, episode `i` seeded by `(seed, label, i)`.
    pub fn evaluate(&self, episodes: usize, label: &str) -> Result<EvalStats> {
        let mut returns = Vec::with_capacity(episodes);
        let mut goal_counts = if self.spec.name == EnvName::MultiGoal {
            vec![0; 4]
        } else {
            Vec::new()
        };
        for i in 0..episodes {
            let mut rng = indexed_stream(self.seed, label, i);
            let (actor, dim) = (&self.actor, self.spec.action_dim);
            let mut err = None;
            let mut policy = |s: &[f64], r: &mut ChaCha8Rng| match actor.sample(s, r) {
                Ok(a) => a,
                Err(e) => {
                    err.get_or_insert(e);
                    vec![0.0; dim]
                }
            };
            let traj = rollout(&self.spec, &mut policy, self.spec.horizon, &mut rng)?;
            if let Some(e) = err {
                return Err(e);
            }
            if let Some(g) = traj.goal {
                goal_counts[g] += 1;
            }
            returns.push(traj.total_reward());
        }
        let (mean, std) = mean_std(&returns);
        Ok(EvalStats {
            returns,
            mean,
            std,
            goal_counts,
        })
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
