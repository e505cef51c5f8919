//! Flows over actions (DP-WGF and DP-WGF-V).
//!
//! The policy is `pi(a|s) ∝ exp(Q(s, a))` with a learned soft Q-network. At each
//! state in a replay batch the current policy emits `M` action particles and a
//! snapshot of an earlier policy emits `M` more. The particle gradients of the
//! JKO objective are pulled back through the policy network by the chain rule.
//!
//! Two value sources feed the soft Bellman target: an importance estimate under a
//! uniform proposal over the action box (DP-WGF), or a learned V-network trained
//! against an explicit tanh-Gaussian policy (DP-WGF-V).

pub mod agent;
pub mod policy;
pub mod tabular;

use rand::Rng;
use wgflow_core::jko::jko_direction_from_scores;
use wgflow_core::scalar::log_sum_exp;
use wgflow_core::{Ensemble, Jko, Mlp, Optimizer, OptimizerSpec};

use crate::env::Transition;
use crate::error::{Result, RlError};

pub use agent::{DirectAgent, DirectConfig, DirectVariant, EpochStats, EvalStats, SnapshotStrategy};
pub use policy::{ActionBox, ActionSampler, ExplicitPolicy, SamplingNetwork};

/// A network together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub net: Mlp,
    pub optimizer: Optimizer,
}

impl Learner {
    pub fn new(net: Mlp, spec: OptimizerSpec<f64>) -> Self {
        let optimizer = Optimizer::new(spec, net.len());
        Self { net, optimizer }
    }

    /// One descent step along `grads`.
    pub fn apply(&mut self, grads: &[f64]) -> Result<()> {
        self.optimizer.update(self.net.as_flat_mut(), grads)?;
        Ok(())
    }
}

fn concat(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

/// `Q(s, a)` for a network on `concat(s, a)`.
pub fn q_value(q: &Mlp, state: &[f64], action: &[f64]) -> Result<f64> {
    Ok(q.predict(&concat(state, action))?[0])
}

/// `Q(s, a)` and `dQ/da`.
pub fn q_action_gradient(q: &Mlp, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (out, cache) = q.forward(&concat(state, action))?;
    let dx = q.backward_into(&cache, &[1.0], None, 1.0)?;
    Ok((out[0], dx[state.len()..].to_vec()))
}

/// Importance estimate `log E_q[exp Q(s, a) / q(a)] - H(q)` with `q` uniform on `bounds`.
///
/// With a uniform proposal `1/q(a)` is the box volume and `H(q)` its log, so the two
/// cancel and the estimate reduces to the log-mean-exp of the sampled Q-values.
pub fn soft_v_estimate<R: Rng + ?Sized>(
    q: &Mlp,
    state: &[f64],
    bounds: &ActionBox,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    soft_v_estimate_with(&mut |a: &[f64]| q_value(q, state, a), bounds, samples, rng)
}

/// [`soft_v_estimate`] for an arbitrary `a -> Q(s, a)` at a fixed state.
pub fn soft_v_estimate_with<R: Rng + ?Sized>(
    q: &mut dyn FnMut(&[f64]) -> Result<f64>,
    bounds: &ActionBox,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(RlError::InvalidInput(
            "soft value estimate needs at least one sample".into(),
        ));
    }
    let mut values = Vec::with_capacity(samples);
    let mut a = vec![0.0; bounds.dim()];
    for _ in 0..samples {
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = rng.random_range(bounds.low[j]..bounds.high[j]);
        }
        values.push(q(&a)?);
    }
    Ok(log_sum_exp(&values) - (samples as f64).ln())
}

/// The same estimate over a finite action set with proposal `softmax(Q)`.
///
/// Evaluated exactly this is `log sum_a exp Q(a) - H(softmax Q)`, the bracket of the
/// soft Bellman equation with `pi = softmax(Q)`.
pub fn discrete_soft_value(q_values: &[f64]) -> Result<f64> {
    if q_values.is_empty() || q_values.iter().any(|v| !v.is_finite()) {
        return Err(RlError::InvalidInput("need finite Q-values".into()));
    }
    let lse = log_sum_exp(q_values);
    let entropy: f64 = -q_values.iter().map(|q| (q - lse).exp() * (q - lse)).sum::<f64>();
    Ok(lse - entropy)
}

/// `reward_scale * r + gamma * (1 - terminal) * V(s')` per transition.
///
/// Horizon truncation still bootstraps; only task termination masks `V(s')`.
pub fn q_target(
    batch: &[&Transition],
    next_value: &mut dyn FnMut(&[f64]) -> Result<f64>,
    gamma: f64,
    reward_scale: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(RlError::InvalidInput("empty batch".into()));
    }
    batch
        .iter()
        .map(|t| {
            let boot = if t.terminal || gamma == 0.0 {
                0.0
            } else {
                gamma * next_value(&t.next_state)?
            };
            Ok(reward_scale * t.reward + boot)
        })
        .collect()
}

/// Loss `mean 1/2 (Q - target)^2` and its parameter gradient.
pub fn jq_gradient(q: &Mlp, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(RlError::InvalidInput(
            "batch and targets must be non-empty and equal length".into(),
        ));
    }
    let n = batch.len() as f64;
    let mut grads = vec![0.0; q.len()];
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let (out, cache) = q.forward(&concat(&t.state, &t.action))?;
        let err = out[0] - y;
        loss += 0.5 * err * err / n;
        q.backward_into(&cache, &[err], Some(&mut grads), 1.0 / n)?;
    }
    Ok((loss, grads))
}

/// One optimizer step on the soft Bellman error; returns the pre-step loss.
pub fn jq_step(q: &mut Learner, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
    let (loss, grads) = jq_gradient(&q.net, batch, targets)?;
    q.apply(&grads)?;
    Ok(loss)
}

/// Loss `mean_s (V(s) - mean_k [Q(s, a_k) - log pi(a_k|s)])^2` with `a_k` driven by
/// the given noise draws (one row per state). The inner estimate is held fixed.
pub fn jv_gradient(
    v: &Mlp,
    states: &[Vec<f64>],
    q: &Mlp,
    policy: &ExplicitPolicy,
    noises: &[Vec<Vec<f64>>],
) -> Result<(f64, Vec<f64>)> {
    if states.is_empty() || states.len() != noises.len() || noises.iter().any(Vec::is_empty) {
        return Err(RlError::InvalidInput(
            "need states with at least one action draw each".into(),
        ));
    }
    let n = states.len() as f64;
    let mut grads = vec![0.0; v.len()];
    let mut loss = 0.0;
    for (s, draws) in states.iter().zip(noises) {
        let mut inner = 0.0;
        for xi in draws {
            let (a, logp) = policy.sample_with_log_prob(s, xi)?;
            inner += q_value(q, s, &a)? - logp;
        }
        inner /= draws.len() as f64;
        let (out, cache) = v.forward(s)?;
        let err = out[0] - inner;
        loss += err * err / n;
        v.backward_into(&cache, &[2.0 * err], Some(&mut grads), 1.0 / n)?;
    }
    Ok((loss, grads))
}

/// One optimizer step of the V-network using `actions` fresh policy draws per state.
pub fn jv_step<R: Rng + ?Sized>(
    v: &mut Learner,
    states: &[Vec<f64>],
    q: &Mlp,
    policy: &ExplicitPolicy,
    actions: usize,
    rng: &mut R,
) -> Result<f64> {
    if actions == 0 {
        return Err(RlError::InvalidInput("need at least one action per state".into()));
    }
    let noises: Vec<_> = states.iter().map(|_| policy.draw_noise(actions, rng)).collect();
    let (loss, grads) = jv_gradient(&v.net, states, q, policy, &noises)?;
    v.apply(&grads)?;
    Ok(loss)
}

/// Averages over the states of one policy update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyStepStats {
    pub mean_q: f64,
    pub bandwidth: f64,
    /// Zero when the transport term is off.
    pub lambda: f64,
}

/// Flow scores at latent particles: `d/du [Q(s, a(u)) + log |da/du|]`.
///
/// For a tanh squash `a_j = c_j + h_j tanh(u_j)` this is
/// `h_j (1 - tanh^2 u_j) dQ/da_j - 2 tanh u_j`; without a squash it is `dQ/da`.
pub fn latent_scores(
    q: &Mlp,
    state: &[f64],
    latents: &[Vec<f64>],
    squash: Option<&ActionBox>,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut scores = Vec::with_capacity(latents.len());
    let mut mean_q = 0.0;
    for u in latents {
        let a = squash.map_or_else(|| u.clone(), |b| b.squash(u));
        let (value, mut grad) = q_action_gradient(q, state, &a)?;
        if let Some(b) = squash {
            for (j, g) in grad.iter_mut().enumerate() {
                let t = u[j].tanh();
                *g = *g * b.half_width(j) * (1.0 - t * t) - 2.0 * t;
            }
        }
        mean_q += value / latents.len() as f64;
        scores.push(grad);
    }
    Ok((scores, mean_q))
}

/// Particle gradients `dJ/du_i` of the JKO objective at one state, plus diagnostics.
///
/// `current` and `previous` are latent particles of the live and snapshot policies.
pub fn particle_latent_gradients(
    q: &Mlp,
    state: &[f64],
    current: &[Vec<f64>],
    previous: &[Vec<f64>],
    squash: Option<&ActionBox>,
    jko: &Jko,
) -> Result<(Vec<Vec<f64>>, PolicyStepStats)> {
    let (scores, mean_q) = latent_scores(q, state, current, squash)?;
    let cur = Ensemble::new(current.to_vec())?;
    let prev = Ensemble::new(previous.to_vec())?;
    let (direction, diag) = jko_direction_from_scores(&cur, &prev, &scores, jko)?;
    let grads = direction
        .chunks(cur.dim())
        .map(|g| g.iter().map(|v| -v).collect())
        .collect();
    Ok((
        grads,
        PolicyStepStats {
            mean_q,
            bandwidth: diag.bandwidth,
            lambda: diag.lambda.unwrap_or(0.0),
        },
    ))
}

fn state_gradient<P: ActionSampler>(
    policy: &P,
    snapshot: &P,
    q: &Mlp,
    state: &[f64],
    cur_noise: &[Vec<f64>],
    prev_noise: &[Vec<f64>],
    jko: &Jko,
) -> Result<(Vec<f64>, PolicyStepStats)> {
    let (current, cache) = policy.latents(state, cur_noise)?;
    let (previous, _) = snapshot.latents(state, prev_noise)?;
    let (latent_grads, stats) = particle_latent_gradients(q, state, &current, &previous, policy.squash(), jko)?;
    let mut grads = vec![0.0; policy.net().len()];
    policy.backward(&cache, &latent_grads, &mut grads, 1.0 / current.len() as f64)?;
    Ok((grads, stats))
}

/// Parameter gradient of the JKO objective for given noise draws.
///
/// `current_noise[s]` and `snapshot_noise[s]` hold the draws at `states[s]`. States
/// are split across `threads` workers; per-state gradients are summed in state order
/// so the result does not depend on the thread count.
pub fn policy_wgf_gradient_with_noise<P: ActionSampler>(
    policy: &P,
    snapshot: &P,
    q: &Mlp,
    states: &[Vec<f64>],
    current_noise: &[Vec<Vec<f64>>],
    snapshot_noise: &[Vec<Vec<f64>>],
    jko: &Jko,
    threads: usize,
) -> Result<(Vec<f64>, PolicyStepStats)> {
    jko.validate()?;
    if states.is_empty() || current_noise.len() != states.len() || snapshot_noise.len() != states.len() {
        return Err(RlError::InvalidInput("need one noise set per state".into()));
    }
    if policy.net().len() != snapshot.net().len() {
        return Err(RlError::InvalidInput("snapshot shape differs from the policy".into()));
    }
    let work = |range: std::ops::Range<usize>| -> Vec<Result<(Vec<f64>, PolicyStepStats)>> {
        range
            .map(|s| {
                state_gradient(
                    policy,
                    snapshot,
                    q,
                    &states[s],
                    &current_noise[s],
                    &snapshot_noise[s],
                    jko,
                )
            })
            .collect()
    };
    let threads = threads.clamp(1, states.len());
    let per_state: Vec<_> = if threads == 1 {
        work(0..states.len())
    } else {
        let chunk = states.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let range = t * chunk..((t + 1) * chunk).min(states.len());
                    scope.spawn(move || work(range))
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("policy worker panicked"))
                .collect()
        })
    };
    let n = states.len() as f64;
    let mut grads = vec![0.0; policy.net().len()];
    let mut stats = PolicyStepStats::default();
    for r in per_state {
        let (g, s) = r?;
        for (acc, v) in grads.iter_mut().zip(g) {
            *acc += v / n;
        }
        stats.mean_q += s.mean_q / n;
        stats.bandwidth += s.bandwidth / n;
        stats.lambda += s.lambda / n;
    }
    Ok((grads, stats))
}

/// [`policy_wgf_gradient_with_noise`] with `particles` fresh draws per state and policy.
pub fn policy_wgf_gradient<P: ActionSampler, R: Rng + ?Sized>(
    policy: &P,
    snapshot: &P,
    q: &Mlp,
    states: &[Vec<f64>],
    particles: usize,
    jko: &Jko,
    rng: &mut R,
    threads: usize,
) -> Result<(Vec<f64>, PolicyStepStats)> {
    if particles == 0 {
        return Err(RlError::InvalidInput("need at least one action particle".into()));
    }
    let mut current = Vec::with_capacity(states.len());
    let mut previous = Vec::with_capacity(states.len());
    for _ in states {
        current.push(policy.draw_noise(particles, rng));
        previous.push(snapshot.draw_noise(particles, rng));
    }
    policy_wgf_gradient_with_noise(policy, snapshot, q, states, &current, &previous, jko, threads)
}

/// One optimizer step of the policy along the JKO particle gradients.
pub fn policy_wgf_step<P: ActionSampler, R: Rng + ?Sized>(
    policy: &mut P,
    optimizer: &mut Optimizer,
    snapshot: &P,
    q: &Mlp,
    states: &[Vec<f64>],
    particles: usize,
    jko: &Jko,
    rng: &mut R,
) -> Result<PolicyStepStats> {
    let (grads, stats) = policy_wgf_gradient(policy, snapshot, q, states, particles, jko, rng, 1)?;
    optimizer.update(policy.net_mut().as_flat_mut(), &grads)?;
    Ok(stats)
}

/// `target <- target + tau (live - target)`, i.e. `tau live + (1 - tau) target`.
///
/// Written in increment form so a target equal to the live network stays bit-identical.
pub fn polyak_update(live: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(RlError::InvalidInput(format!("tau must lie in (0, 1], got {tau}")));
    }
    if live.sizes() != target.sizes() {
        return Err(RlError::InvalidInput(
            "target shape differs from the live network".into(),
        ));
    }
    if tau == 1.0 {
        target.set_flat(live.as_flat())?;
        return Ok(());
    }
    for (t, &l) in target.as_flat_mut().iter_mut().zip(live.as_flat()) {
        *t += tau * (l - *t);
    }
    Ok(())
}
