//! Soft Q-fitting on small finite MDPs, used to check the soft Bellman fixed point.
//!
//! States and actions are one-hot encoded and fed to an ordinary Q-network, so the
//! fit goes through the same [`q_target`] and [`jq_step`] as the continuous learners.
//! The next-state value is the exact finite-action form of the importance estimate
//! with proposal `softmax(Q)`, see [`discrete_soft_value`].

use rand::Rng;
use wgflow_core::{Mlp, OptimizerSpec};

use super::policy::tanh_mlp;
use super::{discrete_soft_value, jq_step, polyak_update, q_target, Learner};
use crate::env::Transition;
use crate::error::{Result, RlError};

/// Deterministic finite MDP: `next[s][a]` and `reward[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub reward: Vec<Vec<f64>>,
    pub next: Vec<Vec<usize>>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn states(&self) -> usize {
        self.reward.len()
    }

    pub fn actions(&self) -> usize {
        self.reward.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.states(), self.actions());
        let ok = ns > 0
            && na > 0
            && self.next.len() == ns
            && self
                .reward
                .iter()
                .all(|r| r.len() == na && r.iter().all(|v| v.is_finite()))
            && self.next.iter().all(|n| n.len() == na && n.iter().all(|&s| s < ns))
            && (0.0..1.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(RlError::InvalidInput("malformed tabular MDP".into()))
        }
    }

    fn encode(&self, s: usize, a: Option<usize>) -> Vec<f64> {
        let mut x = vec![0.0; self.states() + a.map_or(0, |_| self.actions())];
        x[s] = 1.0;
        if let Some(a) = a {
            x[self.states() + a] = 1.0;
        }
        x
    }

    /// Every `(s, a)` pair as a non-terminal transition with one-hot state and action.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for s in 0..self.states() {
            for a in 0..self.actions() {
                let x = self.encode(s, Some(a));
                out.push(Transition {
                    state: x[..self.states()].to_vec(),
                    action: x[self.states()..].to_vec(),
                    reward: self.reward[s][a],
                    next_state: self.encode(self.next[s][a], None),
                    terminal: false,
                    truncated: false,
                });
            }
        }
        out
    }

    /// `Q[s][a]` read off a network on the one-hot encoding.
    pub fn table(&self, q: &Mlp) -> Result<Vec<Vec<f64>>> {
        (0..self.states())
            .map(|s| {
                (0..self.actions())
                    .map(|a| Ok(q.predict(&self.encode(s, Some(a)))?[0]))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularFit {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub learning_rate: f64,
    pub tau: f64,
}

impl Default for TabularFit {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            steps: 20_000,
            learning_rate: 1e-2,
            tau: 0.05,
        }
    }
}

/// Fits a soft Q-network by repeated `q_target` + `jq_step` on the full transition set,
/// with a Polyak-averaged target network. Returns the learned table.
pub fn fit_soft_q<R: Rng + ?Sized>(mdp: &TabularMdp, fit: &TabularFit, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    let net = tanh_mlp(mdp.states() + mdp.actions(), &fit.hidden, 1, rng)?;
    let mut q = Learner::new(net.clone(), OptimizerSpec::adam(fit.learning_rate));
    let mut target = net;
    let data = mdp.transitions();
    let batch: Vec<&Transition> = data.iter().collect();
    let na = mdp.actions();
    for _ in 0..fit.steps {
        let t = &target;
        let mut next_value = |s: &[f64]| -> Result<f64> {
            let values = (0..na)
                .map(|a| {
                    let mut x = s.to_vec();
                    x.extend((0..na).map(|b| if a == b { 1.0 } else { 0.0 }));
                    Ok(t.predict(&x)?[0])
                })
                .collect::<Result<Vec<f64>>>()?;
            discrete_soft_value(&values)
        };
        let y = q_target(&batch, &mut next_value, mdp.gamma, 1.0)?;
        jq_step(&mut q, &batch, &y)?;
        polyak_update(&q.net, &mut target, fit.tau)?;
    }
    mdp.table(&q.net)
}
