//! Deterministic control tasks with one interface.
//!
//! Every physical constant lives in [`EnvSpec`] or the per-task constants below.
//! The cart-pole family uses the classic Barto-Sutton-Anderson dynamics, integrated
//! with RK4. Actions are clamped to the action bounds before integration.

use rand::Rng;

use crate::error::{Result, RlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    CartPole,
    SwingUp,
    DoublePendulum,
    MultiGoal,
}

impl std::str::FromStr for EnvName {
    type Err = RlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" => Ok(Self::CartPole),
            "swingup" | "cartpole-swingup" => Ok(Self::SwingUp),
            "double-pendulum" => Ok(Self::DoublePendulum),
            "multigoal" | "multi-goal" => Ok(Self::MultiGoal),
            other => Err(RlError::UnknownEnv(other.to_string())),
        }
    }
}

impl std::fmt::Display for EnvName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CartPole => "cartpole",
            Self::SwingUp => "swingup",
            Self::DoublePendulum => "double-pendulum",
            Self::MultiGoal => "multigoal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: EnvName,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
    /// Integrator step in seconds; unused by the kinematic multi-goal task.
    pub dt: f64,
}

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
/// Force in newtons applied for action `+1`.
pub const FORCE_SCALE: f64 = 10.0;
pub const TRACK_LIMIT: f64 = 2.4;
pub const ANGLE_LIMIT: f64 = 0.21;
/// Base torque for action `+1` on the double pendulum.
pub const TORQUE_SCALE: f64 = 5.0;
pub const GOALS: [[f64; 2]; 4] = [[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0], [0.0, -5.0]];
pub const GOAL_RADIUS: f64 = 0.5;
pub const ARENA_LIMIT: f64 = 7.0;
pub const ACTION_COST: f64 = 0.01;

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        let (obs_dim, action_dim, horizon) = match name {
            EnvName::CartPole => (4, 1, 500),
            EnvName::SwingUp => (5, 1, 500),
            EnvName::DoublePendulum => (6, 1, 500),
            EnvName::MultiGoal => (2, 2, 30),
        };
        Self {
            name,
            obs_dim,
            action_dim,
            action_low: vec![-1.0; action_dim],
            action_high: vec![1.0; action_dim],
            horizon,
            dt: 0.02,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(RlError::InvalidInput("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(RlError::InvalidInput("dt must be positive".into()));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(RlError::InvalidInput("action bounds do not match action_dim".into()));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(l, h)| !l.is_finite() || !h.is_finite() || l >= h)
        {
            return Err(RlError::InvalidInput(
                "action bounds must be finite with low < high".into(),
            ));
        }
        Ok(())
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&l, &h))| a.clamp(l, h))
            .collect()
    }
}

/// Classic cart-pole derivative; `theta = 0` is upright.
fn cartpole_deriv(s: [f64; 4], force: f64) -> [f64; 4] {
    let [_, x_dot, theta, theta_dot] = s;
    let total = CART_MASS + POLE_MASS;
    let pml = POLE_MASS * POLE_HALF_LENGTH;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + pml * theta_dot * theta_dot * sin) / total;
    let theta_acc = (GRAVITY * sin - cos * temp) / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
    let x_acc = temp - pml * theta_acc * cos / total;
    [x_dot, x_acc, theta_dot, theta_acc]
}

/// Point-mass double pendulum, unit masses and lengths, angles from the downward vertical.
fn pendulum_deriv(s: [f64; 4], torque: f64) -> [f64; 4] {
    let [t1, t2, w1, w2] = s;
    let d = t1 - t2;
    let (sd, cd) = d.sin_cos();
    // mass matrix [[2, cos d], [cos d, 1]]
    let (a, b, c) = (2.0, cd, 1.0);
    let r1 = torque - w2 * w2 * sd - 2.0 * GRAVITY * t1.sin();
    let r2 = w1 * w1 * sd - GRAVITY * t2.sin();
    let det = a * c - b * b;
    let acc1 = (c * r1 - b * r2) / det;
    let acc2 = (a * r2 - b * r1) / det;
    [w1, w2, acc1, acc2]
}

fn rk4(s: [f64; 4], dt: f64, f: impl Fn([f64; 4]) -> [f64; 4]) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], k: f64| [a[0] + k * b[0], a[1] + k * b[1], a[2] + k * b[2], a[3] + k * b[3]];
    let k1 = f(s);
    let k2 = f(add(s, k1, dt / 2.0));
    let k3 = f(add(s, k2, dt / 2.0));
    let k4 = f(add(s, k3, dt));
    let mut out = s;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Total mechanical energy of the double pendulum `(t1, t2, w1, w2)`, zero at rest hanging down.
pub fn mechanical_energy(s: [f64; 4]) -> f64 {
    let [t1, t2, w1, w2] = s;
    let kinetic = w1 * w1 + 0.5 * w2 * w2 + w1 * w2 * (t1 - t2).cos();
    let potential = GRAVITY * (2.0 * (1.0 - t1.cos()) + (1.0 - t2.cos()));
    kinetic + potential
}

#[derive(Debug, Clone, PartialEq)]
enum Physics {
    /// `(x, x_dot, theta, theta_dot)`
    Cart([f64; 4]),
    /// `(theta1, theta2, omega1, omega2)`
    Pendulum([f64; 4]),
    Point([f64; 2]),
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Episode ended by the task (failure or goal); no bootstrapping past it.
    pub terminal: bool,
    /// Episode cut by the horizon.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    physics: Physics,
    steps: usize,
    done: bool,
}

impl Env {
    /// Starts an episode from the task's start configuration plus a small uniform perturbation.
    pub fn reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut u = |w: f64| rng.random_range(-w..w);
        let physics = match spec.name {
            EnvName::CartPole => Physics::Cart([u(0.05), u(0.05), u(0.05), u(0.05)]),
            EnvName::SwingUp => Physics::Cart([u(0.05), u(0.05), std::f64::consts::PI + u(0.05), u(0.05)]),
            EnvName::DoublePendulum => Physics::Pendulum([u(0.05), u(0.05), u(0.05), u(0.05)]),
            EnvName::MultiGoal => Physics::Point([u(0.1), u(0.1)]),
        };
        Ok(Self {
            spec: spec.clone(),
            physics,
            steps: 0,
            done: false,
        })
    }

    /// Starts an episode from an explicit physical state (see [`Env::physical_state`]).
    pub fn with_state(spec: &EnvSpec, state: &[f64]) -> Result<Self> {
        spec.validate()?;
        let want = if spec.name == EnvName::MultiGoal { 2 } else { 4 };
        if state.len() != want || state.iter().any(|v| !v.is_finite()) {
            return Err(RlError::InvalidInput(format!(
                "{} needs {want} finite state values",
                spec.name
            )));
        }
        let physics = match spec.name {
            EnvName::CartPole | EnvName::SwingUp => Physics::Cart([state[0], state[1], state[2], state[3]]),
            EnvName::DoublePendulum => Physics::Pendulum([state[0], state[1], state[2], state[3]]),
            EnvName::MultiGoal => Physics::Point([state[0], state[1]]),
        };
        Ok(Self {
            spec: spec.clone(),
            physics,
            steps: 0,
            done: false,
        })
    }

    /// [`Env::reset`] seeded from a single integer.
    pub fn reset_seeded(spec: &EnvSpec, seed: u64) -> Result<Self> {
        Self::reset(spec, &mut wgflow_core::rng::stream(seed, "env-reset"))
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Raw physical state; for the cart tasks `theta` is measured from upright.
    pub fn physical_state(&self) -> Vec<f64> {
        match &self.physics {
            Physics::Cart(s) | Physics::Pendulum(s) => s.to_vec(),
            Physics::Point(p) => p.to_vec(),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match (&self.physics, self.spec.name) {
            (Physics::Cart(s), EnvName::CartPole) => s.to_vec(),
            (Physics::Cart([x, xd, th, thd]), _) => vec![*x, *xd, th.cos(), th.sin(), *thd],
            (Physics::Pendulum([t1, t2, w1, w2]), _) => {
                vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), *w1, *w2]
            }
            (Physics::Point(p), _) => p.to_vec(),
        }
    }

    /// Index of the goal within [`GOAL_RADIUS`] of the agent (multi-goal only).
    pub fn goal_reached(&self) -> Option<usize> {
        match &self.physics {
            Physics::Point(p) => GOALS.iter().position(|g| dist(p, g) < GOAL_RADIUS),
            _ => None,
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(RlError::EpisodeOver);
        }
        if action.len() != self.spec.action_dim {
            return Err(RlError::InvalidInput(format!(
                "action has {} components, expected {}",
                action.len(),
                self.spec.action_dim
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(RlError::InvalidInput("action must be finite".into()));
        }
        let a = self.spec.clamp_action(action);
        let dt = self.spec.dt;
        let (reward, terminal) = match (&mut self.physics, self.spec.name) {
            (Physics::Cart(s), EnvName::CartPole) => {
                let force = FORCE_SCALE * a[0];
                *s = rk4(*s, dt, |y| cartpole_deriv(y, force));
                let failed = s[2].abs() > ANGLE_LIMIT || s[0].abs() > TRACK_LIMIT;
                (if failed { 0.0 } else { 1.0 }, failed)
            }
            (Physics::Cart(s), _) => {
                let force = FORCE_SCALE * a[0];
                *s = rk4(*s, dt, |y| cartpole_deriv(y, force));
                if s[0].abs() > TRACK_LIMIT {
                    s[0] = s[0].clamp(-TRACK_LIMIT, TRACK_LIMIT);
                    s[1] = 0.0;
                }
                (s[2].cos(), false)
            }
            (Physics::Pendulum(s), _) => {
                let torque = TORQUE_SCALE * a[0];
                *s = rk4(*s, dt, |y| pendulum_deriv(y, torque));
                // tip height in [-2, 2] mapped to [0, 1]
                let height = -s[0].cos() - s[1].cos();
                ((height + 2.0) / 4.0, false)
            }
            (Physics::Point(p), _) => {
                p[0] = (p[0] + a[0]).clamp(-ARENA_LIMIT, ARENA_LIMIT);
                p[1] = (p[1] + a[1]).clamp(-ARENA_LIMIT, ARENA_LIMIT);
                let nearest = GOALS.iter().map(|g| dist(p, g)).fold(f64::INFINITY, f64::min);
                let cost = ACTION_COST * (a[0] * a[0] + a[1] * a[1]);
                (-nearest - cost, nearest < GOAL_RADIUS)
            }
        };
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.spec.horizon;
        self.done = terminal || truncated;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminal,
            truncated,
        })
    }
}

fn dist(p: &[f64; 2], g: &[f64; 2]) -> f64 {
    ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt()
}

/// One `(s, a, r, s')` record. `action` is what the policy emitted, before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    /// Goal index at termination (multi-goal only).
    pub goal: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// Whether the episode ended by termination or horizon rather than being cut short.
    pub fn is_complete(&self) -> bool {
        self.transitions.last().is_some_and(Transition::done)
    }
}

/// Runs one episode of at most `max_steps` steps, resetting with `rng`.
///
/// The policy receives the observation and the same `rng`, so a seeded run is
/// fully reproducible.
pub fn rollout<R: Rng>(
    spec: &EnvSpec,
    policy: &mut dyn FnMut(&[f64], &mut R) -> Vec<f64>,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut env = Env::reset(spec, rng)?;
    let mut traj = Trajectory::default();
    let mut obs = env.observation();
    while traj.len() < max_steps && !env.is_done() {
        let action = policy(&obs, rng);
        let out = env.step(&action)?;
        traj.transitions.push(Transition {
            state: std::mem::replace(&mut obs, out.observation.clone()),
            action,
            reward: out.reward,
            next_state: out.observation,
            terminal: out.terminal,
            truncated: out.truncated,
        });
    }
    traj.goal = env.goal_reached();
    Ok(traj)
}
