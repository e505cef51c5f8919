//! Flat `key = value` run configuration.
//!
//! Every key is declared in [`KEYS`] with a default and a value kind. Values are
//! validated when set, so a typed getter can only fail on a programming error.
//! Precedence is defaults, then the config file, then `--set` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    /// Non-negative integer.
    Count,
    Bool,
    Text,
    /// `median` or a positive float.
    Scale,
    /// Comma-separated non-negative integers.
    Counts,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub kind: Kind,
    pub doc: &'static str,
}

const OPTIMIZERS: &[&str] = &["sgd", "rmsprop", "adam"];

pub const EXPERIMENTS: &[&str] = &["sample", "regress", "rl-indirect", "rl-direct"];

macro_rules! keys {
    ($($key:literal = $default:literal, $kind:expr, $doc:literal;)*) => {
        pub const KEYS: &[KeyDoc] = &[$(KeyDoc { key: $key, default: $default, kind: $kind, doc: $doc },)*];
    };
}

keys! {
    "run_id" = "", Kind::Text, "label in the run_id column; empty uses the experiment name";
    "seeds" = "0", Kind::Counts, "master seeds, run in ascending order";
    "threads" = "1", Kind::Count, "worker threads inside one run; results do not depend on it";
    "log_every" = "10", Kind::Count, "iterations between CSV rows for sample and regress (the last one is always logged)";
    "checkpoint" = "true", Kind::Bool, "write the final particles or networks of each seed";
    "debug.abort_after" = "0", Kind::Count, "test hook: stop abruptly after this many logged iterations (0 disables)";

    "w2_scale" = "0.4", Kind::Float, "relative scale of the transport term; 0 gives SVGD/SVPG";
    "bandwidth" = "median", Kind::Scale, "kernel bandwidth";
    "lambda" = "median", Kind::Scale, "entropic regularisation of the transport term";
    "jko.stepsize" = "1", Kind::Float, "JKO time step, used by the monitored objective only";
    "jko.inner_steps" = "1", Kind::Count, "optimizer steps per JKO block";

    "sample.target" = "gaussian", Kind::Choice(&["gaussian", "two-modes"]),
        "gaussian: 2D mean (1, -0.5), variances (1, 2); two-modes: 1D modes at -3 and 3";
    "sample.sampler" = "jko", Kind::Choice(&["jko", "langevin"]), "particle flow or the Langevin baseline";
    "sample.particles" = "64", Kind::Count, "particle count";
    "sample.steps" = "2000", Kind::Count, "JKO blocks (or Langevin steps)";
    "sample.optimizer" = "sgd", Kind::Choice(OPTIMIZERS), "optimizer moving the particles";
    "sample.learning_rate" = "0.05", Kind::Float, "optimizer step size, also the Langevin step";
    "sample.init_sd" = "1", Kind::Float, "particles start i.i.d. N(0, init_sd^2)";
    "sample.snapshot_every" = "0", Kind::Count, "steps between particle snapshots (0: final only)";

    "regress.data" = "sine", Kind::Text, "`sine` for the synthetic set, otherwise a CSV path";
    "regress.target_column" = "y", Kind::Text, "target column of the CSV";
    "regress.points" = "200", Kind::Count, "synthetic set size";
    "regress.noise_sd" = "0.1", Kind::Float, "synthetic observation noise";
    "regress.split" = "0.9", Kind::Float, "training fraction";
    "regress.particles" = "16", Kind::Count, "posterior particles; 1 with w2_scale 0 is MAP";
    "regress.hidden" = "50", Kind::Count, "hidden units of the one-layer network";
    "regress.prior_variance" = "0.01", Kind::Float, "weight prior variance";
    "regress.steps" = "2000", Kind::Count, "minibatch steps";
    "regress.batch_size" = "100", Kind::Count, "minibatch size";
    "regress.optimizer" = "rmsprop", Kind::Choice(OPTIMIZERS), "particle optimizer";
    "regress.learning_rate" = "0.005", Kind::Float, "particle optimizer step size";
    "regress.init_log_precision" = "0", Kind::Float, "initial log noise precision of every particle";

    "env" = "cartpole", Kind::Choice(&["cartpole", "swingup", "double-pendulum", "multigoal"]), "environment";
    "gamma" = "0.99", Kind::Float, "discount";
    "reward_scale" = "1", Kind::Float, "reward multiplier seen by the learner";

    "indirect.particles" = "8", Kind::Count, "policy-parameter particles";
    "indirect.iterations" = "100", Kind::Count, "IP-WGF iterations";
    "indirect.alpha" = "8", Kind::Float, "temperature of p(theta) ∝ exp(J / alpha)";
    "indirect.batch_size" = "5000", Kind::Count, "environment steps per iteration, split across particles";
    "indirect.learning_rate" = "0.005", Kind::Float, "Adam step size";
    "indirect.hidden" = "25,16", Kind::Counts, "policy hidden layers";
    "indirect.init_sd" = "0.1", Kind::Float, "particles start i.i.d. N(0, init_sd^2)";
    "indirect.estimator" = "reinforce", Kind::Choice(&["reinforce", "a2c"]), "policy-gradient estimator";
    "indirect.averaging" = "total", Kind::Choice(&["total", "per-step"]), "how step terms are averaged";
    "indirect.standardize" = "true", Kind::Bool, "standardise step weights across the batch";
    "indirect.critic_hidden" = "32,32", Kind::Counts, "critic hidden layers (a2c)";
    "indirect.critic_learning_rate" = "0.001", Kind::Float, "critic Adam step size (a2c)";
    "indirect.eval_every" = "10", Kind::Count, "iterations between mean-action evaluations";

    "direct.variant" = "dp-wgf-v", Kind::Choice(&["dp-wgf", "dp-wgf-v"]), "direct algorithm";
    "direct.epochs" = "200", Kind::Count, "training epochs";
    "direct.epoch_steps" = "0", Kind::Count, "environment steps per epoch (0: 100 on multigoal, else 1000)";
    "direct.hidden" = "128,128", Kind::Counts, "hidden layers of every network";
    "direct.particles" = "32", Kind::Count, "action particles per state";
    "direct.batch_size" = "64", Kind::Count, "replay minibatch";
    "direct.learning_rate" = "0.0003", Kind::Float, "Adam step size of every network";
    "direct.tau" = "0.01", Kind::Float, "target-network Polyak rate";
    "direct.snapshot" = "moving-average", Kind::Choice(&["moving-average", "last-iterate"]),
        "how the previous policy is kept";
    "direct.snapshot_tau" = "0.01", Kind::Float, "Polyak rate of the moving-average snapshot";
    "direct.value_samples" = "32", Kind::Count, "uniform action samples in the soft value estimate (dp-wgf)";
    "direct.value_actions" = "4", Kind::Count, "policy actions per state in the V target (dp-wgf-v)";
    "direct.noise_dim" = "0", Kind::Count, "sampler noise dimension (0: action dimension)";
    "direct.gradient_steps" = "1", Kind::Count, "updates per environment step";
    "direct.replay_capacity" = "1000000", Kind::Count, "replay buffer size";
    "direct.eval_episodes" = "10", Kind::Count, "evaluation rollouts after each epoch";
    "direct.final_eval_episodes" = "100", Kind::Count, "evaluation rollouts after the last epoch";

    "sweep.experiment" = "rl-indirect", Kind::Choice(EXPERIMENTS), "experiment run for every value";
    "sweep.key" = "w2_scale", Kind::Text, "key being swept";
    "sweep.values" = "0,0.2,0.4,0.8", Kind::Text, "comma-separated values";
}

pub fn key_doc(key: &str) -> Option<&'static KeyDoc> {
    KEYS.iter().find(|k| k.key == key)
}

fn check(doc: &KeyDoc, value: &str) -> Result<()> {
    let bad = |what: &str| anyhow!("key `{}`: expected {what}, got `{value}`", doc.key);
    match doc.kind {
        Kind::Float => {
            let v: f64 = value.parse().map_err(|_| bad("a number"))?;
            if !v.is_finite() {
                return Err(bad("a finite number"));
            }
        }
        Kind::Count => {
            value.parse::<u64>().map_err(|_| bad("a non-negative integer"))?;
        }
        Kind::Bool => {
            value.parse::<bool>().map_err(|_| bad("true or false"))?;
        }
        Kind::Text => {}
        Kind::Scale => {
            if value != "median" {
                let v: f64 = value.parse().map_err(|_| bad("`median` or a positive number"))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad("`median` or a positive number"));
                }
            }
        }
        Kind::Counts => {
            parse_counts(value).map_err(|_| bad("comma-separated non-negative integers"))?;
        }
        Kind::Choice(options) => {
            if !options.contains(&value) {
                return Err(bad(&format!("one of {}", options.join(", "))));
            }
        }
    }
    Ok(())
}

fn parse_counts(value: &str) -> Result<Vec<u64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(Into::into))
        .collect()
}

/// Resolved configuration: every declared key has a validated value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.key.to_string(), k.default.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides` of the form `key=value`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{o}` is not of the form key=value"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", n + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let doc = key_doc(key).ok_or_else(|| anyhow!("unknown key `{key}`"))?;
        check(doc, value)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("undeclared config key `{key}`"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on set")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated on set")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).parse().expect("validated on set")
    }

    pub fn counts(&self, key: &str) -> Vec<usize> {
        parse_counts(self.get(key))
            .expect("validated on set")
            .into_iter()
            .map(|v| v as usize)
            .collect()
    }

    /// `None` for `median`.
    pub fn scale(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            "median" => None,
            v => Some(v.parse().expect("validated on set")),
        }
    }

    /// Sorted, de-duplicated seed list.
    pub fn seeds(&self) -> Result<Vec<u64>> {
        let mut s = parse_counts(self.get("seeds"))?;
        s.sort_unstable();
        s.dedup();
        if s.is_empty() {
            bail!("key `seeds`: at least one seed is required");
        }
        Ok(s)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// The whole configuration in the file format, loadable with [`RunConfig::load`].
    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
