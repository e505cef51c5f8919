//! One seed of each experiment family, writing metric rows as it goes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use wgflow_core::bnn::{bnn_logp_grad, regression_metrics, BnnSpec};
use wgflow_core::checkpoint::{self, mlp_tensors, Tensor};
use wgflow_core::dataset::{load_csv_dataset, synthetic_sine, RegressionDataset};
use wgflow_core::jko::JkoDiagnostics;
use wgflow_core::rng::stream;
use wgflow_core::targets::score_of;
use wgflow_core::{
    jko_step, langevin_step, Ensemble, Jko, Mixture, OptimizerKind, OptimizerSpec, OptimizerState, ScaleRule,
};
use wgflow_rl::direct::{DirectAgent, DirectConfig, DirectVariant, SnapshotStrategy};
use wgflow_rl::indirect::{
    evaluate_particles, ip_wgf_iteration, particle_streams, CriticParams, GaussianPolicy, IndirectConfig,
    PolicyParticleSet,
};
use wgflow_rl::{EnvName, EnvSpec};

use crate::config::RunConfig;
use crate::log::SeedLog;

/// Raised by the `debug.abort_after` hook; the binary exits without a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interrupted;

impl std::fmt::Display for Interrupted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("run interrupted by debug.abort_after")
    }
}

impl std::error::Error for Interrupted {}

/// Where a seed writes its side outputs.
pub struct SeedContext<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub dir: &'a Path,
}

impl SeedContext<'_> {
    fn end_iteration(&self, log: &mut SeedLog, logged: &mut usize) -> Result<()> {
        log.end_iteration()?;
        *logged += 1;
        let limit = self.cfg.usize("debug.abort_after");
        if limit > 0 && *logged >= limit {
            return Err(Interrupted.into());
        }
        Ok(())
    }

    fn save(&self, tensors: &[Tensor<f64>]) -> Result<()> {
        if !self.cfg.bool("checkpoint") {
            return Ok(());
        }
        let dir = self.dir.join("checkpoints");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("seed{}.txt", self.seed));
        checkpoint::save(&path, tensors).with_context(|| format!("writing {}", path.display()))
    }
}

fn optimizer(name: &str, lr: f64) -> OptimizerSpec<f64> {
    let kind = match name {
        "sgd" => OptimizerKind::Sgd,
        "rmsprop" => OptimizerKind::RmsProp,
        _ => OptimizerKind::Adam,
    };
    OptimizerSpec::new(kind, lr)
}

fn scale_rule(v: Option<f64>) -> ScaleRule<f64> {
    v.map_or(ScaleRule::Median, ScaleRule::Fixed)
}

fn jko_config(cfg: &RunConfig, opt: OptimizerSpec<f64>) -> Jko {
    let mut j = Jko::new(opt).with_w2_scale(cfg.f64("w2_scale"));
    j.bandwidth = scale_rule(cfg.scale("bandwidth"));
    j.lambda = scale_rule(cfg.scale("lambda"));
    j.stepsize = cfg.f64("jko.stepsize");
    j.inner_steps = cfg.usize("jko.inner_steps");
    j
}

fn log_scales(log: &mut SeedLog, it: usize, steps: usize, d: &JkoDiagnostics<f64>) -> Result<()> {
    log.row(it, steps, "bandwidth", d.bandwidth)?;
    if let Some(l) = d.lambda {
        log.row(it, steps, "lambda", l)?;
    }
    Ok(())
}

fn ensemble_tensor(name: &str, e: &Ensemble) -> Tensor<f64> {
    Tensor {
        name: name.to_string(),
        rows: e.count(),
        cols: e.dim(),
        values: e.as_flat().to_vec(),
    }
}

fn should_log(it: usize, every: usize, last: usize) -> bool {
    it == last || (every > 0 && it % every == 0)
}

// ---------------------------------------------------------------- sample

pub fn sample_target(name: &str) -> Result<Mixture> {
    Ok(match name {
        "gaussian" => Mixture::new(vec![1.0], vec![vec![1.0, -0.5]], vec![vec![1.0, 2.0]])?,
        "two-modes" => Mixture::unit_modes_1d(&[-3.0, 3.0])?,
        other => bail!("unknown target `{other}`"),
    })
}

/// Writes one point per line, coordinates separated by single spaces.
pub fn write_snapshot(path: &Path, e: &Ensemble) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for p in e.points() {
        let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn sample_metrics(log: &mut SeedLog, it: usize, e: &Ensemble, target: &Mixture) -> Result<()> {
    let (mean, var) = (e.mean(), e.variance());
    let (tm, tv) = (target.mean(), target.marginal_variance());
    let mean_error = mean.iter().zip(&tm).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let var_error = var.iter().zip(&tv).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);
    let sq_error: f64 = (0..tm.len())
        .map(|c| (mean[c] - tm[c]).powi(2) + (var[c] - tv[c]).powi(2))
        .sum();
    log.row(it, 0, "mean_error", mean_error)?;
    log.row(it, 0, "var_rel_error", var_error)?;
    log.row(it, 0, "moment_sq_error", sq_error)?;
    if target.means().len() > 1 {
        for (k, mu) in target.means().iter().enumerate() {
            let near = e
                .points()
                .filter(|p| p.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < 1.0)
                .count();
            log.row(it, 0, &format!("mode{k}_fraction"), near as f64 / e.count() as f64)?;
        }
    }
    Ok(())
}

pub fn run_sample(ctx: &SeedContext, log: &mut SeedLog) -> Result<()> {
    let cfg = ctx.cfg;
    let target = sample_target(cfg.get("sample.target"))?;
    let dim = target.means()[0].len();
    let m = cfg.usize("sample.particles");
    let steps = cfg.usize("sample.steps");
    let every = cfg.usize("log_every");
    let snap_every = cfg.usize("sample.snapshot_every");
    let lr = cfg.f64("sample.learning_rate");
    let sd = cfg.f64("sample.init_sd");
    let mut init = stream(ctx.seed, "init");
    let points = (0..m)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut init);
                    sd * z
                })
                .collect()
        })
        .collect();
    let mut e = Ensemble::new(points)?;
    let jko = jko_config(cfg, optimizer(cfg.get("sample.optimizer"), lr));
    let mut opt = OptimizerState::new(jko.optimizer, m * dim);
    let mut noise = stream(ctx.seed, "noise");
    let langevin = cfg.get("sample.sampler") == "langevin";
    let snaps = ctx.dir.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let mut logged = 0;

    sample_metrics(log, 0, &e, &target)?;
    ctx.end_iteration(log, &mut logged)?;
    for it in 1..=steps {
        let mut field = score_of(&target);
        let diag = if langevin {
            e = langevin_step(&e, &mut field, lr, &mut noise)?;
            None
        } else {
            let prev = e.clone();
            let out = jko_step(&e, &prev, &mut field, &jko, &mut opt)?;
            e = out.ensemble;
            Some(out.diagnostics)
        };
        if !e.is_finite() {
            bail!("particles diverged at step {it}");
        }
        if snap_every > 0 && it % snap_every == 0 && it != steps {
            write_snapshot(&snaps.join(format!("seed{}_step{it}.txt", ctx.seed)), &e)?;
        }
        if should_log(it, every, steps) {
            sample_metrics(log, it, &e, &target)?;
            if let Some(d) = diag {
                log_scales(log, it, 0, &d)?;
            }
            ctx.end_iteration(log, &mut logged)?;
        }
    }
    write_snapshot(&snaps.join(format!("seed{}_step{steps}.txt", ctx.seed)), &e)?;
    ctx.save(&[ensemble_tensor("particles", &e)])
}

// ---------------------------------------------------------------- regress

fn regression_data(cfg: &RunConfig, seed: u64) -> Result<RegressionDataset<f64>> {
    let split = cfg.f64("regress.split");
    Ok(match cfg.get("regress.data") {
        "sine" => {
            let (x, y) = synthetic_sine(cfg.usize("regress.points"), cfg.f64("regress.noise_sd"), seed);
            RegressionDataset::from_rows(x, y, split, seed)?
        }
        path => load_csv_dataset(Path::new(path), cfg.get("regress.target_column"), split, seed)
            .with_context(|| format!("loading {path}"))?,
    })
}

pub fn run_regress(ctx: &SeedContext, log: &mut SeedLog) -> Result<()> {
    let cfg = ctx.cfg;
    let data = regression_data(cfg, ctx.seed)?;
    let mut spec = BnnSpec::<f64>::new(data.feature_dim());
    spec.hidden = cfg.usize("regress.hidden");
    spec.prior_variance = cfg.f64("regress.prior_variance");
    let m = cfg.usize("regress.particles");
    let steps = cfg.usize("regress.steps");
    let every = cfg.usize("log_every");
    let batch = cfg.usize("regress.batch_size").min(data.train.len());
    if batch == 0 {
        bail!("empty minibatch");
    }
    let mut init = stream(ctx.seed, "init");
    let log_precision = cfg.f64("regress.init_log_precision");
    let points = (0..m)
        .map(|_| spec.init_particle(log_precision, &mut init))
        .collect::<wgflow_core::Result<Vec<_>>>()?;
    let mut e = Ensemble::new(points)?;
    let jko = jko_config(
        cfg,
        optimizer(cfg.get("regress.optimizer"), cfg.f64("regress.learning_rate")),
    );
    let mut opt = OptimizerState::new(jko.optimizer, e.as_flat().len());
    let mut minibatch = stream(ctx.seed, "minibatch");
    let n_train = data.train.len();
    let mut logged = 0;

    let metrics = |log: &mut SeedLog, it: usize, e: &Ensemble| -> Result<()> {
        let (rmse, ll) = regression_metrics(&e.to_vecs(), &spec, &data)?;
        log.row(it, 0, "test_rmse", rmse)?;
        log.row(it, 0, "test_ll", ll)
    };
    metrics(log, 0, &e)?;
    ctx.end_iteration(log, &mut logged)?;
    for it in 1..=steps {
        let rows: Vec<usize> = index::sample(&mut minibatch, n_train, batch)
            .into_iter()
            .map(|k| data.train[k])
            .collect();
        let bx: Vec<&[f64]> = rows.iter().map(|&i| data.features[i].as_slice()).collect();
        let by: Vec<f64> = rows.iter().map(|&i| data.targets[i]).collect();
        let mut failure = None;
        let mut field = |_: usize, p: &[f64]| match bnn_logp_grad(&spec, p, &bx, &by, n_train) {
            Ok((_, g)) => g,
            Err(err) => {
                failure.get_or_insert(err);
                vec![0.0; p.len()]
            }
        };
        let prev = e.clone();
        let out = jko_step(&e, &prev, &mut field, &jko, &mut opt)?;
        if let Some(err) = failure {
            return Err(anyhow!(err).context(format!("posterior gradient at step {it}")));
        }
        e = out.ensemble;
        if should_log(it, every, steps) {
            metrics(log, it, &e)?;
            log_scales(log, it, 0, &out.diagnostics)?;
            ctx.end_iteration(log, &mut logged)?;
        }
    }
    ctx.save(&[ensemble_tensor("particles", &e)])
}

// ---------------------------------------------------------------- rl-indirect

fn env_spec(cfg: &RunConfig) -> Result<EnvSpec> {
    let name: EnvName = cfg.get("env").parse().map_err(|e| anyhow!("{e}"))?;
    Ok(EnvSpec::new(name))
}

pub fn run_rl_indirect(ctx: &SeedContext, log: &mut SeedLog) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = env_spec(cfg)?;
    let m = cfg.usize("indirect.particles");
    let lr = cfg.f64("indirect.learning_rate");
    let policy = GaussianPolicy::new(spec.obs_dim, &cfg.counts("indirect.hidden"), spec.action_dim)?;
    let mut set = PolicyParticleSet::init(
        policy,
        m,
        cfg.f64("indirect.init_sd"),
        OptimizerSpec::adam(lr),
        &mut stream(ctx.seed, "policy-init"),
    )?;
    let mut icfg = IndirectConfig::new();
    icfg.alpha = cfg.f64("indirect.alpha");
    icfg.gamma = cfg.f64("gamma");
    icfg.reward_scale = cfg.f64("reward_scale");
    icfg.batch_size = cfg.usize("indirect.batch_size");
    icfg.estimator = cfg.get("indirect.estimator").parse()?;
    icfg.averaging = cfg.get("indirect.averaging").parse()?;
    icfg.standardize = cfg.bool("indirect.standardize");
    icfg.threads = cfg.usize("threads");
    icfg.jko = jko_config(cfg, OptimizerSpec::adam(lr));
    let mut critic = match cfg.get("indirect.estimator") {
        "a2c" => Some(CriticParams::new(
            spec.obs_dim,
            &cfg.counts("indirect.critic_hidden"),
            icfg.gamma,
            OptimizerSpec::adam(cfg.f64("indirect.critic_learning_rate")),
            &mut stream(ctx.seed, "critic-init"),
        )?),
        _ => None,
    };
    let mut rngs = particle_streams(ctx.seed, m);
    let iterations = cfg.usize("indirect.iterations");
    let eval_every = cfg.usize("indirect.eval_every");
    let mut env_steps = 0;
    let mut logged = 0;
    for it in 1..=iterations {
        let st = ip_wgf_iteration(&mut set, &spec, critic.as_mut(), &icfg, &mut rngs)
            .with_context(|| format!("iteration {it}"))?;
        env_steps += st.env_steps;
        log.row(it, env_steps, "mean_return", st.mean_return)?;
        log.row(it, env_steps, "std_return", st.std_return)?;
        log.row(it, env_steps, "best_return", st.best_return)?;
        log_scales(log, it, env_steps, &st.diagnostics)?;
        if let Some(l) = st.critic_loss {
            log.row(it, env_steps, "critic_loss", l)?;
        }
        if should_log(it, eval_every, iterations) {
            let ev = evaluate_particles(&set, &spec, ctx.seed)?;
            let mean = ev.iter().sum::<f64>() / ev.len() as f64;
            log.row(it, env_steps, "eval_return", mean)?;
            log.row(
                it,
                env_steps,
                "eval_best",
                ev.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )?;
        }
        ctx.end_iteration(log, &mut logged)?;
    }
    ctx.save(&[ensemble_tensor("particles", &set.particles)])
}

// ---------------------------------------------------------------- rl-direct

pub fn direct_config(cfg: &RunConfig, env: EnvName) -> Result<DirectConfig> {
    let variant: DirectVariant = cfg.get("direct.variant").parse()?;
    let mut d = DirectConfig::for_env(variant, env);
    d.hidden = cfg.counts("direct.hidden");
    d.particles = cfg.usize("direct.particles");
    d.batch_size = cfg.usize("direct.batch_size");
    d.learning_rate = cfg.f64("direct.learning_rate");
    d.gamma = cfg.f64("gamma");
    d.tau = cfg.f64("direct.tau");
    d.reward_scale = cfg.f64("reward_scale");
    d.w2_scale = cfg.f64("w2_scale");
    d.bandwidth = scale_rule(cfg.scale("bandwidth"));
    d.lambda = scale_rule(cfg.scale("lambda"));
    d.snapshot = cfg.get("direct.snapshot").parse::<SnapshotStrategy>()?;
    d.snapshot_tau = cfg.f64("direct.snapshot_tau");
    d.value_samples = cfg.usize("direct.value_samples");
    d.value_actions = cfg.usize("direct.value_actions");
    d.noise_dim = Some(cfg.usize("direct.noise_dim")).filter(|&n| n > 0);
    if cfg.usize("direct.epoch_steps") > 0 {
        d.epoch_steps = cfg.usize("direct.epoch_steps");
    }
    d.gradient_steps = cfg.usize("direct.gradient_steps");
    d.replay_capacity = cfg.usize("direct.replay_capacity");
    d.eval_episodes = cfg.usize("direct.eval_episodes");
    d.threads = cfg.usize("threads");
    d.validate()?;
    Ok(d)
}

fn goal_rows(
    log: &mut SeedLog,
    it: usize,
    steps: usize,
    prefix: &str,
    counts: &[usize],
    episodes: usize,
) -> Result<()> {
    for (k, c) in counts.iter().enumerate() {
        log.row(
            it,
            steps,
            &format!("{prefix}goal{k}_fraction"),
            *c as f64 / episodes.max(1) as f64,
        )?;
    }
    Ok(())
}

pub fn run_rl_direct(ctx: &SeedContext, log: &mut SeedLog) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = env_spec(cfg)?;
    let dcfg = direct_config(cfg, spec.name)?;
    let episodes = dcfg.eval_episodes;
    let mut agent = DirectAgent::new(&spec, dcfg, ctx.seed)?;
    let epochs = cfg.usize("direct.epochs");
    let mut logged = 0;
    for it in 1..=epochs {
        let st = agent.run_epoch().with_context(|| format!("epoch {it}"))?;
        let steps = st.env_steps as usize;
        log.row(it, steps, "train_return", st.train_return)?;
        log.row(it, steps, "eval_return", st.eval.mean)?;
        log.row(it, steps, "eval_std", st.eval.std)?;
        log.row(it, steps, "q_loss", st.q_loss)?;
        if agent.v_nets().is_some() {
            log.row(it, steps, "v_loss", st.v_loss)?;
        }
        log.row(it, steps, "mean_q", st.policy.mean_q)?;
        log.row(it, steps, "bandwidth", st.policy.bandwidth)?;
        log.row(it, steps, "lambda", st.policy.lambda)?;
        goal_rows(log, it, steps, "", &st.eval.goal_counts, episodes)?;
        let last = it == epochs;
        let final_episodes = cfg.usize("direct.final_eval_episodes");
        if last && final_episodes > 0 {
            let ev = agent.evaluate(final_episodes, "final")?;
            log.row(it, steps, "final_eval_return", ev.mean)?;
            goal_rows(log, it, steps, "final_", &ev.goal_counts, final_episodes)?;
        }
        ctx.end_iteration(log, &mut logged)?;
    }
    let mut tensors = mlp_tensors("q", agent.q_net());
    tensors.extend(mlp_tensors("policy", agent.policy_net()));
    if let Some((v, _)) = agent.v_nets() {
        tensors.extend(mlp_tensors("v", v));
    }
    ctx.save(&tensors)
}

pub fn run_seed(experiment: &str, ctx: &SeedContext, log: &mut SeedLog) -> Result<()> {
    match experiment {
        "sample" => run_sample(ctx, log),
        "regress" => run_regress(ctx, log),
        "rl-indirect" => run_rl_indirect(ctx, log),
        "rl-direct" => run_rl_direct(ctx, log),
        other => bail!("unknown experiment `{other}`"),
    }
}
