//! Seed loops, output files and sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::experiments::{run_seed, Interrupted, SeedContext};
use crate::log::{create_with_header, SeedLog};

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_s: f64,
    /// Last logged value of every metric.
    pub final_metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub run_id: String,
    pub version: &'static str,
    pub status: &'static str,
    pub wall_time_s: f64,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<SeedOutcome>,
}

fn run_id(experiment: &str, cfg: &RunConfig) -> String {
    match cfg.get("run_id") {
        "" => experiment.to_string(),
        id => id.to_string(),
    }
}

/// Runs one seed into `out`; `Err` only for the interruption hook or I/O on the log.
fn one_seed(experiment: &str, cfg: &RunConfig, dir: &Path, seed: u64, out: &mut dyn Write) -> Result<SeedOutcome> {
    let start = Instant::now();
    let id = run_id(experiment, cfg);
    let mut log = SeedLog::new(out, &id, seed);
    let ctx = SeedContext { cfg, seed, dir };
    let result = run_seed(experiment, &ctx, &mut log);
    log.end_iteration()?;
    let final_metrics = log.latest().iter().cloned().collect();
    let wall_time_s = start.elapsed().as_secs_f64();
    match result {
        Ok(()) => Ok(SeedOutcome {
            seed,
            status: "ok",
            error: None,
            wall_time_s,
            final_metrics,
        }),
        Err(e) if e.is::<Interrupted>() => Err(e),
        Err(e) => Ok(SeedOutcome {
            seed,
            status: "error",
            error: Some(format!("{e:#}")),
            wall_time_s,
            final_metrics,
        }),
    }
}

fn part_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("run.seed{seed}.part"))
}

fn run_parallel(
    experiment: &str,
    cfg: &RunConfig,
    dir: &Path,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<SeedOutcome>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedOutcome>>>> = Mutex::new(seeds.iter().map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                let r = fs::File::create(part_path(dir, seed))
                    .map_err(Into::into)
                    .and_then(|f| {
                        let mut w = std::io::BufWriter::new(f);
                        one_seed(experiment, cfg, dir, seed, &mut w)
                    });
                results.lock().expect("result slot poisoned")[i] = Some(r);
            });
        }
    });
    let mut csv = create_with_header(&dir.join("run.csv"))?;
    let mut outcomes = Vec::new();
    let mut interrupted = None;
    for (seed, r) in seeds.iter().zip(results.into_inner().expect("result slot poisoned")) {
        let part = part_path(dir, *seed);
        csv.write_all(&fs::read(&part).with_context(|| format!("reading {}", part.display()))?)?;
        fs::remove_file(&part)?;
        match r.expect("every seed is claimed by a worker") {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                interrupted.get_or_insert(e);
            }
        }
    }
    csv.flush()?;
    match interrupted {
        Some(e) => Err(e),
        None => Ok(outcomes),
    }
}

/// Runs every seed of `experiment`, writing `run.csv`, `config.txt` and `summary.json` under `out`.
///
/// Seed failures are recorded in the summary; the call fails only when every seed failed,
/// on I/O errors, or on the interruption hook.
pub fn run_experiment(experiment: &str, cfg: &RunConfig, out: &Path, parallel_seeds: usize) -> Result<Summary> {
    let start = Instant::now();
    let seeds = cfg.seeds()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let outcomes = if parallel_seeds > 1 {
        run_parallel(experiment, cfg, out, &seeds, parallel_seeds)?
    } else {
        let mut csv = create_with_header(&out.join("run.csv"))?;
        seeds
            .iter()
            .map(|&s| one_seed(experiment, cfg, out, s, &mut csv))
            .collect::<Result<Vec<_>>>()?
    };
    let ok = outcomes.iter().filter(|o| o.status == "ok").count();
    let summary = Summary {
        experiment: experiment.to_string(),
        run_id: run_id(experiment, cfg),
        version: env!("CARGO_PKG_VERSION"),
        status: match ok {
            0 => "failed",
            n if n == outcomes.len() => "ok",
            _ => "partial",
        },
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        seeds: outcomes,
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if ok == 0 {
        let first = summary.seeds.iter().find_map(|s| s.error.clone()).unwrap_or_default();
        bail!("all seeds failed; first error: {first}");
    }
    Ok(summary)
}

/// Directory name of one sweep point.
pub fn sweep_dir(key: &str, value: &str) -> String {
    format!("{key}={value}")
}

/// Runs `sweep.experiment` once per value of `sweep.key`, each in its own subdirectory.
pub fn run_sweep(cfg: &RunConfig, out: &Path, parallel_seeds: usize) -> Result<Vec<(String, Result<Summary>)>> {
    let key = cfg.get("sweep.key");
    let experiment = cfg.get("sweep.experiment");
    let values: Vec<&str> = cfg
        .get("sweep.values")
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        bail!("key `sweep.values`: no values");
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(key, v).with_context(|| "key `sweep.key`/`sweep.values`")?;
            if cfg.get("run_id").is_empty() {
                c.set("run_id", &sweep_dir(key, v))?;
            }
            Ok((sweep_dir(key, v), c))
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    for (name, c) in configs {
        let r = run_experiment(experiment, &c, &out.join(&name), parallel_seeds);
        if let Err(e) = &r {
            if e.is::<Interrupted>() {
                return Err(r.unwrap_err());
            }
        }
        results.push((name, r));
    }
    let index: Vec<serde_json::Value> = results
        .iter()
        .map(|(name, r)| match r {
            Ok(s) => serde_json::json!({ "dir": name, "status": s.status }),
            Err(e) => serde_json::json!({ "dir": name, "status": "failed", "error": format!("{e:#}") }),
        })
        .collect();
    fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "experiment": experiment, "key": key, "runs": index }))?,
    )?;
    Ok(results)
}
