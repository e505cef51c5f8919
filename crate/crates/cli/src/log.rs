//! Long-format metric log: one `run_id,seed,iteration,env_steps,metric,value` row per value.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

pub const HEADER: &str = "run_id,seed,iteration,env_steps,metric,value";

/// Appends rows for one seed; every [`SeedLog::end_iteration`] flushes to disk.
pub struct SeedLog<'a> {
    out: &'a mut dyn Write,
    run_id: String,
    seed: u64,
    last: Vec<(String, f64)>,
}

impl<'a> SeedLog<'a> {
    pub fn new(out: &'a mut dyn Write, run_id: &str, seed: u64) -> Self {
        Self {
            out,
            run_id: run_id.to_string(),
            seed,
            last: Vec::new(),
        }
    }

    pub fn row(&mut self, iteration: usize, env_steps: usize, metric: &str, value: f64) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{iteration},{env_steps},{metric},{value}",
            self.run_id, self.seed
        )?;
        match self.last.iter_mut().find(|(m, _)| m == metric) {
            Some(slot) => slot.1 = value,
            None => self.last.push((metric.to_string(), value)),
        }
        Ok(())
    }

    pub fn end_iteration(&mut self) -> Result<()> {
        self.out.flush().context("flushing run.csv")
    }

    /// Latest value of every metric logged so far, in first-seen order.
    pub fn latest(&self) -> &[(String, f64)] {
        &self.last
    }
}

pub fn create_with_header(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{HEADER}")?;
    w.flush()?;
    Ok(w)
}

/// One parsed row.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct Row {
    pub run_id: String,
    pub seed: u64,
    pub iteration: usize,
    pub env_steps: usize,
    pub metric: String,
    pub value: f64,
}

/// Reads a run.csv, checking the header.
pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header.join(",") == HEADER, "unexpected header `{}`", header.join(","));
    rdr.deserialize()
        .map(|r| r.with_context(|| format!("parsing {}", path.display())))
        .collect()
}
