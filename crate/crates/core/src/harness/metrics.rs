//! Fixed-schema metrics CSV.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

pub const METRICS_SCHEMA: u32 = 1;
/// Goal columns in the CSV; every environment has at most this many goals.
pub const GOAL_COLUMNS: usize = 4;

/// One logging interval. `schema` is repeated on every row so files can be
/// concatenated and still be checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub step: u64,
    pub episodes: u64,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub goal0: u64,
    pub goal1: u64,
    pub goal2: u64,
    pub goal3: u64,
    pub successes: u64,
    pub dfm_loss: Option<f64>,
    pub kl_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Cumulative Euler steps whose jump probability was clamped to 1.
    pub clamped_steps: u64,
    /// Cumulative reference refreshes.
    pub refreshes: u64,
    pub eval_return: Option<f64>,
}

/// Accumulates per-step quantities between logging points.
#[derive(Debug, Clone, Default)]
pub struct Window {
    returns: Vec<f64>,
    goals: [u64; GOAL_COLUMNS],
    successes: u64,
    dfm: Vec<f64>,
    kl: Vec<f64>,
    critic: Vec<f64>,
    value: Vec<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

impl Window {
    pub fn episode(&mut self, ret: f64, goal: Option<usize>, success: bool) {
        self.returns.push(ret);
        if let Some(g) = goal {
            self.goals[g.min(GOAL_COLUMNS - 1)] += 1;
        }
        self.successes += success as u64;
    }

    pub fn losses(&mut self, critic: f64, value: f64) {
        self.critic.push(critic);
        self.value.push(value);
    }

    pub fn actor(&mut self, dfm: f64, kl: f64) {
        self.dfm.push(dfm);
        self.kl.push(kl);
    }

    pub fn flush(&mut self, step: u64, clamped_steps: u64, refreshes: u64, eval_return: Option<f64>) -> MetricsRow {
        let (m, s) = mean_std(&self.returns);
        let has = !self.returns.is_empty();
        let row = MetricsRow {
            schema: METRICS_SCHEMA,
            step,
            episodes: self.returns.len() as u64,
            mean_return: has.then_some(m),
            std_return: has.then_some(s),
            goal0: self.goals[0],
            goal1: self.goals[1],
            goal2: self.goals[2],
            goal3: self.goals[3],
            successes: self.successes,
            dfm_loss: mean(&self.dfm),
            kl_loss: mean(&self.kl),
            critic_loss: mean(&self.critic),
            value_loss: mean(&self.value),
            clamped_steps,
            refreshes,
            eval_return,
        };
        *self = Window::default();
        row
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    if rows.is_empty() {
        // Header only: serialize a throwaway row's field names.
        w.write_record([
            "schema", "step", "episodes", "mean_return", "std_return", "goal0", "goal1", "goal2", "goal3",
            "successes", "dfm_loss", "kl_loss", "critic_loss", "value_loss", "clamped_steps", "refreshes",
            "eval_return",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: MetricsRow = rec?;
        if row.schema != METRICS_SCHEMA {
            return Err(crate::Error::InvalidArgument(format!(
                "metrics schema {} is not {METRICS_SCHEMA}",
                row.schema
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}
