//! Single-axis sweeps over fine-tuning hyperparameters.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{budget_split, RunConfig};
use super::run::{offline_dataset, run_finetune, run_pretrain, EvalSummary, PretrainOutcome};
use crate::env::Transition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationAxis {
    Alpha,
    Substeps,
    Beta,
    Rho,
    /// Total candidate budget, split one third rollouts, two thirds uniform.
    Budget,
}

impl AblationAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationAxis::Alpha => "alpha",
            AblationAxis::Substeps => "substeps",
            AblationAxis::Beta => "beta",
            AblationAxis::Rho => "rho",
            AblationAxis::Budget => "budget",
        }
    }

    /// Whether the axis changes the pretrained agent.
    fn affects_pretraining(&self) -> bool {
        matches!(self, AblationAxis::Beta)
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => AblationAxis::Alpha,
            "substeps" | "M" | "m" => AblationAxis::Substeps,
            "beta" => AblationAxis::Beta,
            "rho" => AblationAxis::Rho,
            "budget" => AblationAxis::Budget,
            other => return Err(Error::InvalidArgument(format!("unknown ablation axis `{other}`"))),
        })
    }
}

fn whole(value: f64, what: &str) -> Result<usize> {
    if value < 1.0 || value.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("{what} must be a positive integer, got {value}")));
    }
    Ok(value as usize)
}

pub fn apply_axis(cfg: &mut RunConfig, axis: AblationAxis, value: f64) -> Result<()> {
    let h = &mut cfg.hyper;
    match axis {
        AblationAxis::Alpha => h.alpha = value,
        AblationAxis::Substeps => h.substeps = whole(value, "substeps")?,
        AblationAxis::Beta => h.beta = value,
        AblationAxis::Rho => h.rho = value,
        AblationAxis::Budget => {
            let (r, u) = budget_split(whole(value, "budget")?);
            h.n_roll = r;
            h.n_rand = u;
            h.enumerate_small = false;
        }
    }
    cfg.validate()
}

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub offline_return: f64,
    pub final_return: f64,
    pub final_std: f64,
    pub distinct_goals: usize,
    pub success_rate: f64,
    pub mean_success_length: Option<f64>,
    /// Per-goal visit counts joined with `;`.
    pub goal_visits: String,
}

impl AblationRecord {
    fn new(axis: AblationAxis, value: f64, seed: u64, offline: &EvalSummary, fin: &EvalSummary) -> Self {
        Self {
            axis: axis.to_string(),
            value,
            seed,
            offline_return: offline.mean_return,
            final_return: fin.mean_return,
            final_std: fin.std_return,
            distinct_goals: fin.distinct_goals,
            success_rate: fin.success_rate,
            mean_success_length: fin.mean_success_length,
            goal_visits: fin.goal_visits.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

/// One fine-tuning run per `(value, seed)`. Pretraining is shared across
/// values unless the axis changes it.
pub fn run_ablation(template: &RunConfig, axis: AblationAxis, values: &[f64], seeds: &[u64]) -> Result<Vec<AblationRecord>> {
    let mut cache: HashMap<u64, (Arc<Vec<Transition>>, PretrainOutcome)> = HashMap::new();
    let mut out = Vec::new();
    for &value in values {
        for &seed in seeds {
            let mut cfg = template.clone();
            cfg.seed = seed;
            apply_axis(&mut cfg, axis, value)?;
            let fresh;
            let (data, pre) = if axis.affects_pretraining() {
                let data = Arc::new(offline_dataset(&cfg)?);
                let pre = run_pretrain(&cfg, &data)?;
                fresh = (data, pre);
                (&fresh.0, &fresh.1)
            } else {
                if !cache.contains_key(&seed) {
                    let data = Arc::new(offline_dataset(&cfg)?);
                    let pre = run_pretrain(&cfg, &data)?;
                    cache.insert(seed, (data, pre));
                }
                let (d, p) = &cache[&seed];
                (d, p)
            };
            let fine = run_finetune(&cfg, pre.agent.clone(), Arc::clone(data))?;
            out.push(AblationRecord::new(axis, value, seed, &fine.offline_eval, &fine.final_eval));
        }
    }
    Ok(out)
}

/// Mean final return per swept value, in sweep order.
pub fn mean_by_value(records: &[AblationRecord]) -> Vec<(f64, f64)> {
    let mut order: Vec<f64> = Vec::new();
    for r in records {
        if !order.contains(&r.value) {
            order.push(r.value);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let xs: Vec<f64> = records.iter().filter(|r| r.value == v).map(|r| r.final_return).collect();
            (v, xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect()
}

pub fn write_ablation(path: &Path, records: &[AblationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvName;

    #[test]
    fn axis_application() {
        let mut cfg = RunConfig::for_env(EnvName::Toy4);
        apply_axis(&mut cfg, AblationAxis::Budget, 24.0).unwrap();
        assert_eq!((cfg.hyper.n_roll, cfg.hyper.n_rand), (8, 16));
        apply_axis(&mut cfg, AblationAxis::Substeps, 5.0).unwrap();
        assert_eq!(cfg.hyper.substeps, 5);
        assert!(apply_axis(&mut cfg, AblationAxis::Substeps, 2.5).is_err());
        assert!(apply_axis(&mut cfg, AblationAxis::Rho, 1.5).is_err());
        assert_eq!("M".parse::<AblationAxis>().unwrap(), AblationAxis::Substeps);
    }
}
