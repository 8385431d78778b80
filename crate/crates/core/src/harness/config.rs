//! Run configuration: embedded defaults, per-env override sections, user files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::env::{EnvName, EnvSpec};
use crate::policy::CandidateConfig;
use crate::{Error, Result};

/// Built-in defaults. Base values follow the method's default table; each
/// `[overrides.<env>]` section replaces keys for that environment.
pub const DEFAULT_CONFIG: &str = r#"
env = "toy3"
seed = 0

[hyper]
gamma = 0.99
beta = 1.0
alpha = 0.1
tau = 0.005
adv_clip = 5.0
smoothing = 0.01
adv_eps = 1e-6
substeps = 20
n_roll = 64
n_rand = 16
enumerate_small = false
refresh_interval = 1000
rho = 0.25
lr_q = 3e-4
lr_v = 3e-4
lr_actor = 1e-4
batch = 256
delta = 0.05
actor_batch = 8
actor_delay = 1
hidden = [256, 256]
replay_capacity = 100000
buffer_seed = 256

[budget]
online_steps = 3000
critic_pretrain_steps = 2000
generator_pretrain_steps = 1000
pretrain_batch = 64
eval_episodes = 50
log_interval = 100
eval_interval = 0
cold_start = false

[dqn]
lr = 3e-4
eps_start = 1.0
eps_end = 0.05
offline_steps = 2000

[overrides.toy3.hyper]
gamma = 0.95
beta = 0.4
alpha = 0.15
substeps = 10
n_roll = 16
n_rand = 8
enumerate_small = true
refresh_interval = 500
lr_actor = 3e-4
batch = 64
buffer_seed = 64

[overrides.toy4.hyper]
gamma = 0.95
beta = 0.4
alpha = 0.15
substeps = 10
n_roll = 8
n_rand = 16
refresh_interval = 500
lr_actor = 3e-4
batch = 64
buffer_seed = 64

[overrides.toy5.hyper]
gamma = 0.95
beta = 0.4
alpha = 0.1
substeps = 10
n_roll = 32
n_rand = 16
refresh_interval = 500
lr_actor = 3e-4
batch = 64
buffer_seed = 64

[overrides.toy5.budget]
online_steps = 10000
eval_episodes = 100

[overrides.goal-switch.hyper]
gamma = 0.95
beta = 0.4
alpha = 0.15
substeps = 10
n_roll = 16
n_rand = 8
enumerate_small = true
refresh_interval = 500
lr_actor = 3e-4
batch = 64
buffer_seed = 64

[overrides.goal-switch.budget]
online_steps = 27500

[overrides.comb-lock.hyper]
gamma = 0.95
beta = 0.4
alpha = 0.1
substeps = 10
n_roll = 32
n_rand = 16
refresh_interval = 500
lr_actor = 3e-4
batch = 64
buffer_seed = 64

[overrides.comb-lock.budget]
online_steps = 20000
eval_episodes = 100
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub adv_clip: f64,
    /// Additive smoothing of the reference policy over candidates.
    pub smoothing: f64,
    /// Denominator guard for advantage normalisation.
    pub adv_eps: f64,
    /// Euler sub-steps, shared by action sampling and candidate rollouts.
    pub substeps: usize,
    pub n_roll: usize,
    pub n_rand: usize,
    /// Use the whole action set when `n_roll + n_rand >= K`.
    pub enumerate_small: bool,
    pub refresh_interval: u64,
    pub rho: f64,
    pub lr_q: f64,
    pub lr_v: f64,
    pub lr_actor: f64,
    pub batch: usize,
    pub delta: f64,
    pub actor_batch: usize,
    pub actor_delay: u64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    /// Offline transitions copied into the online buffer before the first step.
    pub buffer_seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub online_steps: u64,
    pub critic_pretrain_steps: usize,
    /// Generator pretraining gradient steps.
    pub generator_pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub eval_episodes: usize,
    pub log_interval: u64,
    /// Periodic evaluation cadence in online steps, 0 to disable.
    pub eval_interval: u64,
    /// Fine-tune from freshly initialised networks instead of a checkpoint.
    pub cold_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub offline_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub hyper: Hyper,
    pub budget: Budget,
    pub dqn: DqnConfig,
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Config(format!("{origin}: {e}")))
}

impl RunConfig {
    /// Defaults for `env` with its override section applied.
    pub fn for_env(env: EnvName) -> Self {
        Self::resolve(&format!("env = \"{env}\"")).expect("embedded defaults are valid")
    }

    /// Layers `user` over the defaults, then applies the override section of
    /// the selected environment. Keys set in `user` win over env overrides.
    pub fn resolve(user: &str) -> Result<Self> {
        let mut merged = parse_table(DEFAULT_CONFIG, "defaults")?;
        let user = parse_table(user, "config")?;
        merge(&mut merged, &user);
        let overrides = match merged.remove("overrides") {
            Some(Value::Table(t)) => t,
            Some(_) => return Err(Error::Config("`overrides` must be a table".into())),
            None => Table::new(),
        };
        let env = match merged.get("env") {
            Some(Value::String(s)) => s.parse::<EnvName>()?,
            _ => return Err(Error::Config("`env` must be a string".into())),
        };
        if let Some(section) = overrides.get(env.as_str()) {
            let Value::Table(section) = section else {
                return Err(Error::Config(format!("overrides.{env} must be a table")));
            };
            let mut layered = section.clone();
            // Re-apply the user's explicit keys on top of the env section.
            merge(&mut layered, &user_without_overrides(&user));
            merge(&mut merged, &layered);
        }
        let cfg: RunConfig = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::resolve(&text)
    }

    /// Like [`RunConfig::resolve`], with command-line `env` and `seed` taking
    /// precedence over the file.
    pub fn resolve_with(user: &str, env: Option<EnvName>, seed: Option<u64>) -> Result<Self> {
        let mut table = parse_table(user, "config")?;
        if let Some(env) = env {
            table.insert("env".into(), Value::String(env.as_str().into()));
        }
        if let Some(seed) = seed {
            let seed = i64::try_from(seed).map_err(|_| Error::Config("seed must fit in i64".into()))?;
            table.insert("seed".into(), Value::Integer(seed));
        }
        Self::resolve(&toml::to_string(&table).expect("table serializes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn env_name(&self) -> Result<EnvName> {
        self.env.parse()
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        Ok(EnvSpec::for_env(self.env_name()?))
    }

    pub fn candidate_config(&self) -> CandidateConfig {
        CandidateConfig {
            n_roll: self.hyper.n_roll,
            n_rand: self.hyper.n_rand,
            substeps: self.hyper.substeps,
            enumerate_small: self.hyper.enumerate_small,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        self.env_name()?;
        if !(0.0..=1.0).contains(&h.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if h.beta <= 0.0 {
            return bad("beta must be positive");
        }
        if h.alpha < 0.0 {
            return bad("alpha must be non-negative");
        }
        if !(0.0..=1.0).contains(&h.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&h.rho) {
            return bad("rho must lie in [0, 1]");
        }
        if !(h.delta > 0.0 && h.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if h.substeps == 0 || h.batch == 0 || h.actor_batch == 0 || h.actor_delay == 0 {
            return bad("substeps, batch, actor_batch and actor_delay must be positive");
        }
        if h.n_roll + h.n_rand == 0 {
            return bad("candidate budget n_roll + n_rand must be positive");
        }
        if h.refresh_interval == 0 || self.budget.log_interval == 0 {
            return bad("refresh_interval and log_interval must be positive");
        }
        if h.hidden.is_empty() || h.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if self.budget.eval_episodes == 0 {
            return bad("eval_episodes must be positive");
        }
        Ok(())
    }
}

fn user_without_overrides(user: &Table) -> Table {
    let mut t = user.clone();
    t.remove("overrides");
    t
}

/// Splits a total candidate budget into rollout and uniform draws (one third rollouts).
pub fn budget_split(budget: usize) -> (usize, usize) {
    let n_roll = budget / 3;
    (n_roll, budget - n_roll)
}
