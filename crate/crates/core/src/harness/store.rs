//! Agent checkpoint directories: one network file per model plus `agent.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::RateNetwork;
use crate::dqn::DqnAgent;
use crate::nn::{read_checkpoint, write_checkpoint, CheckpointMeta};
use crate::value::CriticPair;
use crate::{Error, Result};

pub const AGENT_FILE: &str = "agent.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Flow,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub kind: AgentKind,
    pub env: String,
    pub obs_dim: usize,
    pub actions: usize,
    pub seed: u64,
    pub step: u64,
}

/// Critics plus the rate network.
#[derive(Debug, Clone)]
pub struct FlowAgent {
    pub critics: CriticPair,
    pub actor: RateNetwork,
}

#[derive(Debug, Clone)]
pub enum StoredAgent {
    Flow(FlowAgent),
    Dqn(DqnAgent),
}

fn manifest_of(dir: &Path) -> Result<AgentManifest> {
    let path = dir.join(AGENT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Checkpoint {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| Error::Checkpoint {
        path,
        reason: e.to_string(),
    })
}

fn write_manifest(dir: &Path, m: &AgentManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(AGENT_FILE), toml::to_string(m).expect("manifest serializes"))?;
    Ok(())
}

pub fn save_flow_agent(dir: &Path, agent: &FlowAgent, env: &str, meta: CheckpointMeta) -> Result<()> {
    write_manifest(
        dir,
        &AgentManifest {
            kind: AgentKind::Flow,
            env: env.to_string(),
            obs_dim: agent.actor.obs_dim(),
            actions: agent.actor.actions(),
            seed: meta.seed,
            step: meta.step,
        },
    )?;
    write_checkpoint(&dir.join("q1.net"), &agent.critics.q1, meta)?;
    write_checkpoint(&dir.join("q2.net"), &agent.critics.q2, meta)?;
    write_checkpoint(&dir.join("v.net"), &agent.critics.v, meta)?;
    write_checkpoint(&dir.join("rate.net"), agent.actor.mlp(), meta)
}

pub fn save_dqn_agent(dir: &Path, agent: &DqnAgent, env: &str, meta: CheckpointMeta) -> Result<()> {
    write_manifest(
        dir,
        &AgentManifest {
            kind: AgentKind::Dqn,
            env: env.to_string(),
            obs_dim: agent.q.input_dim(),
            actions: agent.actions(),
            seed: meta.seed,
            step: meta.step,
        },
    )?;
    write_checkpoint(&dir.join("q.net"), &agent.q, meta)
}

/// Loads either agent kind. Optimiser state is not stored; fresh Adam
/// instances use the given learning rates.
pub fn load_agent(dir: &Path, lr_q: f64, lr_v: f64) -> Result<(AgentManifest, StoredAgent)> {
    let m = manifest_of(dir)?;
    let agent = match m.kind {
        AgentKind::Flow => {
            let (q1, _) = read_checkpoint(&dir.join("q1.net"))?;
            let (q2, _) = read_checkpoint(&dir.join("q2.net"))?;
            let (v, _) = read_checkpoint(&dir.join("v.net"))?;
            let (rate, _) = read_checkpoint(&dir.join("rate.net"))?;
            let actor = RateNetwork::from_mlp(rate, m.obs_dim, m.actions)?;
            StoredAgent::Flow(FlowAgent {
                critics: CriticPair::from_networks(q1, q2, v, lr_q, lr_v),
                actor,
            })
        }
        AgentKind::Dqn => {
            let (q, _) = read_checkpoint(&dir.join("q.net"))?;
            StoredAgent::Dqn(DqnAgent::from_network(q, lr_q))
        }
    };
    Ok((m, agent))
}
