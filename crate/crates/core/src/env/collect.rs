//! Offline data collection with a biased shortest-path behavior policy, and
//! the dataset file format.
//!
//! Dataset files start with a metadata line `# env=<name> seed=<seed>`,
//! followed by a CSV header and one row per transition:
//! `obs_index,action,reward,next_obs_index,done,keys,committed,next_keys,next_committed`
//! (`committed` is -1 when no quadrant is committed).

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvName, EnvSpec, GridObservation, Transition};
use crate::{Error, Result};

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSpec {
    pub episodes: usize,
    /// Probability of a uniform action within the chosen action class.
    pub epsilon: f64,
    /// Probability of restricting a step to unit-size moves; the rest of the
    /// time only larger moves are allowed.
    pub unit_step_bias: Option<f64>,
    /// Sampling weights over goals for the episode's target.
    pub goal_weights: Vec<f64>,
    /// Episodes that reach any of these goals are discarded.
    pub reject_goals: Vec<usize>,
    /// Lock only: quadrants allowed to be active during collection.
    pub lock_quadrants: Option<Vec<u8>>,
}

impl BehaviorSpec {
    pub fn default_for(name: EnvName) -> Self {
        let base = BehaviorSpec {
            episodes: 400,
            epsilon: 0.2,
            unit_step_bias: None,
            goal_weights: Vec::new(),
            reject_goals: Vec::new(),
            lock_quadrants: None,
        };
        match name {
            EnvName::Toy3 => BehaviorSpec {
                unit_step_bias: Some(0.85),
                goal_weights: vec![0.6, 0.2, 0.2],
                ..base
            },
            EnvName::Toy4 => BehaviorSpec {
                episodes: 600,
                unit_step_bias: Some(0.85),
                goal_weights: vec![0.6, 0.2, 0.2],
                ..base
            },
            EnvName::Toy5 => BehaviorSpec {
                episodes: 500,
                goal_weights: vec![0.5, 0.5, 0.0, 0.0],
                reject_goals: super::TOY5_COLD_GOALS.to_vec(),
                ..base
            },
            EnvName::GoalSwitch => BehaviorSpec {
                goal_weights: vec![1.0, 0.0],
                ..base
            },
            EnvName::CombLock => BehaviorSpec {
                goal_weights: vec![1.0; 4],
                lock_quadrants: Some(vec![0, 1]),
                ..base
            },
        }
    }
}

/// Moves-to-target for every cell, following the environment's own dynamics.
/// Moves that end in a goal other than the target are excluded.
pub fn distance_map(spec: &EnvSpec, target: usize, phase: u8) -> Vec<u32> {
    let n = spec.cells();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        let (r, col) = spec.coords(c);
        if spec.is_wall(r, col) || spec.goal_at(c, phase).is_some() {
            continue;
        }
        for a in 0..spec.action_count() {
            let (next, goal) = spec.next_cell(c, a, phase);
            if next == c || (goal.is_some() && next != target) {
                continue;
            }
            preds[next].push(c);
        }
    }
    let mut dist = vec![UNREACHABLE; n];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(c) = queue.pop_front() {
        for &p in &preds[c] {
            if dist[p] == UNREACHABLE {
                dist[p] = dist[c] + 1;
                queue.push_back(p);
            }
        }
    }
    dist
}

struct Behavior<'a> {
    spec: &'a EnvSpec,
    cfg: &'a BehaviorSpec,
    unit: Vec<usize>,
    large: Vec<usize>,
}

impl Behavior<'_> {
    fn act(&self, cell: usize, target: usize, dist: &[u32], phase: u8, rng: &mut ChaCha8Rng) -> usize {
        let all: Vec<usize>;
        let class: &[usize] = match self.cfg.unit_step_bias {
            Some(b) if !self.large.is_empty() => {
                if rng.gen::<f64>() < b {
                    &self.unit
                } else {
                    &self.large
                }
            }
            _ => {
                all = (0..self.spec.action_count()).collect();
                &all
            }
        };
        if rng.gen::<f64>() < self.cfg.epsilon {
            return class[rng.gen_range(0..class.len())];
        }
        let mut best = u64::MAX;
        let mut choice = class[0];
        let mut ties = 0u32;
        for &a in class {
            let (next, goal) = self.spec.next_cell(cell, a, phase);
            let score = if goal.is_some() && next != target {
                u64::MAX - 1
            } else {
                dist[next] as u64
            };
            if score < best {
                best = score;
                choice = a;
                ties = 1;
            } else if score == best {
                ties += 1;
                if rng.gen_range(0..ties) == 0 {
                    choice = a;
                }
            }
        }
        choice
    }
}

/// Rolls out the behavior policy and returns the logged transitions.
///
/// Deterministic given `seed`; the environment's own RNG is re-seeded from it.
pub fn collect_offline(spec: &EnvSpec, behavior: &BehaviorSpec, seed: u64) -> Result<Vec<Transition>> {
    let mut env = super::make_env(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    env.restrict_quadrants(behavior.lock_quadrants.clone());
    let phase = env.phase();
    let unit = (0..spec.directions.len()).map(|d| spec.encode_action(d, 1)).collect();
    let large = (0..spec.action_count()).filter(|&a| spec.decode_action(a).1 > 1).collect();
    let policy = Behavior {
        spec,
        cfg: behavior,
        unit,
        large,
    };
    let goal_cells: Vec<usize> = spec.goals.iter().map(|g| spec.cell(g.row, g.col)).collect();
    let goal_maps: Vec<Vec<u32>> = goal_cells.iter().map(|&c| distance_map(spec, c, phase)).collect();
    let key_maps: Vec<Vec<Vec<u32>>> = match &spec.lock {
        Some(lock) => lock
            .keys
            .iter()
            .map(|ks| ks.iter().map(|&(r, c)| distance_map(spec, spec.cell(r, c), phase)).collect())
            .collect(),
        None => Vec::new(),
    };

    let mut data = Vec::new();
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < behavior.episodes {
        attempts += 1;
        if attempts > behavior.episodes * 100 + 100 {
            return Err(Error::InvalidArgument("behavior policy keeps hitting rejected goals".into()));
        }
        let mut obs = env.reset();
        let goal = if spec.lock.is_some() {
            env.active_quadrant() as usize
        } else {
            crate::ctmc::sample_weighted(&behavior.goal_weights, rng.gen::<f64>())
        };
        let mut episode = Vec::new();
        let mut rejected = false;
        loop {
            let (target, dist) = match &spec.lock {
                Some(lock) if obs.committed.map_or(true, |q| q as usize == goal) && env.key_mask() != 0b111 => {
                    let mask = env.key_mask();
                    let slot = (0..3)
                        .filter(|s| mask & (1 << s) == 0)
                        .min_by_key(|&s| key_maps[goal][s][obs.cell])
                        .unwrap();
                    let (r, c) = lock.keys[goal][slot];
                    (spec.cell(r, c), &key_maps[goal][slot])
                }
                _ => (goal_cells[goal], &goal_maps[goal]),
            };
            let action = policy.act(obs.cell, target, dist, phase, &mut rng);
            let out = env.step(action)?;
            if out.goal.is_some_and(|g| behavior.reject_goals.contains(&g)) {
                rejected = true;
            }
            episode.push(Transition {
                obs,
                action,
                reward: out.reward,
                next_obs: out.obs,
                done: out.done,
            });
            obs = out.obs;
            if out.episode_over() {
                break;
            }
        }
        if !rejected {
            data.extend(episode);
            accepted += 1;
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub env: EnvName,
    pub seed: u64,
}

const COLUMNS: [&str; 9] = [
    "obs_index",
    "action",
    "reward",
    "next_obs_index",
    "done",
    "keys",
    "committed",
    "next_keys",
    "next_committed",
];

fn committed_field(c: Option<u8>) -> String {
    c.map_or("-1".to_string(), |q| q.to_string())
}

pub fn write_dataset(path: &Path, header: DatasetHeader, data: &[Transition]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "# env={} seed={}", header.env, header.seed)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(COLUMNS)?;
    for t in data {
        w.write_record([
            t.obs.cell.to_string(),
            t.action.to_string(),
            t.reward.to_string(),
            t.next_obs.cell.to_string(),
            (t.done as u8).to_string(),
            t.obs.keys_held.to_string(),
            committed_field(t.obs.committed),
            t.next_obs.keys_held.to_string(),
            committed_field(t.next_obs.committed),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Transition>)> {
    let text = std::fs::read_to_string(path)?;
    let (meta, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Dataset("missing metadata line".into()))?;
    let header = parse_meta(meta)?;
    let spec = EnvSpec::for_env(header.env);
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    if reader.headers()?.iter().collect::<Vec<_>>() != COLUMNS {
        return Err(Error::Dataset("unexpected column header".into()));
    }
    let mut data = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Dataset(format!("row {}: bad {what}", line + 1));
        let int = |i: usize, what: &str| rec[i].parse::<i64>().map_err(|_| bad(what));
        let committed = |v: i64| -> Result<Option<u8>> {
            match v {
                -1 => Ok(None),
                0..=3 => Ok(Some(v as u8)),
                _ => Err(bad("committed")),
            }
        };
        let cell = int(0, "obs_index")? as usize;
        let next = int(3, "next_obs_index")? as usize;
        let action = int(1, "action")? as usize;
        if cell >= spec.cells() || next >= spec.cells() {
            return Err(bad("cell index"));
        }
        if action >= spec.action_count() {
            return Err(bad("action"));
        }
        data.push(Transition {
            obs: GridObservation {
                cell,
                keys_held: int(5, "keys")? as u8,
                committed: committed(int(6, "committed")?)?,
            },
            action,
            reward: rec[2].parse().map_err(|_| bad("reward"))?,
            next_obs: GridObservation {
                cell: next,
                keys_held: int(7, "next_keys")? as u8,
                committed: committed(int(8, "next_committed")?)?,
            },
            done: int(4, "done")? != 0,
        });
    }
    Ok((header, data))
}

fn parse_meta(line: &str) -> Result<DatasetHeader> {
    let rest = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Dataset("metadata line must start with '#'".into()))?;
    let mut env = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("env", v)) => env = Some(v.parse::<EnvName>()?),
            Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|_| Error::Dataset("bad seed".into()))?),
            _ => return Err(Error::Dataset(format!("unknown metadata `{kv}`"))),
        }
    }
    match (env, seed) {
        (Some(env), Some(seed)) => Ok(DatasetHeader { env, seed }),
        _ => Err(Error::Dataset("metadata needs env and seed".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy3_unit_step_fraction() {
        let spec = EnvSpec::for_env(EnvName::Toy3);
        let data = collect_offline(&spec, &BehaviorSpec::default_for(EnvName::Toy3), 42).unwrap();
        let unit = data.iter().filter(|t| spec.decode_action(t.action).1 == 1).count();
        let frac = unit as f64 / data.len() as f64;
        assert!((frac - 0.85).abs() <= 0.02, "{frac}");
        // Each episode is logged, so the first transition starts at the centre.
        assert_eq!(data[0].obs.cell, spec.cell(3, 3));
    }

    #[test]
    fn toy5_excludes_cold_goals() {
        let spec = EnvSpec::for_env(EnvName::Toy5);
        let data = collect_offline(&spec, &BehaviorSpec::default_for(EnvName::Toy5), 7).unwrap();
        assert!(data.iter().all(|t| t.reward < 14.0));
        assert!(data.iter().any(|t| t.done));
    }

    #[test]
    fn lock_data_covers_two_quadrants() {
        let spec = EnvSpec::for_env(EnvName::CombLock);
        let data = collect_offline(&spec, &BehaviorSpec::default_for(EnvName::CombLock), 3).unwrap();
        let successes = data.iter().filter(|t| t.done && t.reward > 9.0).count();
        assert!(successes > 0);
        assert!(data.iter().filter(|t| t.done && t.reward > 9.0).all(|t| matches!(t.next_obs.committed, Some(0 | 1))));
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let spec = EnvSpec::for_env(EnvName::CombLock);
        let mut behavior = BehaviorSpec::default_for(EnvName::CombLock);
        behavior.episodes = 20;
        let dir = tempfile::tempdir().unwrap();
        let header = DatasetHeader {
            env: EnvName::CombLock,
            seed: 11,
        };
        let a = collect_offline(&spec, &behavior, 11).unwrap();
        let b = collect_offline(&spec, &behavior, 11).unwrap();
        write_dataset(&dir.path().join("a.csv"), header, &a).unwrap();
        write_dataset(&dir.path().join("b.csv"), header, &b).unwrap();
        let bytes_a = std::fs::read(dir.path().join("a.csv")).unwrap();
        assert_eq!(bytes_a, std::fs::read(dir.path().join("b.csv")).unwrap());
        let (h, back) = read_dataset(&dir.path().join("a.csv")).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, a);
    }

    #[test]
    fn distance_map_toy3() {
        let spec = EnvSpec::for_env(EnvName::Toy3);
        let d = distance_map(&spec, spec.cell(0, 0), 1);
        assert_eq!(d[spec.cell(3, 3)], 3);
        let d = distance_map(&spec, spec.cell(5, 5), 1);
        assert_eq!(d[spec.cell(3, 3)], 1);
    }
}
