//! Gridworld environments with factored (direction, step size) actions.
//!
//! Coordinates are `(row, col)` with row 0 at the top. A move of size `n`
//! in direction `d` is resolved one hop at a time: entering an active goal cell
//! ends the move and the episode; hitting a wall or the boundary before any
//! goal cancels the whole move (the agent stays put, the step penalty still
//! applies).

mod collect;
mod layouts;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub use collect::{collect_offline, distance_map, read_dataset, write_dataset, BehaviorSpec, DatasetHeader};
pub use layouts::{GOAL_SWITCH_STEP, TOY5_COLD_GOALS};

/// Compass directions in action-index order.
pub const COMPASS: [(i32, i32); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Extra hop directions of the lock environment, appended after [`COMPASS`].
pub const LOCK_EXTRA_DIRECTIONS: [(i32, i32); 4] = [(-2, 1), (1, 2), (2, -1), (-1, -2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    Toy3,
    Toy4,
    Toy5,
    GoalSwitch,
    CombLock,
}

impl EnvName {
    pub const ALL: [EnvName; 5] = [EnvName::Toy3, EnvName::Toy4, EnvName::Toy5, EnvName::GoalSwitch, EnvName::CombLock];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnvName::Toy3 => "toy3",
            EnvName::Toy4 => "toy4",
            EnvName::Toy5 => "toy5",
            EnvName::GoalSwitch => "goal-switch",
            EnvName::CombLock => "comb-lock",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL
            .iter()
            .copied()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub row: usize,
    pub col: usize,
    pub reward: f64,
    /// `None`: active in every phase. `Some(p)`: active only in phase `p`.
    pub phase: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartRule {
    Fixed(usize, usize),
    /// Uniform over the listed cells.
    Choice(Vec<(usize, usize)>),
}

/// Keys and goal chambers of the lock environment. Quadrant `q` owns
/// `keys[q]` and goal index `q` of the goal list.
#[derive(Debug, Clone, PartialEq)]
pub struct LockLayout {
    pub keys: [[(usize, usize); 3]; 4],
    pub key_reward: f64,
    pub correct_reward: f64,
    pub wrong_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: EnvName,
    pub height: usize,
    pub width: usize,
    pub directions: Vec<(i32, i32)>,
    pub step_sizes: usize,
    pub goals: Vec<GoalSpec>,
    pub walls: Vec<(usize, usize)>,
    pub step_penalty: f64,
    pub max_steps: usize,
    pub start: StartRule,
    /// Global step after which new episodes run in phase 2.
    pub switch_step: Option<u64>,
    pub lock: Option<LockLayout>,
}

/// Compact observation: position plus lock extras.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridObservation {
    pub cell: usize,
    pub keys_held: u8,
    pub committed: Option<u8>,
}

impl GridObservation {
    pub fn at(cell: usize) -> Self {
        Self {
            cell,
            keys_held: 0,
            committed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: GridObservation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: GridObservation,
    pub done: bool,
}

/// Maps observations to network inputs.
pub trait FeatureEncoder {
    fn feature_dim(&self) -> usize;
    fn encode(&self, obs: &GridObservation, out: &mut [f64]);

    fn features(&self, obs: &GridObservation) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_dim()];
        self.encode(obs, &mut v);
        v
    }
}

/// Outcome of resolving one move.
#[derive(Debug, Clone, PartialEq)]
pub enum MoveResult {
    Blocked,
    Landed { cell: usize, visited: Vec<usize> },
    Goal { cell: usize, goal: usize, visited: Vec<usize> },
}

impl EnvSpec {
    pub fn named(name: &str) -> Result<Self> {
        Ok(Self::for_env(name.parse()?))
    }

    pub fn for_env(name: EnvName) -> Self {
        match name {
            EnvName::Toy3 => layouts::toy3(),
            EnvName::Toy4 => layouts::toy4(),
            EnvName::Toy5 => layouts::toy5(),
            EnvName::GoalSwitch => layouts::goal_switch(),
            EnvName::CombLock => layouts::comb_lock(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |r: usize, c: usize| r < self.height && c < self.width;
        if self.goals.iter().any(|g| !inside(g.row, g.col)) || self.walls.iter().any(|&(r, c)| !inside(r, c)) {
            return Err(Error::InvalidArgument("goal or wall outside the grid".into()));
        }
        if self.directions.is_empty() || self.step_sizes == 0 {
            return Err(Error::InvalidArgument("empty action factorisation".into()));
        }
        if let Some(lock) = &self.lock {
            if self.goals.len() != 4 || lock.keys.iter().flatten().any(|&(r, c)| !inside(r, c)) {
                return Err(Error::InvalidArgument("lock layout needs 4 goals and in-grid keys".into()));
            }
        }
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        self.directions.len() * self.step_sizes
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    /// `(direction index, step size)` of an action.
    pub fn decode_action(&self, action: usize) -> (usize, usize) {
        (action / self.step_sizes, action % self.step_sizes + 1)
    }

    pub fn encode_action(&self, direction: usize, size: usize) -> usize {
        direction * self.step_sizes + size - 1
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls.contains(&(row, col))
    }

    pub fn goal_active(&self, goal: usize, phase: u8) -> bool {
        self.goals[goal].phase.map_or(true, |p| p == phase)
    }

    pub fn goal_at(&self, cell: usize, phase: u8) -> Option<usize> {
        let (r, c) = self.coords(cell);
        (0..self.goals.len()).find(|&g| self.goals[g].row == r && self.goals[g].col == c && self.goal_active(g, phase))
    }

    pub fn quadrant_of(&self, cell: usize) -> u8 {
        let (r, c) = self.coords(cell);
        let bottom = (r >= self.height / 2) as u8;
        let right = (c >= self.width / 2) as u8;
        bottom * 2 + right
    }

    /// Resolves a move from `cell` ignoring keys and episode state.
    pub fn resolve_move(&self, cell: usize, action: usize, phase: u8) -> MoveResult {
        let (d, size) = self.decode_action(action);
        let (dr, dc) = self.directions[d];
        let (mut r, mut c) = self.coords(cell);
        let mut visited = Vec::with_capacity(size);
        for _ in 0..size {
            let nr = r as i64 + dr as i64;
            let nc = c as i64 + dc as i64;
            if nr < 0 || nc < 0 || nr >= self.height as i64 || nc >= self.width as i64 {
                return MoveResult::Blocked;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if self.is_wall(nr, nc) {
                return MoveResult::Blocked;
            }
            r = nr;
            c = nc;
            let here = self.cell(r, c);
            visited.push(here);
            if let Some(goal) = self.goal_at(here, phase) {
                return MoveResult::Goal { cell: here, goal, visited };
            }
        }
        MoveResult::Landed {
            cell: self.cell(r, c),
            visited,
        }
    }

    /// Cell after a move, or `None` when the move ends in a goal.
    pub fn next_cell(&self, cell: usize, action: usize, phase: u8) -> (usize, Option<usize>) {
        match self.resolve_move(cell, action, phase) {
            MoveResult::Blocked => (cell, None),
            MoveResult::Landed { cell, .. } => (cell, None),
            MoveResult::Goal { cell, goal, .. } => (cell, Some(goal)),
        }
    }

    pub fn max_goal_reward(&self) -> f64 {
        let goal = self.goals.iter().map(|g| g.reward).fold(f64::MIN, f64::max);
        match &self.lock {
            Some(l) => l.correct_reward.max(goal) + 3.0 * l.key_reward,
            None => goal,
        }
    }

    /// Bounds on an episode's undiscounted return.
    pub fn return_bounds(&self) -> (f64, f64) {
        let worst_goal = match &self.lock {
            Some(l) => l.wrong_reward.min(0.0),
            None => 0.0,
        };
        let lo = self.step_penalty.min(0.0) * self.max_steps as f64 + worst_goal;
        (lo, self.max_goal_reward())
    }

    fn extras_dim(&self) -> usize {
        if self.lock.is_some() {
            5
        } else {
            0
        }
    }
}

impl FeatureEncoder for EnvSpec {
    fn feature_dim(&self) -> usize {
        self.cells() + self.extras_dim()
    }

    fn encode(&self, obs: &GridObservation, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[obs.cell] = 1.0;
        if self.lock.is_some() {
            let base = self.cells();
            out[base] = obs.keys_held as f64 / 3.0;
            if let Some(q) = obs.committed {
                out[base + 1 + q as usize] = 1.0;
            }
        }
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub obs: GridObservation,
    pub reward: f64,
    /// A goal ended the episode.
    pub done: bool,
    /// The step limit ended the episode.
    pub truncated: bool,
    pub goal: Option<usize>,
    /// Reached a goal that counts as solving the task.
    pub success: bool,
}

impl StepOutcome {
    pub fn episode_over(&self) -> bool {
        self.done || self.truncated
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    spec: Arc<EnvSpec>,
    rng: ChaCha8Rng,
    cell: usize,
    steps: usize,
    global_steps: u64,
    phase: u8,
    phase_pinned: bool,
    finished: bool,
    key_mask: u8,
    committed: Option<u8>,
    active_quadrant: u8,
    quadrant_pool: Option<Vec<u8>>,
}

pub fn make_env(spec: EnvSpec, seed: u64) -> Result<Env> {
    spec.validate()?;
    let mut env = Env {
        spec: Arc::new(spec),
        rng: ChaCha8Rng::seed_from_u64(seed),
        cell: 0,
        steps: 0,
        global_steps: 0,
        phase: 1,
        phase_pinned: false,
        finished: true,
        key_mask: 0,
        committed: None,
        active_quadrant: 0,
        quadrant_pool: None,
    };
    env.reset();
    Ok(env)
}

impl Env {
    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn shared_spec(&self) -> Arc<EnvSpec> {
        Arc::clone(&self.spec)
    }

    pub fn phase(&self) -> u8 {
        self.phase
    }

    /// Fixes the phase regardless of the global step counter.
    pub fn pin_phase(&mut self, phase: u8) {
        self.phase = phase;
        self.phase_pinned = true;
    }

    pub fn global_steps(&self) -> u64 {
        self.global_steps
    }

    pub fn steps_elapsed(&self) -> usize {
        self.steps
    }

    /// Bit `s` set when key slot `s` of the committed quadrant is held.
    pub fn key_mask(&self) -> u8 {
        self.key_mask
    }

    pub fn active_quadrant(&self) -> u8 {
        self.active_quadrant
    }

    /// Restricts which quadrant can be active in future lock episodes.
    pub fn restrict_quadrants(&mut self, pool: Option<Vec<u8>>) {
        self.quadrant_pool = pool;
    }

    pub fn observation(&self) -> GridObservation {
        GridObservation {
            cell: self.cell,
            keys_held: self.key_mask.count_ones() as u8,
            committed: self.committed,
        }
    }

    pub fn reset(&mut self) -> GridObservation {
        if let (Some(s), false) = (self.spec.switch_step, self.phase_pinned) {
            self.phase = if self.global_steps >= s { 2 } else { 1 };
        }
        let (r, c) = match &self.spec.start {
            StartRule::Fixed(r, c) => (*r, *c),
            StartRule::Choice(cells) => cells[self.rng.gen_range(0..cells.len())],
        };
        if self.spec.lock.is_some() {
            self.active_quadrant = match &self.quadrant_pool {
                Some(pool) => pool[self.rng.gen_range(0..pool.len())],
                None => self.rng.gen_range(0..4),
            };
        }
        self.cell = self.spec.cell(r, c);
        self.steps = 0;
        self.finished = false;
        self.key_mask = 0;
        self.committed = None;
        self.observation()
    }

    /// Starts an episode from an arbitrary free cell.
    pub fn reset_at(&mut self, cell: usize) -> Result<GridObservation> {
        let (r, c) = self.spec.coords(cell);
        if cell >= self.spec.cells() || self.spec.is_wall(r, c) {
            return Err(Error::InvalidArgument(format!("cell {cell} is not a free cell")));
        }
        self.reset();
        self.cell = cell;
        Ok(self.observation())
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let k = self.spec.action_count();
        if action >= k {
            return Err(Error::InvalidAction { action, actions: k });
        }
        if self.finished {
            return Err(Error::EpisodeDone);
        }
        self.steps += 1;
        self.global_steps += 1;
        let spec = Arc::clone(&self.spec);
        let mut reward = spec.step_penalty;
        let mut done = false;
        let mut goal_hit = None;
        let mut success = false;
        match spec.resolve_move(self.cell, action, self.phase) {
            MoveResult::Blocked => {}
            MoveResult::Landed { cell, visited } => {
                reward += self.collect_keys(&visited);
                self.cell = cell;
            }
            MoveResult::Goal { cell, goal, visited } => {
                reward += self.collect_keys(&visited);
                self.cell = cell;
                done = true;
                goal_hit = Some(goal);
                match &spec.lock {
                    Some(lock) => {
                        let q = goal as u8;
                        if self.committed == Some(q) && self.key_mask == 0b111 && q == self.active_quadrant {
                            reward += lock.correct_reward;
                            success = true;
                        } else {
                            reward += lock.wrong_reward;
                        }
                    }
                    None => {
                        reward += spec.goals[goal].reward;
                        success = true;
                    }
                }
            }
        }
        let truncated = !done && self.steps >= spec.max_steps;
        self.finished = done || truncated;
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done,
            truncated,
            goal: goal_hit,
            success,
        })
    }

    fn collect_keys(&mut self, visited: &[usize]) -> f64 {
        let Some(lock) = &self.spec.lock else {
            return 0.0;
        };
        let mut reward = 0.0;
        for &cell in visited {
            let (r, c) = self.spec.coords(cell);
            for q in 0..4u8 {
                if let Some(slot) = lock.keys[q as usize].iter().position(|&k| k == (r, c)) {
                    if self.committed.is_none() {
                        self.committed = Some(q);
                    }
                    let bit = 1u8 << slot;
                    if self.committed == Some(q) && self.key_mask & bit == 0 {
                        self.key_mask |= bit;
                        reward += lock.key_reward;
                    }
                }
            }
        }
        reward
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy3() -> Env {
        make_env(EnvSpec::for_env(EnvName::Toy3), 0).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for n in EnvName::ALL {
            assert_eq!(n.as_str().parse::<EnvName>().unwrap(), n);
            let spec = EnvSpec::for_env(n);
            spec.validate().unwrap();
        }
        assert!(matches!(EnvSpec::named("toy9"), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn action_counts() {
        let counts: Vec<usize> = EnvName::ALL.iter().map(|&n| EnvSpec::for_env(n).action_count()).collect();
        assert_eq!(counts, vec![16, 128, 64, 16, 144]);
    }

    #[test]
    fn toy3_starts_at_centre() {
        let env = toy3();
        assert_eq!(env.spec().coords(env.observation().cell), (3, 3));
        assert_eq!(env.steps_elapsed(), 0);
    }

    #[test]
    fn blocked_move_keeps_position() {
        let mut env = toy3();
        let spec = env.spec().clone();
        // North from (3,3) runs into the barrier on row 2.
        let a = spec.encode_action(0, 1);
        let out = env.step(a).unwrap();
        assert_eq!(spec.coords(out.obs.cell), (3, 3));
        assert_eq!(out.reward, spec.step_penalty);
        assert!(!out.done);
    }

    #[test]
    fn goal_step_adds_penalty() {
        let mut env = toy3();
        let spec = env.spec().clone();
        env.reset_at(spec.cell(1, 0)).unwrap();
        let out = env.step(spec.encode_action(0, 1)).unwrap();
        assert!(out.done && out.success);
        assert!((out.reward - (10.0 - 0.1)).abs() < 1e-12);
        assert_eq!(out.goal, Some(0));
        assert!(matches!(env.step(0), Err(Error::EpisodeDone)));
    }

    #[test]
    fn move_stops_at_first_goal() {
        let spec = EnvSpec::for_env(EnvName::Toy3);
        // Two cells north from (1,0) would leave the grid, but (0,0) is entered first.
        let r = spec.resolve_move(spec.cell(1, 0), spec.encode_action(0, 2), 1);
        assert!(matches!(r, MoveResult::Goal { goal: 0, .. }));
    }

    #[test]
    fn out_of_range_action() {
        let mut env = toy3();
        assert!(matches!(env.step(16), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn goal_switch_changes_goal() {
        let mut env = make_env(EnvSpec::for_env(EnvName::GoalSwitch), 0).unwrap();
        let spec = env.spec().clone();
        let a_goal = spec.cell(0, 0);
        env.reset_at(spec.cell(1, 0)).unwrap();
        assert!(env.step(spec.encode_action(0, 1)).unwrap().done);
        env.global_steps = spec.switch_step.unwrap();
        env.reset();
        assert_eq!(env.phase(), 2);
        env.reset_at(spec.cell(1, 0)).unwrap();
        let out = env.step(spec.encode_action(0, 1)).unwrap();
        assert!(!out.done);
        assert_eq!(out.obs.cell, a_goal);
        env.reset_at(spec.cell(4, 4)).unwrap();
        let out = env.step(spec.encode_action(3, 1)).unwrap();
        assert!(out.done && out.reward > 14.0);
    }

    #[test]
    fn lock_commitment_and_reward() {
        let mut env = make_env(EnvSpec::for_env(EnvName::CombLock), 5).unwrap();
        let spec = env.spec().clone();
        let lock = spec.lock.clone().unwrap();
        env.restrict_quadrants(Some(vec![0]));
        env.reset();
        // Walk onto each key of quadrant 0 by teleporting next to it.
        let mut total = 0.0;
        for (i, &(r, c)) in lock.keys[0].iter().enumerate() {
            let from = spec.cell(r + 1, c);
            env.cell = from;
            let out = env.step(spec.encode_action(0, 1)).unwrap();
            total += out.reward;
            assert_eq!(out.obs.committed, Some(0));
            assert_eq!(out.obs.keys_held as usize, i + 1);
        }
        assert!((total - 3.0 * (1.0 + spec.step_penalty)).abs() < 1e-12);
        // Keys of another quadrant no longer count.
        let (r, c) = lock.keys[1][0];
        env.cell = spec.cell(r + 1, c);
        let out = env.step(spec.encode_action(0, 1)).unwrap();
        assert_eq!(out.obs.committed, Some(0));
        assert_eq!(out.reward, spec.step_penalty);
        // Goal 0 sits at (0,0); its chamber opens downwards at (2,0).
        env.cell = spec.cell(1, 0);
        let out = env.step(spec.encode_action(0, 1)).unwrap();
        assert!(out.done && out.success);
        assert!((out.reward - (10.0 + spec.step_penalty)).abs() < 1e-12);
    }

    #[test]
    fn features_one_hot() {
        let spec = EnvSpec::for_env(EnvName::CombLock);
        let obs = GridObservation {
            cell: 17,
            keys_held: 2,
            committed: Some(3),
        };
        let f = spec.features(&obs);
        assert_eq!(f.len(), 261);
        assert_eq!(f[..256].iter().filter(|&&x| x == 1.0).count(), 1);
        assert_eq!(f[17], 1.0);
        assert!((f[256] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f[260], 1.0);
    }
}
