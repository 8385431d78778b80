//! Concrete layouts of the five environments.

use super::{EnvName, EnvSpec, GoalSpec, LockLayout, StartRule, COMPASS, LOCK_EXTRA_DIRECTIONS};

/// Global step at which the goal-switch reward moves from A to B.
pub const GOAL_SWITCH_STEP: u64 = 25_000;

fn goal(row: usize, col: usize, reward: f64) -> GoalSpec {
    GoalSpec {
        row,
        col,
        reward,
        phase: None,
    }
}

/// 6x6, barrier on row 2 with gaps at columns 0 and 5. Both +10 goals are
/// three moves from the centre, the +6 goal one move (SE by 2).
pub fn toy3() -> EnvSpec {
    EnvSpec {
        name: EnvName::Toy3,
        height: 6,
        width: 6,
        directions: COMPASS.to_vec(),
        step_sizes: 2,
        goals: vec![goal(0, 0, 10.0), goal(0, 5, 10.0), goal(5, 5, 6.0)],
        walls: (1..=4).map(|c| (2, c)).collect(),
        step_penalty: -0.1,
        max_steps: 20,
        start: StartRule::Fixed(3, 3),
        switch_step: None,
        lock: None,
    }
}

/// 12x12 with no step penalty. The single wall at (3,8) blocks the direct
/// NE shot from the start to (0,11), so every +10 goal needs two moves and
/// `V*(6,5) = 0.95 * 10 = 9.5`.
pub fn toy4() -> EnvSpec {
    EnvSpec {
        name: EnvName::Toy4,
        height: 12,
        width: 12,
        directions: COMPASS.to_vec(),
        step_sizes: 16,
        goals: vec![goal(0, 0, 10.0), goal(0, 11, 10.0), goal(11, 11, 6.0)],
        walls: vec![(3, 8)],
        step_penalty: 0.0,
        max_steps: 20,
        start: StartRule::Fixed(6, 5),
        switch_step: None,
        lock: None,
    }
}

/// 20x20 split by a cross wall on row 10 and column 10, each arm with a
/// two-cell gap. Warm (+10) goals in the top quadrants, cold (+15) goals in
/// the bottom ones. Episodes start next to the centre in a random quadrant.
pub fn toy5() -> EnvSpec {
    let gaps = [4, 5, 14, 15];
    let mut walls = Vec::new();
    for i in 0..20 {
        if !gaps.contains(&i) {
            walls.push((10, i));
            if i != 10 {
                walls.push((i, 10));
            }
        }
    }
    EnvSpec {
        name: EnvName::Toy5,
        height: 20,
        width: 20,
        directions: COMPASS.to_vec(),
        step_sizes: 8,
        goals: vec![goal(0, 0, 10.0), goal(0, 19, 10.0), goal(19, 0, 15.0), goal(19, 19, 15.0)],
        walls,
        step_penalty: -0.2,
        max_steps: 40,
        start: StartRule::Choice(vec![(9, 9), (9, 11), (11, 9), (11, 11)]),
        switch_step: None,
        lock: None,
    }
}

/// Goal indices of the Toy5 cold goals.
pub const TOY5_COLD_GOALS: [usize; 2] = [2, 3];

/// 6x6 open grid. Goal A (0,0) pays +15 until the switch, goal B (5,5) after.
pub fn goal_switch() -> EnvSpec {
    EnvSpec {
        name: EnvName::GoalSwitch,
        height: 6,
        width: 6,
        directions: COMPASS.to_vec(),
        step_sizes: 2,
        goals: vec![
            GoalSpec {
                row: 0,
                col: 0,
                reward: 15.0,
                phase: Some(1),
            },
            GoalSpec {
                row: 5,
                col: 5,
                reward: 15.0,
                phase: Some(2),
            },
        ],
        walls: Vec::new(),
        step_penalty: -0.1,
        max_steps: 20,
        start: StartRule::Fixed(3, 3),
        switch_step: Some(GOAL_SWITCH_STEP),
        lock: None,
    }
}

/// 16x16, four 8x8 quadrants. Each quadrant has three keys and a goal in its
/// outer corner behind an L-shaped chamber wall.
pub fn comb_lock() -> EnvSpec {
    let n = 16;
    let mirror = |q: usize, (r, c): (usize, usize)| -> (usize, usize) {
        let r = if q >= 2 { n - 1 - r } else { r };
        let c = if q % 2 == 1 { n - 1 - c } else { c };
        (r, c)
    };
    let local_keys = [(3, 5), (5, 3), (6, 6)];
    let local_walls = [(0, 2), (1, 2), (2, 2), (2, 1)];
    let mut keys = [[(0, 0); 3]; 4];
    let mut walls = Vec::new();
    let mut goals = Vec::new();
    for q in 0..4 {
        for (s, &k) in local_keys.iter().enumerate() {
            keys[q][s] = mirror(q, k);
        }
        walls.extend(local_walls.iter().map(|&w| mirror(q, w)));
        let (r, c) = mirror(q, (0, 0));
        goals.push(goal(r, c, 10.0));
    }
    let mut directions = COMPASS.to_vec();
    directions.extend_from_slice(&LOCK_EXTRA_DIRECTIONS);
    EnvSpec {
        name: EnvName::CombLock,
        height: n,
        width: n,
        directions,
        step_sizes: 12,
        goals,
        walls,
        step_penalty: -0.1,
        max_steps: 80,
        start: StartRule::Choice(vec![(7, 7), (7, 8), (8, 7), (8, 8)]),
        switch_step: None,
        lock: Some(LockLayout {
            keys,
            key_reward: 1.0,
            correct_reward: 10.0,
            wrong_reward: -3.0,
        }),
    }
}
