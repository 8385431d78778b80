//! Double-DQN baseline with epsilon-greedy exploration.

use rand::Rng;

use crate::nn::{Adam, Mlp};
use crate::value::{critic_loss, TransitionBatch};

#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub q: Mlp,
    pub q_target: Mlp,
    pub opt: Adam,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, actions: usize, hidden: &[usize], lr: f64, rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(actions);
        Self::from_network(Mlp::new(&dims, rng), lr)
    }

    pub fn from_network(q: Mlp, lr: f64) -> Self {
        let opt = Adam::new(q.num_params(), lr);
        Self {
            q_target: q.clone(),
            q,
            opt,
        }
    }

    pub fn actions(&self) -> usize {
        self.q.output_dim()
    }

    pub fn q_values(&self, obs: &[f64]) -> Vec<f64> {
        self.q.forward(obs).expect("obs dim")
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.q_target.soft_update_from(&self.q, tau);
    }
}

/// Argmax with the lowest index winning ties.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    // Always consume the coin so the stream does not depend on epsilon hitting 0.
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        rng.gen_range(0..q.len())
    } else {
        greedy(q)
    }
}

/// Linear anneal from `start` to `end` over `steps`, then flat.
pub fn linear_epsilon(step: u64, steps: u64, start: f64, end: f64) -> f64 {
    if steps == 0 || step >= steps {
        return end;
    }
    start + (end - start) * step as f64 / steps as f64
}

/// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`, or `r` at terminals.
pub fn double_dqn_target(reward: f64, q_online_next: &[f64], q_target_next: &[f64], done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_target_next[greedy(q_online_next)]
    }
}

/// One Adam step on the squared TD error. Returns the batch loss.
pub fn dqn_update(agent: &mut DqnAgent, batch: &TransitionBatch, gamma: f64) -> f64 {
    let online = agent.q.forward_batch(&batch.next_obs, batch.len).expect("batch shape");
    let target = agent.q_target.forward_batch(&batch.next_obs, batch.len).expect("batch shape");
    let targets: Vec<f64> = (0..batch.len)
        .map(|b| {
            double_dqn_target(
                batch.rewards[b],
                online.output_row(b),
                target.output_row(b),
                batch.dones[b],
                gamma,
            )
        })
        .collect();
    let (loss, grad) = critic_loss(&agent.q, &batch.obs, &batch.actions, &targets);
    agent.opt.step(agent.q.params_mut(), &grad);
    loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn targets() {
        assert_eq!(double_dqn_target(1.5, &[0.0, 1.0], &[3.0, 2.0], true, 0.99), 1.5);
        let y = double_dqn_target(0.0, &[0.0, 1.0], &[3.0, 2.0], false, 0.99);
        assert!((y - 1.98).abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_and_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epsilon_greedy(&[0.0, 5.0, 1.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng), 0);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[epsilon_greedy(&[9.0, 0.0, 0.0, 0.0], 1.0, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(linear_epsilon(0, 100, 1.0, 0.05), 1.0);
        assert!((linear_epsilon(50, 100, 1.0, 0.05) - 0.525).abs() < 1e-12);
        assert_eq!(linear_epsilon(500, 100, 1.0, 0.05), 0.05);
    }

    #[test]
    fn two_state_fixed_point() {
        // s0 -a1-> s1 (r=0), s0 -a0-> terminal (r=0.5), s1 -any-> terminal (r=1).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = DqnAgent::new(2, 2, &[16], 1e-3, &mut rng);
        let s0 = [1.0, 0.0];
        let s1 = [0.0, 1.0];
        let rows = [(s0, 1usize, 0.0, s1, false), (s0, 0, 0.5, s1, true), (s1, 0, 1.0, s0, true), (s1, 1, 1.0, s0, true)];
        let mut batch = TransitionBatch {
            len: 4,
            dim: 2,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        };
        for (s, a, r, n, d) in rows {
            batch.obs.extend_from_slice(&s);
            batch.next_obs.extend_from_slice(&n);
            batch.actions.push(a);
            batch.rewards.push(r);
            batch.dones.push(d);
        }
        let mut loss = f64::INFINITY;
        for _ in 0..5000 {
            loss = dqn_update(&mut agent, &batch, 0.9);
            agent.soft_update(0.005);
        }
        assert!(loss < 1e-3, "loss {loss}");
        let q0 = agent.q_values(&s0);
        assert!((q0[1] - 0.9).abs() < 0.05 && (q0[0] - 0.5).abs() < 0.05);
    }
}
