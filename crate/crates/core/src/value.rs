//! Mixed replay, twin Q critics, the value network and advantages.

use std::sync::Arc;

use rand::Rng;

use crate::env::{FeatureEncoder, Transition};
use crate::nn::{Adam, Mlp};
use crate::{Error, Result};

/// Online ring buffer plus a fixed offline dataset.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    online: Vec<Transition>,
    head: usize,
    offline: Arc<Vec<Transition>>,
}

/// `floor(rho * batch)`, robust to representation error in `rho`.
pub fn offline_count(batch: usize, rho: f64) -> usize {
    ((rho * batch as f64) + 1e-9).floor() as usize
}

impl ReplayBuffer {
    pub fn new(capacity: usize, offline: Arc<Vec<Transition>>) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            online: Vec::new(),
            head: 0,
            offline,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn online_len(&self) -> usize {
        self.online.len()
    }

    pub fn offline_len(&self) -> usize {
        self.offline.len()
    }

    pub fn offline(&self) -> &[Transition] {
        &self.offline
    }

    pub fn push(&mut self, t: Transition) {
        if self.online.len() < self.capacity {
            self.online.push(t);
        } else {
            self.online[self.head] = t;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    /// `floor(rho * batch)` offline transitions followed by the rest online,
    /// each drawn uniformly with replacement.
    pub fn sample_mixed<R: Rng + ?Sized>(&self, batch: usize, rho: f64, rng: &mut R) -> Result<Vec<Transition>> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidArgument(format!("offline fraction {rho} outside [0, 1]")));
        }
        let n_off = offline_count(batch, rho);
        let n_on = batch - n_off;
        if n_off > 0 && self.offline.is_empty() {
            return Err(Error::InvalidArgument("offline dataset is empty".into()));
        }
        if n_on > 0 && self.online.is_empty() {
            return Err(Error::InvalidArgument("online buffer is empty".into()));
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..n_off {
            out.push(self.offline[rng.gen_range(0..self.offline.len())]);
        }
        for _ in 0..n_on {
            out.push(self.online[rng.gen_range(0..self.online.len())]);
        }
        Ok(out)
    }
}

/// Encoded minibatch.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub len: usize,
    pub dim: usize,
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl TransitionBatch {
    pub fn from_transitions(ts: &[Transition], enc: &dyn FeatureEncoder) -> Self {
        let dim = enc.feature_dim();
        let mut obs = vec![0.0; ts.len() * dim];
        let mut next_obs = vec![0.0; ts.len() * dim];
        for (b, t) in ts.iter().enumerate() {
            enc.encode(&t.obs, &mut obs[b * dim..(b + 1) * dim]);
            enc.encode(&t.next_obs, &mut next_obs[b * dim..(b + 1) * dim]);
        }
        Self {
            len: ts.len(),
            dim,
            obs,
            next_obs,
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
        }
    }

    pub fn obs_row(&self, b: usize) -> &[f64] {
        &self.obs[b * self.dim..(b + 1) * self.dim]
    }
}

/// `y = r + gamma * v_next * (1 - done)`.
pub fn td_target(reward: f64, v_next: f64, done: bool, gamma: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * v_next
    }
}

/// Twin Q networks, a value network, their lagged copies and optimizers.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub v: Mlp,
    pub v_target: Mlp,
    pub opt_q1: Adam,
    pub opt_q2: Adam,
    pub opt_v: Adam,
}

fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

impl CriticPair {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, actions: usize, hidden: &[usize], lr_q: f64, lr_v: f64, rng: &mut R) -> Self {
        let q1 = Mlp::new(&layer_dims(obs_dim, hidden, actions), rng);
        let q2 = Mlp::new(&layer_dims(obs_dim, hidden, actions), rng);
        let v = Mlp::new(&layer_dims(obs_dim, hidden, 1), rng);
        Self::from_networks(q1, q2, v, lr_q, lr_v)
    }

    /// Targets start as copies of the online networks.
    pub fn from_networks(q1: Mlp, q2: Mlp, v: Mlp, lr_q: f64, lr_v: f64) -> Self {
        Self {
            opt_q1: Adam::new(q1.num_params(), lr_q),
            opt_q2: Adam::new(q2.num_params(), lr_q),
            opt_v: Adam::new(v.num_params(), lr_v),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            v_target: v.clone(),
            q1,
            q2,
            v,
        }
    }

    pub fn actions(&self) -> usize {
        self.q1.output_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.q1.input_dim()
    }

    /// `min(Q1, Q2)(s, .)` from the online critics.
    pub fn min_q(&self, obs: &[f64]) -> Vec<f64> {
        let a = self.q1.forward(obs).expect("obs dim");
        let b = self.q2.forward(obs).expect("obs dim");
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }

    /// `min(Q1-, Q2-)(s, .)` from the lagged critics.
    pub fn min_q_target(&self, obs: &[f64]) -> Vec<f64> {
        let a = self.q1_target.forward(obs).expect("obs dim");
        let b = self.q2_target.forward(obs).expect("obs dim");
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }

    pub fn value_target(&self, obs: &[f64]) -> f64 {
        self.v_target.forward(obs).expect("obs dim")[0]
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);
        self.v_target.soft_update_from(&self.v, tau);
    }
}

/// Mean squared error between `Q(s_b, a_b)` and fixed targets, with gradient.
pub fn critic_loss(q: &Mlp, obs: &[f64], actions: &[usize], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = actions.len();
    let k = q.output_dim();
    let cache = q.forward_batch(obs, n).expect("batch shape");
    let mut d_out = vec![0.0; n * k];
    let mut loss = 0.0;
    for b in 0..n {
        let err = cache.output_row(b)[actions[b]] - targets[b];
        loss += err * err;
        d_out[b * k + actions[b]] = 2.0 * err / n as f64;
    }
    (loss / n as f64, q.backward(&cache, &d_out))
}

/// Mean squared error between `V(s_b)` and fixed targets, with gradient.
pub fn value_loss(v: &Mlp, obs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = targets.len();
    let cache = v.forward_batch(obs, n).expect("batch shape");
    let mut d_out = vec![0.0; n];
    let mut loss = 0.0;
    for b in 0..n {
        let err = cache.output()[b] - targets[b];
        loss += err * err;
        d_out[b] = 2.0 * err / n as f64;
    }
    (loss / n as f64, v.backward(&cache, &d_out))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticLosses {
    pub q1: f64,
    pub q2: f64,
}

/// One Adam step for each critic towards `r + gamma V-(s') (1 - d)`.
pub fn critic_update(cp: &mut CriticPair, batch: &TransitionBatch, gamma: f64) -> CriticLosses {
    let v_next = cp.v_target.forward_batch(&batch.next_obs, batch.len).expect("batch shape");
    let targets: Vec<f64> = (0..batch.len)
        .map(|b| td_target(batch.rewards[b], v_next.output()[b], batch.dones[b], gamma))
        .collect();
    let (l1, g1) = critic_loss(&cp.q1, &batch.obs, &batch.actions, &targets);
    cp.opt_q1.step(cp.q1.params_mut(), &g1);
    let (l2, g2) = critic_loss(&cp.q2, &batch.obs, &batch.actions, &targets);
    cp.opt_q2.step(cp.q2.params_mut(), &g2);
    CriticLosses { q1: l1, q2: l2 }
}

/// Per-candidate advantages and their normalised, clipped versions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRow {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub clipped: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AdvantageRow {
    /// Standardises with the population std over the candidates and clips to `[-clip, clip]`.
    pub fn from_raw(raw: Vec<f64>, clip: f64, eps: f64) -> Self {
        assert!(!raw.is_empty());
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let std = (raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        let constant = raw.iter().all(|&a| a == raw[0]);
        let normalized: Vec<f64> = raw
            .iter()
            .map(|&a| if constant { 0.0 } else { (a - mean) / (std + eps) })
            .collect();
        let clipped = normalized.iter().map(|&a| a.clamp(-clip, clip)).collect();
        Self {
            raw,
            normalized,
            clipped,
            mean,
            std,
        }
    }
}

/// `A(s, a) = min_k Q_k(s, a) - V-(s)` over `cand`, from the online critics.
pub fn advantage_row(cp: &CriticPair, obs: &[f64], cand: &[usize], clip: f64, eps: f64) -> AdvantageRow {
    let q = cp.min_q(obs);
    let v = cp.value_target(obs);
    AdvantageRow::from_raw(cand.iter().map(|&a| q[a] - v).collect(), clip, eps)
}

/// Supplies the lagged target policy on a state's candidate set.
pub trait LaggedPolicyProvider {
    /// `q_min_target` holds `min_k Qk-(s, .)` over all actions.
    /// Returns candidate indices and their probabilities.
    fn lagged_policy(&mut self, obs: &[f64], q_min_target: &[f64], v_target: f64) -> (Vec<usize>, Vec<f64>);
}

/// `sum_a pi-(a|s) min_k Qk-(s, a)` for every state of the batch.
pub fn value_targets(cp: &CriticPair, obs: &[f64], n: usize, provider: &mut dyn LaggedPolicyProvider) -> Vec<f64> {
    let dim = cp.obs_dim();
    let k = cp.actions();
    let q1 = cp.q1_target.forward_batch(obs, n).expect("batch shape");
    let q2 = cp.q2_target.forward_batch(obs, n).expect("batch shape");
    let v = cp.v_target.forward_batch(obs, n).expect("batch shape");
    (0..n)
        .map(|b| {
            let qmin: Vec<f64> = (0..k).map(|a| q1.output_row(b)[a].min(q2.output_row(b)[a])).collect();
            let (cand, probs) = provider.lagged_policy(&obs[b * dim..(b + 1) * dim], &qmin, v.output()[b]);
            cand.iter().zip(&probs).map(|(&a, &p)| p * qmin[a]).sum()
        })
        .collect()
}

/// One Adam step of the value network towards the lagged-policy expectation.
pub fn value_update(cp: &mut CriticPair, batch: &TransitionBatch, provider: &mut dyn LaggedPolicyProvider) -> f64 {
    let targets = value_targets(cp, &batch.obs, batch.len, provider);
    let (loss, g) = value_loss(&cp.v, &batch.obs, &targets);
    cp.opt_v.step(cp.v.params_mut(), &g);
    loss
}
