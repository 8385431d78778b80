//! Offline stage: critics by TD learning, then the reference generator by
//! advantage-weighted flow matching over the full action space.

use std::collections::HashMap;

use rand::Rng;

use crate::actor::{bridge_sample, dfm_loss, RateNetwork};
use crate::bridge::TargetPolicyFull;
use crate::env::{FeatureEncoder, Transition};
use crate::nn::Adam;
use crate::policy::{target_policy, FullSpaceLagged, ReferencePolicy};
use crate::value::{advantage_row, critic_update, value_update, CriticPair, TransitionBatch};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticPretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub gamma: f64,
    pub tau: f64,
    pub beta: f64,
    pub adv_clip: f64,
    pub adv_eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CriticPretrainLog {
    pub final_q_loss: f64,
    pub final_v_loss: f64,
}

/// TD-trains `cp` on uniformly resampled minibatches of `data`.
pub fn pretrain_critics<R: Rng + ?Sized>(
    cp: &mut CriticPair,
    data: &[Transition],
    enc: &dyn FeatureEncoder,
    cfg: &CriticPretrainConfig,
    rng: &mut R,
) -> Result<CriticPretrainLog> {
    if data.is_empty() {
        return Err(Error::Dataset("offline dataset is empty".into()));
    }
    let mut lagged = FullSpaceLagged {
        beta: cfg.beta,
        clip: cfg.adv_clip,
        adv_eps: cfg.adv_eps,
    };
    let mut log = CriticPretrainLog::default();
    let mut picked = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.steps {
        picked.clear();
        picked.extend((0..cfg.batch).map(|_| data[rng.gen_range(0..data.len())]));
        let batch = TransitionBatch::from_transitions(&picked, enc);
        let q = critic_update(cp, &batch, cfg.gamma);
        log.final_q_loss = 0.5 * (q.q1 + q.q2);
        log.final_v_loss = value_update(cp, &batch, &mut lagged);
        cp.soft_update(cfg.tau);
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorFitConfig {
    pub steps: usize,
    pub batch: usize,
    pub delta: f64,
    pub lr: f64,
}

/// Regresses `net` onto the coupling rates toward fixed per-state targets.
/// Returns the last minibatch loss.
pub fn fit_generator<R: Rng + ?Sized>(
    net: &mut RateNetwork,
    targets: &[(Vec<f64>, TargetPolicyFull)],
    cfg: &GeneratorFitConfig,
    rng: &mut R,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no generator targets".into()));
    }
    let mut opt = Adam::new(net.mlp().num_params(), cfg.lr);
    let mut last = 0.0;
    for _ in 0..cfg.steps {
        let mut samples = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (obs, target) = &targets[rng.gen_range(0..targets.len())];
            samples.push(bridge_sample(obs, target, cfg.delta, rng)?);
        }
        let (loss, grad) = dfm_loss(net, &samples);
        opt.step(net.mlp_mut().params_mut(), &grad);
        last = loss;
    }
    Ok(last)
}

/// Full-space advantage-tilted target `exp(A/beta)` for one state.
pub fn pretrain_target(cp: &CriticPair, obs: &[f64], beta: f64, adv_clip: f64, adv_eps: f64) -> TargetPolicyFull {
    let k = cp.actions();
    let all: Vec<usize> = (0..k).collect();
    let adv = advantage_row(cp, obs, &all, adv_clip, adv_eps);
    let uniform = ReferencePolicy {
        indices: all,
        probs: vec![1.0 / k as f64; k],
    };
    target_policy(&uniform, &adv, beta, k)
}

/// Trains `net` toward the pretraining target on every distinct state in `states`.
pub fn pretrain_generator<R: Rng + ?Sized>(
    net: &mut RateNetwork,
    cp: &CriticPair,
    states: &[Vec<f64>],
    beta: f64,
    adv_clip: f64,
    adv_eps: f64,
    cfg: &GeneratorFitConfig,
    rng: &mut R,
) -> Result<f64> {
    // Critics are frozen here, so each distinct state needs one target.
    let mut seen: HashMap<Vec<u64>, ()> = HashMap::new();
    let mut targets = Vec::new();
    for s in states {
        let key: Vec<u64> = s.iter().map(|x| x.to_bits()).collect();
        if seen.insert(key, ()).is_none() {
            targets.push((s.clone(), pretrain_target(cp, s, beta, adv_clip, adv_eps)));
        }
    }
    fit_generator(net, &targets, cfg, rng)
}

/// Feature rows of every transition's source state, in dataset order.
pub fn dataset_states(data: &[Transition], enc: &dyn FeatureEncoder) -> Vec<Vec<f64>> {
    data.iter().map(|t| enc.features(&t.obs)).collect()
}
