//! Pretraining, fine-tuning, the DQN baseline and evaluation.

use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{mean_std, MetricsRow, Window};
use super::seeds::{self, Seeds};
use super::store::FlowAgent;
use crate::actor::{actor_update, refresh_reference, Actor, ActorConfig, ActorRngs, RateNetwork, ReferenceGenerator};
use crate::ctmc::EulerDiagnostics;
use crate::dqn::{dqn_update, epsilon_greedy, greedy, linear_epsilon, DqnAgent};
use crate::env::{collect_offline, make_env, BehaviorSpec, EnvSpec, FeatureEncoder, Transition};
use crate::policy::CandidateLagged;
use crate::pretrain::{
    dataset_states, pretrain_critics, pretrain_generator, CriticPretrainConfig, CriticPretrainLog, GeneratorFitConfig,
};
use crate::value::{critic_update, value_update, CriticPair, ReplayBuffer, TransitionBatch};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub phase: u8,
    pub mean_return: f64,
    pub std_return: f64,
    pub goal_visits: Vec<u64>,
    pub distinct_goals: usize,
    pub successes: u64,
    pub success_rate: f64,
    /// Mean episode length over successful episodes.
    pub mean_success_length: Option<f64>,
}

/// Phase an environment is in after `steps` global steps.
pub fn phase_after(spec: &EnvSpec, steps: u64) -> u8 {
    match spec.switch_step {
        Some(s) if steps >= s => 2,
        _ => 1,
    }
}

/// Runs `episodes` full episodes with `policy` on a fresh env seeded by `seed`.
pub fn evaluate<F>(spec: &EnvSpec, episodes: usize, seed: u64, phase: u8, mut policy: F) -> Result<EvalSummary>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> usize,
{
    let mut env = make_env(spec.clone(), seed)?;
    if spec.switch_step.is_some() {
        env.pin_phase(phase);
    }
    let mut rng = Seeds::new(seed).rng(seeds::EVAL);
    let mut returns = Vec::with_capacity(episodes);
    let mut goal_visits = vec![0u64; spec.goals.len()];
    let mut successes = 0u64;
    let mut success_lengths = Vec::new();
    let mut feats = vec![0.0; spec.feature_dim()];
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut ret = 0.0;
        loop {
            spec.encode(&obs, &mut feats);
            let out = env.step(policy(&feats, &mut rng))?;
            ret += out.reward;
            obs = out.obs;
            if out.episode_over() {
                if let Some(g) = out.goal {
                    goal_visits[g] += 1;
                }
                if out.success {
                    successes += 1;
                    success_lengths.push(env.steps_elapsed() as f64);
                }
                break;
            }
        }
        returns.push(ret);
    }
    let (mean_return, std_return) = mean_std(&returns);
    Ok(EvalSummary {
        episodes,
        phase,
        mean_return,
        std_return,
        distinct_goals: goal_visits.iter().filter(|&&v| v > 0).count(),
        goal_visits,
        successes,
        success_rate: successes as f64 / episodes as f64,
        mean_success_length: (!success_lengths.is_empty()).then(|| mean_std(&success_lengths).0),
    })
}

/// Evaluates the CTMC policy: `X_0` uniform, `substeps` Euler steps, no exploration noise.
pub fn evaluate_flow(net: &RateNetwork, spec: &EnvSpec, episodes: usize, seed: u64, phase: u8, substeps: usize) -> Result<EvalSummary> {
    let mut diag = EulerDiagnostics::default();
    evaluate(spec, episodes, seed, phase, |s, rng| net.sample_action(s, substeps, rng, &mut diag))
}

/// Greedy evaluation of a Q network with lowest-index tie-break.
pub fn evaluate_greedy(agent: &DqnAgent, spec: &EnvSpec, episodes: usize, seed: u64, phase: u8) -> Result<EvalSummary> {
    evaluate(spec, episodes, seed, phase, |s, _| greedy(&agent.q_values(s)))
}

/// Offline dataset for `cfg` from the env's default behavior policy.
pub fn offline_dataset(cfg: &RunConfig) -> Result<Vec<Transition>> {
    let name = cfg.env_name()?;
    collect_offline(&cfg.env_spec()?, &BehaviorSpec::default_for(name), Seeds::new(cfg.seed).derive(seeds::DATA))
}

/// Untrained critics and generator, initialised from the `init` stream.
pub fn fresh_agent(cfg: &RunConfig) -> Result<FlowAgent> {
    let spec = cfg.env_spec()?;
    let h = &cfg.hyper;
    let mut rng = Seeds::new(cfg.seed).rng(seeds::INIT);
    let (d, k) = (spec.feature_dim(), spec.action_count());
    let critics = CriticPair::new(d, k, &h.hidden, h.lr_q, h.lr_v, &mut rng);
    let actor = RateNetwork::new(d, k, &h.hidden, &mut rng);
    Ok(FlowAgent { critics, actor })
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub agent: FlowAgent,
    pub critic_log: CriticPretrainLog,
    pub generator_loss: f64,
}

pub fn run_pretrain(cfg: &RunConfig, data: &[Transition]) -> Result<PretrainOutcome> {
    let spec = cfg.env_spec()?;
    let h = &cfg.hyper;
    let b = &cfg.budget;
    let mut agent = fresh_agent(cfg)?;
    let mut rng = Seeds::new(cfg.seed).rng(seeds::PRETRAIN);
    let critic_log = pretrain_critics(
        &mut agent.critics,
        data,
        &spec,
        &CriticPretrainConfig {
            steps: b.critic_pretrain_steps,
            batch: b.pretrain_batch,
            gamma: h.gamma,
            tau: h.tau,
            beta: h.beta,
            adv_clip: h.adv_clip,
            adv_eps: h.adv_eps,
        },
        &mut rng,
    )?;
    let states = dataset_states(data, &spec);
    let generator_loss = pretrain_generator(
        &mut agent.actor,
        &agent.critics,
        &states,
        h.beta,
        h.adv_clip,
        h.adv_eps,
        &GeneratorFitConfig {
            steps: b.generator_pretrain_steps,
            batch: b.pretrain_batch,
            delta: h.delta,
            lr: h.lr_actor,
        },
        &mut rng,
    )?;
    Ok(PretrainOutcome {
        agent,
        critic_log,
        generator_loss,
    })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub agent: FlowAgent,
    pub rows: Vec<MetricsRow>,
    /// `(step, mean L_KL over the actor batch)` for every actor update.
    pub kl_trace: Vec<(u64, f64)>,
    pub refresh_steps: Vec<u64>,
    pub offline_eval: EvalSummary,
    pub periodic_evals: Vec<(u64, EvalSummary)>,
    pub final_eval: EvalSummary,
    pub euler: EulerDiagnostics,
}

fn seed_buffer(buffer: &mut ReplayBuffer, data: &[Transition], n: usize, rng: &mut ChaCha8Rng) {
    let n = n.min(data.len());
    for i in sample_indices(rng, data.len(), n).into_iter() {
        buffer.push(data[i]);
    }
}

/// The online loop. Each numbered comment names one step of the procedure.
pub fn run_finetune(cfg: &RunConfig, start: FlowAgent, data: Arc<Vec<Transition>>) -> Result<FinetuneOutcome> {
    let spec = cfg.env_spec()?;
    let h = &cfg.hyper;
    let b = &cfg.budget;
    let seeds = Seeds::new(cfg.seed);
    if start.actor.actions() != spec.action_count() || start.actor.obs_dim() != spec.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.action_count(),
            got: start.actor.actions(),
        });
    }
    let mut batch_rng = seeds.rng(seeds::BATCH);
    let mut interact_rng = seeds.rng(seeds::INTERACT);
    let mut cand_rng = seeds.rng(seeds::CANDIDATE);
    let mut flow_rng = seeds.rng(seeds::FLOW);
    let mut kl_rng = seeds.rng(seeds::KL_PATH);
    let eval_seed = seeds.derive(seeds::EVAL);

    // 1-3. Critics, value, generator from pretraining; reference = generator.
    let FlowAgent { mut critics, actor } = start;
    let mut actor = Actor::new(actor, h.lr_actor);
    let mut reference = ReferenceGenerator::new(actor.net.clone());
    // 4. Buffer seeded with a subset of the offline data.
    let mut buffer = ReplayBuffer::new(h.replay_capacity, Arc::clone(&data));
    seed_buffer(&mut buffer, &data, h.buffer_seed, &mut batch_rng);

    let actor_cfg = ActorConfig {
        alpha: h.alpha,
        beta: h.beta,
        delta: h.delta,
        smoothing: h.smoothing,
        adv_clip: h.adv_clip,
        adv_eps: h.adv_eps,
        candidates: cfg.candidate_config(),
    };
    let mut diag = EulerDiagnostics::default();
    let offline_eval = evaluate_flow(&actor.net, &spec, b.eval_episodes, eval_seed, phase_after(&spec, 0), h.substeps)?;

    let mut env = make_env(spec.clone(), seeds.derive(seeds::ENV))?;
    let mut obs = env.reset();
    let mut ep_return = 0.0;
    let mut window = Window::default();
    let mut rows = Vec::new();
    let mut kl_trace = Vec::new();
    let mut refresh_steps = Vec::new();
    let mut periodic_evals = Vec::new();
    for n in 1..=b.online_steps {
        // 6-7. Sample an action from the CTMC and step the environment.
        let feats = spec.features(&obs);
        let action = actor.net.sample_action(&feats, h.substeps, &mut interact_rng, &mut diag);
        let out = env.step(action)?;
        // 8. Store the transition.
        buffer.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.obs,
            done: out.done,
        });
        ep_return += out.reward;
        obs = out.obs;
        if out.episode_over() {
            window.episode(ep_return, out.goal, out.success);
            ep_return = 0.0;
            obs = env.reset();
        }
        // 9. Mixed minibatch.
        let ts = buffer.sample_mixed(h.batch, h.rho, &mut batch_rng)?;
        let batch = TransitionBatch::from_transitions(&ts, &spec);
        // 10. Critic regression toward r + gamma V_target(s').
        let q = critic_update(&mut critics, &batch, h.gamma);
        // 11. Value regression toward the lagged target policy over candidates.
        let v_loss = {
            let mut provider = CandidateLagged {
                reference: &mut reference,
                cfg: actor_cfg.candidates,
                smoothing: h.smoothing,
                beta: h.beta,
                clip: h.adv_clip,
                adv_eps: h.adv_eps,
                rng: &mut cand_rng,
                diag: &mut diag,
            };
            value_update(&mut critics, &batch, &mut provider)
        };
        window.losses(0.5 * (q.q1 + q.q2), v_loss);
        // 12-20. Per-state candidates, target, bridge, coupling, DFM and KL; one actor step.
        if n % h.actor_delay == 0 {
            let picks = sample_indices(&mut batch_rng, batch.len, h.actor_batch.min(batch.len));
            let states: Vec<Vec<f64>> = picks.into_iter().map(|i| batch.obs_row(i).to_vec()).collect();
            let mut rngs = ActorRngs {
                candidate: &mut cand_rng,
                flow: &mut flow_rng,
                kl: &mut kl_rng,
            };
            let losses = actor_update(&mut actor, &mut reference, &critics, &states, &actor_cfg, &mut rngs, &mut diag)?;
            window.actor(losses.dfm, losses.kl);
            kl_trace.push((n, losses.kl));
        }
        // 21. Soft target updates.
        critics.soft_update(h.tau);
        // 22. Reference refresh.
        if n % h.refresh_interval == 0 {
            refresh_reference(&actor, &mut reference);
            refresh_steps.push(n);
        }
        let mut eval_return = None;
        if b.eval_interval > 0 && n % b.eval_interval == 0 {
            let e = evaluate_flow(&actor.net, &spec, b.eval_episodes, eval_seed, phase_after(&spec, n), h.substeps)?;
            eval_return = Some(e.mean_return);
            periodic_evals.push((n, e));
        }
        if n % b.log_interval == 0 || n == b.online_steps {
            rows.push(window.flush(n, diag.clamped, reference.refreshes(), eval_return));
        }
    }
    let final_eval = if b.online_steps == 0 {
        offline_eval.clone()
    } else {
        evaluate_flow(&actor.net, &spec, b.eval_episodes, eval_seed, phase_after(&spec, b.online_steps), h.substeps)?
    };
    Ok(FinetuneOutcome {
        agent: FlowAgent {
            critics,
            actor: actor.net,
        },
        rows,
        kl_trace,
        refresh_steps,
        offline_eval,
        periodic_evals,
        final_eval,
        euler: diag,
    })
}

/// Offline data, pretraining (or a cold start), then fine-tuning.
pub fn run_flow_experiment(cfg: &RunConfig) -> Result<(PretrainOutcome, FinetuneOutcome)> {
    let data = Arc::new(offline_dataset(cfg)?);
    let pre = if cfg.budget.cold_start {
        PretrainOutcome {
            agent: fresh_agent(cfg)?,
            critic_log: CriticPretrainLog::default(),
            generator_loss: f64::NAN,
        }
    } else {
        run_pretrain(cfg, &data)?
    };
    let fine = run_finetune(cfg, pre.agent.clone(), data)?;
    Ok((pre, fine))
}

#[derive(Debug, Clone)]
pub struct DqnOutcome {
    pub agent: DqnAgent,
    pub rows: Vec<MetricsRow>,
    pub offline_eval: EvalSummary,
    pub final_eval: EvalSummary,
}

/// Offline TD phase on the dataset, then epsilon-greedy online training.
pub fn run_dqn(cfg: &RunConfig, data: Arc<Vec<Transition>>) -> Result<DqnOutcome> {
    let spec = cfg.env_spec()?;
    let h = &cfg.hyper;
    let b = &cfg.budget;
    let seeds = Seeds::new(cfg.seed);
    let mut init_rng = seeds.rng(seeds::INIT);
    let mut batch_rng = seeds.rng(seeds::BATCH);
    let mut interact_rng = seeds.rng(seeds::INTERACT);
    let eval_seed = seeds.derive(seeds::EVAL);
    if data.is_empty() {
        return Err(Error::Dataset("offline dataset is empty".into()));
    }
    let mut agent = DqnAgent::new(spec.feature_dim(), spec.action_count(), &h.hidden, cfg.dqn.lr, &mut init_rng);
    let mut picked = Vec::with_capacity(h.batch);
    for _ in 0..cfg.dqn.offline_steps {
        picked.clear();
        picked.extend((0..h.batch).map(|_| data[rand::Rng::gen_range(&mut batch_rng, 0..data.len())]));
        dqn_update(&mut agent, &TransitionBatch::from_transitions(&picked, &spec), h.gamma);
        agent.soft_update(h.tau);
    }
    let offline_eval = evaluate_greedy(&agent, &spec, b.eval_episodes, eval_seed, phase_after(&spec, 0))?;

    let mut buffer = ReplayBuffer::new(h.replay_capacity, Arc::clone(&data));
    seed_buffer(&mut buffer, &data, h.buffer_seed, &mut batch_rng);
    let mut env = make_env(spec.clone(), seeds.derive(seeds::ENV))?;
    let mut obs = env.reset();
    let mut ep_return = 0.0;
    let mut window = Window::default();
    let mut rows = Vec::new();
    let anneal = b.online_steps / 2;
    for n in 1..=b.online_steps {
        let eps = linear_epsilon(n - 1, anneal, cfg.dqn.eps_start, cfg.dqn.eps_end);
        let action = epsilon_greedy(&agent.q_values(&spec.features(&obs)), eps, &mut interact_rng);
        let out = env.step(action)?;
        buffer.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.obs,
            done: out.done,
        });
        ep_return += out.reward;
        obs = out.obs;
        if out.episode_over() {
            window.episode(ep_return, out.goal, out.success);
            ep_return = 0.0;
            obs = env.reset();
        }
        let ts = buffer.sample_mixed(h.batch, h.rho, &mut batch_rng)?;
        let loss = dqn_update(&mut agent, &TransitionBatch::from_transitions(&ts, &spec), h.gamma);
        agent.soft_update(h.tau);
        window.losses(loss, f64::NAN);
        if n % b.log_interval == 0 || n == b.online_steps {
            let mut row = window.flush(n, 0, 0, None);
            row.value_loss = None;
            rows.push(row);
        }
    }
    let final_eval = if b.online_steps == 0 {
        offline_eval.clone()
    } else {
        evaluate_greedy(&agent, &spec, b.eval_episodes, eval_seed, phase_after(&spec, b.online_steps))?
    };
    Ok(DqnOutcome {
        agent,
        rows,
        offline_eval,
        final_eval,
    })
}

pub fn run_dqn_experiment(cfg: &RunConfig) -> Result<DqnOutcome> {
    run_dqn(cfg, Arc::new(offline_dataset(cfg)?))
}
