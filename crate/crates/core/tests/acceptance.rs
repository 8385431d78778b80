//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-6 always run. The training criteria 7-10 take about an hour on
//! one core and run only with `JUMPFLOW_ACCEPTANCE=full`; otherwise they print
//! SKIP. Exit status is nonzero if any criterion that ran failed.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jumpflow::actor::{combined_objective, dfm_loss, kl_on_paths, DfmSample, RateNetwork};
use jumpflow::ctmc::{EulerDiagnostics, PathRecord};
use jumpflow::env::{EnvName, EnvSpec, MoveResult};
use jumpflow::harness::{
    check_theory, mean_by_value, offline_dataset, run_ablation, run_dqn_experiment, run_finetune, run_flow_experiment,
    run_pretrain, AblationAxis, EvalSummary, RunConfig, TheoryCheck,
};
use jumpflow::nn::{max_relative_error, Mlp};
use jumpflow::value::{critic_loss, value_loss};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn theory(which: TheoryCheck) -> Outcome {
    match check_theory(which, which.default_trials(), 0) {
        Ok(r) => outcome(r.passed(), r.to_string()),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn central_difference(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..params.len())
        .map(|p| {
            let orig = params[p];
            params[p] = orig + h;
            let up = f(params);
            params[p] = orig - h;
            let down = f(params);
            params[p] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Small random net with jittered biases so no sample sits on a ReLU kink.
fn jittered_mlp(dims: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
    let mut m = Mlp::new(dims, rng);
    m.params_mut().iter_mut().for_each(|w| *w += rng.gen_range(-0.1..0.1));
    m
}

fn rate_net(obs_dim: usize, k: usize, rng: &mut ChaCha8Rng) -> RateNetwork {
    let mlp = jittered_mlp(&[obs_dim + k + 1, 6, 6, k], rng);
    RateNetwork::from_mlp(mlp, obs_dim, k).unwrap()
}

fn with_params(net: &RateNetwork, p: &[f64]) -> RateNetwork {
    let mut n = net.clone();
    n.mlp_mut().params_mut().copy_from_slice(p);
    n
}

fn gradient_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 5];
    for _ in 0..10 {
        let (d, k, n) = (3, 4, 5);
        let obs: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut q = jittered_mlp(&[d, 6, 6, k], &mut rng);
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, g) = critic_loss(&q, &obs, &actions, &targets);
        let dims = q.dims().to_vec();
        let fd = central_difference(q.params_mut(), |p| {
            critic_loss(&Mlp::from_params(&dims, p.to_vec()).unwrap(), &obs, &actions, &targets).0
        });
        worst[0] = worst[0].max(max_relative_error(&g, &fd, 1e-6));

        let mut v = jittered_mlp(&[d, 6, 6, 1], &mut rng);
        let (_, g) = value_loss(&v, &obs, &targets);
        let dims = v.dims().to_vec();
        let fd = central_difference(v.params_mut(), |p| value_loss(&Mlp::from_params(&dims, p.to_vec()).unwrap(), &obs, &targets).0);
        worst[1] = worst[1].max(max_relative_error(&g, &fd, 1e-6));

        let net = rate_net(d, k, &mut rng);
        let reference = rate_net(d, k, &mut rng);
        let samples: Vec<DfmSample> = (0..n)
            .map(|b| DfmSample {
                obs: obs[b * d..(b + 1) * d].to_vec(),
                t: rng.gen::<f64>() * 0.95,
                source: rng.gen_range(0..k),
                target: (0..k).map(|_| rng.gen_range(0.0..3.0)).collect(),
            })
            .collect();
        let mut diag = EulerDiagnostics::default();
        let paths: Vec<PathRecord> = (0..n).map(|b| net.sample_path(&obs[b * d..(b + 1) * d], 6, &mut rng, &mut diag)).collect();
        let items: Vec<(&[f64], &PathRecord)> = (0..n).map(|b| (&obs[b * d..(b + 1) * d], &paths[b])).collect();
        let mut p = net.mlp().params().to_vec();

        let (_, g) = dfm_loss(&net, &samples);
        let fd = central_difference(&mut p, |p| dfm_loss(&with_params(&net, p), &samples).0);
        worst[2] = worst[2].max(max_relative_error(&g, &fd, 1e-6));

        let (_, g) = kl_on_paths(&net, &reference, &items);
        let fd = central_difference(&mut p, |p| {
            let (est, _) = kl_on_paths(&with_params(&net, p), &reference, &items);
            est.iter().map(|e| e.total).sum::<f64>() / est.len() as f64
        });
        worst[3] = worst[3].max(max_relative_error(&g, &fd, 1e-6));

        let (_, g) = combined_objective(&net, &reference, &samples, &items, 0.3);
        let fd = central_difference(&mut p, |p| combined_objective(&with_params(&net, p), &reference, &samples, &items, 0.3).0.combined);
        worst[4] = worst[4].max(max_relative_error(&g, &fd, 1e-6));
    }
    let names = ["critic", "value", "dfm", "kl", "combined"];
    let detail = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(worst.iter().all(|&w| w <= 1e-4), format!("max relative error over 10 instances: {detail}"))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn toy3_reproduction() -> Outcome {
    let mut flow = Vec::new();
    let mut dqn = Vec::new();
    let mut goals = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut cfg = RunConfig::for_env(EnvName::Toy3);
        cfg.seed = seed;
        let (_, f) = run_flow_experiment(&cfg).unwrap();
        let d = run_dqn_experiment(&cfg).unwrap();
        flow.push(f.final_eval.mean_return);
        dqn.push(d.final_eval.mean_return);
        goals.0.push(f.final_eval.distinct_goals);
        goals.1.push(d.final_eval.distinct_goals);
    }
    let ok = (mean(&flow) - 10.0).abs() <= 0.5
        && goals.0.iter().all(|&g| g >= 2)
        && (mean(&dqn) - 10.0).abs() <= 0.5
        && goals.1.iter().all(|&g| g == 1);
    outcome(
        ok,
        format!(
            "flow returns {flow:.2?} (mean {:.2}) goals {:?}; dqn returns {dqn:.2?} (mean {:.2}) goals {:?}",
            mean(&flow),
            goals.0,
            mean(&dqn),
            goals.1
        ),
    )
}

/// Optimal discounted value of the start cell by value iteration over cells.
fn toy4_start_value(spec: &EnvSpec, gamma: f64) -> f64 {
    let cells = spec.cells();
    let mut v = vec![0.0; cells];
    for _ in 0..200 {
        let mut next = vec![0.0; cells];
        for (c, slot) in next.iter_mut().enumerate() {
            let (r, col) = spec.coords(c);
            if spec.is_wall(r, col) || spec.goal_at(c, 1).is_some() {
                continue;
            }
            *slot = (0..spec.action_count())
                .map(|a| match spec.resolve_move(c, a, 1) {
                    MoveResult::Blocked => spec.step_penalty + gamma * v[c],
                    MoveResult::Landed { cell, .. } => spec.step_penalty + gamma * v[cell],
                    MoveResult::Goal { goal, .. } => spec.step_penalty + spec.goals[goal].reward,
                })
                .fold(f64::MIN, f64::max);
        }
        v = next;
    }
    v[spec.cell(6, 5)]
}

fn toy4_phase_transition() -> Outcome {
    let spec = EnvSpec::for_env(EnvName::Toy4);
    let v_star = toy4_start_value(&spec, 0.95);
    let cfg = RunConfig::for_env(EnvName::Toy4);
    let records = run_ablation(&cfg, AblationAxis::Budget, &[8.0, 24.0, 64.0], &SEEDS).unwrap();
    let by = mean_by_value(&records);
    let r = |b: f64| by.iter().find(|(v, _)| *v == b).unwrap().1;
    let ok = (v_star - 9.5).abs() < 1e-9 && r(24.0) >= r(8.0) + 1.0 && (r(24.0) - 10.0).abs() <= 0.5 && (r(64.0) - 10.0).abs() <= 0.5;
    outcome(
        ok,
        format!("V*(6,5) = {v_star:.6}; mean reward at budget 8/24/64: {:.2} / {:.2} / {:.2}", r(8.0), r(24.0), r(64.0)),
    )
}

/// Mean steps to goal in the post-switch phase; failed episodes count as the step cap.
fn steps_to_goal(e: &EvalSummary, cap: usize) -> f64 {
    let failures = e.episodes as f64 - e.successes as f64;
    (e.mean_success_length.unwrap_or(0.0) * e.successes as f64 + failures * cap as f64) / e.episodes as f64
}

fn goal_switch_adaptation() -> Outcome {
    let cap = EnvSpec::for_env(EnvName::GoalSwitch).max_steps;
    let (mut flow, mut dqn, mut rate) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut cfg = RunConfig::for_env(EnvName::GoalSwitch);
        cfg.seed = seed;
        let (_, f) = run_flow_experiment(&cfg).unwrap();
        let d = run_dqn_experiment(&cfg).unwrap();
        assert_eq!(f.final_eval.phase, 2);
        flow.push(steps_to_goal(&f.final_eval, cap));
        dqn.push(steps_to_goal(&d.final_eval, cap));
        rate.push(f.final_eval.success_rate);
    }
    let factor = mean(&dqn) / mean(&flow);
    let ok = factor >= 1.3 && mean(&rate) >= 0.95;
    outcome(
        ok,
        format!(
            "post-switch steps to goal: flow {flow:.2?} (mean {:.2}), dqn {dqn:.2?} (mean {:.2}), factor {factor:.2}; flow goal rate {:.2}",
            mean(&flow),
            mean(&dqn),
            mean(&rate)
        ),
    )
}

fn kl_trace_behaviour() -> Outcome {
    let mut cfg = RunConfig::for_env(EnvName::Toy5);
    cfg.hyper.alpha = 0.1;
    let data = Arc::new(offline_dataset(&cfg).unwrap());
    let pre = run_pretrain(&cfg, &data).unwrap();
    let out = run_finetune(&cfg, pre.agent, data).unwrap();
    let finite = out.kl_trace.iter().all(|(_, kl)| kl.is_finite());
    let window = |lo: u64, hi: u64| {
        let xs: Vec<f64> = out.kl_trace.iter().filter(|(s, _)| *s > lo && *s <= hi).map(|(_, kl)| kl.abs()).collect();
        (!xs.is_empty()).then(|| mean(&xs))
    };
    let mut settled = 0;
    let mut events = 0;
    for &r in &out.refresh_steps {
        if let (Some(before), Some(after)) = (window(r.saturating_sub(100), r), window(r, r + 100)) {
            if r + 100 <= cfg.budget.online_steps {
                events += 1;
                settled += usize::from(after < before);
            }
        }
    }
    let ok = finite && events > 0 && 2 * settled > events;
    outcome(
        ok,
        format!("finite {finite}; |KL| lower after the refresh in {settled} of {events} refresh events"),
    )
}

fn main() {
    let full = std::env::var("JUMPFLOW_ACCEPTANCE").is_ok_and(|v| v == "full");
    let criteria: Vec<(&str, bool, fn() -> Outcome)> = vec![
        ("1 mass conservation", false, || theory(TheoryCheck::Mass)),
        ("2 coverage formula", false, || theory(TheoryCheck::Coverage)),
        ("3 stability bound", false, || theory(TheoryCheck::Stability)),
        ("4 path-KL estimator", false, || theory(TheoryCheck::Kl)),
        ("5 Euler convergence", false, || theory(TheoryCheck::Euler)),
        ("6 gradient integrity", false, gradient_integrity),
        ("7 Toy3 reproduction", true, toy3_reproduction),
        ("8 Toy4 fidelity and phase transition", true, toy4_phase_transition),
        ("9 Goal-Switch adaptation", true, goal_switch_adaptation),
        ("10 KL trace behaviour", true, kl_trace_behaviour),
    ];
    let mut failed = 0;
    for (name, heavy, run) in criteria {
        if heavy && !full {
            println!("criterion {name}: SKIP (set JUMPFLOW_ACCEPTANCE=full)");
            continue;
        }
        let t = Instant::now();
        let o = run();
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {name}: {verdict} [{:.0}s] {}", t.elapsed().as_secs_f64(), o.detail);
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
