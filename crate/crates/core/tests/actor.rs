use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jumpflow::actor::{bridge_sample, combined_objective, path_kl_estimate, Actor, DfmSample, RateNetwork};
use jumpflow::bridge::TargetPolicyFull;
use jumpflow::ctmc::{euler_marginals, exact_marginals, l1_distance, validate_rate_row, Distribution, EulerDiagnostics, PathRecord};
use proptest::prelude::*;

fn samples_for(target: &TargetPolicyFull, n: usize, rng: &mut ChaCha8Rng) -> Vec<DfmSample> {
    (0..n).map(|_| bridge_sample(&[1.0], target, 0.05, rng).unwrap()).collect()
}

/// Runs `steps` Adam steps of the combined objective from `start` against a
/// frozen copy of `start`, on a fixed batch and a fixed path stream.
fn displacement(start: &RateNetwork, samples: &[DfmSample], alpha: f64, steps: usize) -> f64 {
    let reference = start.clone();
    let mut actor = Actor::new(start.clone(), 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut diag = EulerDiagnostics::default();
    for _ in 0..steps {
        let paths: Vec<PathRecord> = (0..8).map(|_| actor.net.sample_path(&[1.0], 10, &mut rng, &mut diag)).collect();
        let items: Vec<(&[f64], &PathRecord)> = paths.iter().map(|p| (&[1.0][..], p)).collect();
        let (_, g) = combined_objective(&actor.net, &reference, samples, &items, alpha);
        actor.opt.step(actor.net.mlp_mut().params_mut(), &g);
    }
    actor
        .net
        .mlp()
        .params()
        .iter()
        .zip(start.mlp().params())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn kl_weight_limits_parameter_drift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = RateNetwork::new(1, 4, &[16, 16], &mut rng);
    let target = TargetPolicyFull::from_probs(vec![0.85, 0.05, 0.05, 0.05]).unwrap();
    let samples = samples_for(&target, 32, &mut rng);
    let d: Vec<f64> = [0.0, 0.1, 10.0].iter().map(|&a| displacement(&start, &samples, a, 200)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}

#[test]
fn alpha_zero_is_pure_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = RateNetwork::new(1, 3, &[8], &mut rng);
    let reference = RateNetwork::new(1, 3, &[8], &mut rng);
    let target = TargetPolicyFull::from_probs(vec![0.2, 0.3, 0.5]).unwrap();
    let samples = samples_for(&target, 6, &mut rng);
    let mut diag = EulerDiagnostics::default();
    let path = net.sample_path(&[1.0], 6, &mut rng, &mut diag);
    let items = [(&[1.0][..], &path)];
    let (with_kl, g) = combined_objective(&net, &reference, &samples, &items, 0.0);
    let (none, g0) = combined_objective(&net, &reference, &samples, &[], 0.0);
    assert_eq!(with_kl.combined, with_kl.dfm);
    assert_eq!(with_kl.dfm, none.dfm);
    assert_eq!(none.kl, 0.0);
    assert_eq!(g, g0);
}

#[test]
fn closed_loop_fit_reaches_target() {
    let target = TargetPolicyFull::from_probs(vec![0.55, 0.25, 0.15, 0.05]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut actor = Actor::new(RateNetwork::new(1, 4, &[32, 32], &mut rng), 1e-3);
    let reference = actor.net.clone();
    for _ in 0..2000 {
        let samples = samples_for(&target, 16, &mut rng);
        let (_, g) = combined_objective(&actor.net, &reference, &samples, &[], 0.0);
        actor.opt.step(actor.net.mlp_mut().params_mut(), &g);
    }
    let p0 = Distribution::uniform(4);
    let exact = exact_marginals(|i, t| actor.net.rate_row(&[1.0], i, t), &p0, 1.0, 4000);
    assert!(exact.l1_distance(target.probs()) < 0.1, "{:?}", exact.probs());
    // The sampler itself, at the toy step count.
    let euler = euler_marginals(|i, _, t| actor.net.rate_row(&[1.0], i, t), &p0, 10);
    assert!(l1_distance(euler.probs(), target.probs()) < 0.15, "{:?}", euler.probs());
}

#[test]
fn kl_is_zero_against_itself_for_any_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut diag = EulerDiagnostics::default();
    for m in [1, 3, 10, 40] {
        let net = RateNetwork::new(3, 6, &[8], &mut rng);
        for _ in 0..20 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (est, _, grad) = path_kl_estimate(&net, &net, &obs, m, &mut rng, &mut diag);
            assert_eq!(est.total, 0.0);
            assert!(grad.iter().all(|g| g.is_finite()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rate_rows_valid_for_any_parameters(
        seed in any::<u64>(),
        scale in 0.01f64..50.0,
        source in 0usize..5,
        t in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = RateNetwork::new(2, 5, &[6], &mut rng);
        net.mlp_mut().params_mut().iter_mut().for_each(|w| *w *= scale);
        let obs = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let row = net.rate_row(&obs, source, t);
        prop_assert!(validate_rate_row(&row).is_ok());
        prop_assert_eq!(row.off_diag()[source], 0.0);
    }
}
