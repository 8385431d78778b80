//! Property suites for the transport and simulation guarantees, runnable
//! without any training. Each trial `n` uses seed `seed + n` so a failure can
//! be reproduced alone.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{path_kl_estimate, path_kl_from_rates, RateNetwork};
use crate::bridge::{
    bridge_point, bridge_probability_floor, coupling_row, excluded_mass, expected_excluded_l1, stability_lhs_rhs,
    CoverageParams, TargetPolicyFull,
};
use crate::ctmc::{
    euler_marginals, exact_marginals, l1_distance, simulate, simulate_from, ConstantGenerator, Distribution,
    EulerDiagnostics, GeneratorRates, RateRow, DEFAULT_FINE_STEPS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TheoryCheck {
    Mass,
    Coverage,
    Stability,
    Kl,
    Euler,
}

impl TheoryCheck {
    pub const ALL: [TheoryCheck; 5] = [
        TheoryCheck::Mass,
        TheoryCheck::Coverage,
        TheoryCheck::Stability,
        TheoryCheck::Kl,
        TheoryCheck::Euler,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TheoryCheck::Mass => "mass",
            TheoryCheck::Coverage => "coverage",
            TheoryCheck::Stability => "stability",
            TheoryCheck::Kl => "kl",
            TheoryCheck::Euler => "euler",
        }
    }

    /// Trial count used when the caller does not give one.
    pub fn default_trials(&self) -> usize {
        match self {
            TheoryCheck::Mass | TheoryCheck::Stability => 1_000,
            TheoryCheck::Coverage | TheoryCheck::Kl => 100_000,
            TheoryCheck::Euler => 1_000_000,
        }
    }
}

impl fmt::Display for TheoryCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoryCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheoryCheck::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown theory check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub check: TheoryCheck,
    pub trials: usize,
    pub failures: usize,
    pub detail: String,
    /// First failing instance with the seed that reproduces it.
    pub first_failure: Option<String>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl fmt::Display for TheoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} ({} trials): {}", self.check, self.trials, self.detail)?;
        if let Some(first) = &self.first_failure {
            write!(f, "; first failure: {first}")?;
        }
        Ok(())
    }
}

pub fn check_theory(which: TheoryCheck, trials: usize, seed: u64) -> Result<TheoryReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    match which {
        TheoryCheck::Mass => check_mass(trials, seed),
        TheoryCheck::Coverage => check_coverage(trials, seed),
        TheoryCheck::Stability => check_stability(trials, seed),
        TheoryCheck::Kl => check_kl(trials, seed),
        TheoryCheck::Euler => check_euler(trials, seed),
    }
}

/// A random target over `k` actions; about a third of entries are zero.
pub fn random_target<R: Rng + ?Sized>(k: usize, rng: &mut R) -> TargetPolicyFull {
    let mut w: Vec<f64> = (0..k)
        .map(|_| if rng.gen::<f64>() < 0.3 { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.gen_range(0..k)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    TargetPolicyFull::from_probs(w.into_iter().map(|x| x / s).collect()).expect("normalised")
}

/// Forward-equation mass transport: uniform prior to the target.
pub const MASS_T_END: f64 = 1.0 - 1e-3;
pub const MASS_TOLERANCE: f64 = 1e-2;

pub fn mass_transport_error(target: &TargetPolicyFull, steps: usize) -> Result<f64> {
    let k = target.len();
    let p0 = Distribution::uniform(k);
    let mut err = None;
    let last = exact_marginals(
        |i, t| match bridge_point(&p0, target, t) {
            Ok(bp) => coupling_row(&bp, i),
            Err(e) => {
                err.get_or_insert(e);
                RateRow::zero(k, i, t)
            }
        },
        &p0,
        MASS_T_END,
        steps,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(l1_distance(last.probs(), target.probs()))
}

fn check_mass(trials: usize, seed: u64) -> Result<TheoryReport> {
    let mut failures = 0;
    let mut first = None;
    let mut worst: f64 = 0.0;
    for n in 0..trials {
        let s = seed.wrapping_add(n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let k = rng.gen_range(2..=16);
        let target = random_target(k, &mut rng);
        let e = mass_transport_error(&target, DEFAULT_FINE_STEPS)?;
        worst = worst.max(e);
        if !(e <= MASS_TOLERANCE) {
            failures += 1;
            first.get_or_insert(format!("seed {s}: K={k} L1={e:.3e}"));
        }
    }
    Ok(TheoryReport {
        check: TheoryCheck::Mass,
        trials,
        failures,
        detail: format!("worst final L1 {worst:.3e} (tolerance {MASS_TOLERANCE})"),
        first_failure: first,
    })
}

/// Monte Carlo of `2 * excluded mass` over candidate draws: `n_roll` samples
/// from `reference` plus `n_rand` uniform actions.
pub fn coverage_monte_carlo<R: Rng + ?Sized>(params: &CoverageParams, draws: usize, rng: &mut R) -> Result<f64> {
    let target = TargetPolicyFull::from_probs(params.target.probs().to_vec())?;
    let k = target.len();
    let mut total = 0.0;
    let mut cand = Vec::with_capacity(params.n_roll + params.n_rand);
    for _ in 0..draws {
        cand.clear();
        cand.extend((0..params.n_roll).map(|_| params.reference.sample(rng)));
        cand.extend((0..params.n_rand).map(|_| rng.gen_range(0..k)));
        total += 2.0 * excluded_mass(&target, &cand);
    }
    Ok(total / draws as f64)
}

const GRID: [usize; 5] = [0, 1, 2, 4, 8];

fn check_coverage(trials: usize, seed: u64) -> Result<TheoryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixture = CoverageParams {
        n_roll: 1,
        n_rand: 0,
        reference: Distribution::uniform(4),
        target: Distribution::uniform(4),
    };
    let analytic = expected_excluded_l1(&fixture)?;
    let mc = coverage_monte_carlo(&fixture, trials, &mut rng)?;
    let rel = (mc - analytic).abs() / analytic;
    let mut failures = 0;
    let mut first = None;
    if (analytic - 1.5).abs() > 1e-12 || rel > 0.01 {
        failures += 1;
        first = Some(format!("seed {seed}: analytic {analytic} vs Monte Carlo {mc}"));
    }
    // Monotone in both counts on a skewed fixture.
    let skew = CoverageParams {
        n_roll: 0,
        n_rand: 0,
        reference: Distribution::new(vec![0.5, 0.25, 0.15, 0.1])?,
        target: Distribution::new(vec![0.1, 0.2, 0.3, 0.4])?,
    };
    let value = |r: usize, u: usize| {
        expected_excluded_l1(&CoverageParams {
            n_roll: r,
            n_rand: u,
            ..skew.clone()
        })
    };
    for (a, &r) in GRID.iter().enumerate() {
        for (b, &u) in GRID.iter().enumerate() {
            let here = value(r, u)?;
            let up_r = if a + 1 < GRID.len() { value(GRID[a + 1], u)? } else { here };
            let up_u = if b + 1 < GRID.len() { value(r, GRID[b + 1])? } else { here };
            if up_r > here || up_u > here {
                failures += 1;
                first.get_or_insert(format!("not monotone at n_roll={r}, n_rand={u}"));
            }
        }
    }
    Ok(TheoryReport {
        check: TheoryCheck::Coverage,
        trials,
        failures,
        detail: format!("analytic {analytic:.4} vs Monte Carlo {mc:.4} (relative error {rel:.2e}); 5x5 grid monotone"),
        first_failure: first,
    })
}

pub const STABILITY_FLOOR: f64 = 0.05;

/// A random instance whose bridges both respect the 0.05 floors.
pub fn floored_instance<R: Rng + ?Sized>(rng: &mut R) -> (TargetPolicyFull, Vec<usize>, f64) {
    loop {
        let k = rng.gen_range(2..=8);
        let target = random_target(k, rng);
        let cand: Vec<usize> = (0..k).filter(|_| rng.gen::<f64>() < 0.6).collect();
        if excluded_mass(&target, &cand) >= 1.0 - 1e-9 {
            continue;
        }
        // p_t >= (1 - t)/K, so t <= 1 - 0.05 K keeps the probability floor.
        let t_max = 1.0 - STABILITY_FLOOR * k as f64;
        if t_max <= 0.0 {
            continue;
        }
        let t = rng.gen::<f64>() * t_max;
        if stability_lhs_rhs(&target, &cand, t, STABILITY_FLOOR, STABILITY_FLOOR).is_ok() {
            return (target, cand, t);
        }
    }
}

fn check_stability(trials: usize, seed: u64) -> Result<TheoryReport> {
    let mut failures = 0;
    let mut first = None;
    let mut worst_ratio: f64 = 0.0;
    for n in 0..trials {
        let s = seed.wrapping_add(n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let (target, cand, t) = floored_instance(&mut rng);
        let at_floor = stability_lhs_rhs(&target, &cand, t, STABILITY_FLOOR, STABILITY_FLOOR)?;
        // The same bound with the instance's own (tighter) floors.
        let tight = stability_lhs_rhs(&target, &cand, t, at_floor.min_p, at_floor.min_z)?;
        // Lower bound on bridge probabilities for t <= 1 - delta.
        let delta = 1.0 - t;
        let bp = bridge_point(&Distribution::uniform(target.len()), &target, t)?;
        let lower_ok = bp.p_t().iter().all(|&p| p >= bridge_probability_floor(target.len(), delta) - 1e-12);
        for c in [at_floor, tight] {
            if c.rhs > 0.0 {
                worst_ratio = worst_ratio.max(c.lhs / c.rhs);
            }
        }
        if at_floor.lhs > at_floor.rhs + 1e-12 || tight.lhs > tight.rhs + 1e-12 || !lower_ok {
            failures += 1;
            first.get_or_insert(format!(
                "seed {s}: lhs {:.4e} rhs {:.4e} (tight rhs {:.4e}), lower bound ok {lower_ok}",
                at_floor.lhs, at_floor.rhs, tight.rhs
            ));
        }
    }
    Ok(TheoryReport {
        check: TheoryCheck::Stability,
        trials,
        failures,
        detail: format!("max lhs/rhs {worst_ratio:.3e} with C=4"),
        first_failure: first,
    })
}

/// Expected surrogate under `theta` from a uniform start, by enumerating every
/// Euler path of two constant-rate chains.
pub fn enumerate_kl(theta: &ConstantGenerator, reference: &ConstantGenerator, substeps: usize) -> f64 {
    let k = GeneratorRates::action_count(theta);
    let dt = 1.0 / substeps as f64;
    let mut total = 0.0;
    let mut stack: Vec<(Vec<usize>, f64)> = (0..k).map(|x| (vec![x], 1.0 / k as f64)).collect();
    while let Some((states, prob)) = stack.pop() {
        if states.len() == substeps + 1 {
            let path = crate::ctmc::PathRecord::new(states, dt);
            let est = path_kl_from_rates(&path, |i, t| theta.row(i, t), |i, t| reference.row(i, t));
            total += prob * est.total;
            continue;
        }
        let cur = *states.last().unwrap();
        let row = theta.row(cur, 0.0);
        let p_jump = (row.exit_rate() * dt).min(1.0);
        for j in 0..k {
            let p = if j == cur {
                1.0 - p_jump
            } else if row.exit_rate() > 0.0 {
                p_jump * row.off_diag()[j] / row.exit_rate()
            } else {
                0.0
            };
            if p > 0.0 {
                let mut next = states.clone();
                next.push(j);
                stack.push((next, prob * p));
            }
        }
    }
    total
}

fn check_kl(trials: usize, seed: u64) -> Result<TheoryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag = EulerDiagnostics::default();
    let mut failures = 0;
    let mut first = None;
    // Identical generators: exactly zero on every path.
    let identical_paths = 1_000.min(trials);
    for n in 0..identical_paths {
        let k = rng.gen_range(2..=6);
        let net = RateNetwork::new(3, k, &[8, 8], &mut rng);
        let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = rng.gen_range(1..=12);
        let (est, _, _) = path_kl_estimate(&net, &net.clone(), &obs, m, &mut rng, &mut diag);
        if est.total != 0.0 {
            failures += 1;
            first.get_or_insert(format!("seed {seed}: identical generators gave {} on path {n}", est.total));
        }
    }
    // K=2, M=3, constant rates 1.0 against 0.5.
    let theta = ConstantGenerator::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]])?;
    let reference = ConstantGenerator::new(vec![vec![0.0, 0.5], vec![0.5, 0.0]])?;
    let exact = enumerate_kl(&theta, &reference, 3);
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..trials {
        let (_, path) = simulate(|i, _, t| theta.row(i, t), &Distribution::uniform(2), 3, &mut rng, &mut diag)?;
        let v = path_kl_from_rates(&path, |i, t| theta.row(i, t), |i, t| reference.row(i, t)).total;
        sum += v;
        sq += v * v;
    }
    let mean = sum / trials as f64;
    let se = ((sq / trials as f64 - mean * mean).max(0.0) / trials as f64).sqrt();
    if (mean - exact).abs() > 3.0 * se {
        failures += 1;
        first.get_or_insert(format!("seed {seed}: Monte Carlo {mean} vs enumeration {exact} (se {se:.2e})"));
    }
    Ok(TheoryReport {
        check: TheoryCheck::Kl,
        trials,
        failures,
        detail: format!(
            "{identical_paths} identical-generator paths; enumeration {exact:.5} vs Monte Carlo {mean:.5} +- {se:.1e}"
        ),
        first_failure: first,
    })
}

/// Two-state chain, rate 0.5 out of state 0, state 1 absorbing.
pub fn two_state_chain() -> ConstantGenerator {
    ConstantGenerator::new(vec![vec![0.0, 0.5], vec![0.0, 0.0]]).expect("valid rates")
}

/// `|P_Euler(X_1 = 1) - (1 - e^{-0.5})|` under the exact Euler law.
pub fn euler_law_error(substeps: usize) -> f64 {
    let g = two_state_chain();
    let p = euler_marginals(|i, _, t| g.row(i, t), &Distribution::point_mass(2, 0), substeps);
    (p.probs()[1] - (1.0 - (-0.5f64).exp())).abs()
}

fn check_euler(trials: usize, seed: u64) -> Result<TheoryReport> {
    let g = two_state_chain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag = EulerDiagnostics::default();
    let mut hits = 0usize;
    for _ in 0..trials {
        let path = simulate_from(|i, _, t| g.row(i, t), 0, 100, &mut rng, &mut diag)?;
        hits += (path.terminal() == 1) as usize;
    }
    let p_hat = hits as f64 / trials as f64;
    let err = (p_hat - (1.0 - (-0.5f64).exp())).abs();
    let ladder: Vec<f64> = [25, 50, 100, 200, 400].iter().map(|&m| euler_law_error(m)).collect();
    let decreasing = ladder.windows(2).all(|w| w[1] < w[0]);
    let mut failures = 0;
    let mut first = None;
    if err > 0.01 || !decreasing {
        failures = 1;
        first = Some(format!("seed {seed}: |error| {err:.3e} at M=100, exact-law errors {ladder:?}"));
    }
    Ok(TheoryReport {
        check: TheoryCheck::Euler,
        trials,
        failures,
        detail: format!(
            "M=100 Monte Carlo error {err:.2e}; exact-law error {:.2e} -> {:.2e} over M=25..400",
            ladder[0],
            ladder[ladder.len() - 1]
        ),
        first_failure: first,
    })
}
