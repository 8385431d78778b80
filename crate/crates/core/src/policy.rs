//! Candidate sets, the smoothed reference policy and advantage-tilted targets.

use rand::Rng;

use crate::bridge::TargetPolicyFull;
use crate::ctmc::{euler_step, EulerDiagnostics, GeneratorRates};
use crate::value::{AdvantageRow, CriticPair, LaggedPolicyProvider};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateConfig {
    pub n_roll: usize,
    pub n_rand: usize,
    pub substeps: usize,
    /// Use every action when `K <= n_roll + n_rand`.
    pub enumerate_small: bool,
}

/// Deduplicated candidate actions (ascending) with rollout terminal counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    indices: Vec<usize>,
    counts: Vec<u32>,
}

impl CandidateSet {
    pub fn new(mut pairs: Vec<(usize, u32)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate candidate".into()));
        }
        Ok(Self {
            indices: pairs.iter().map(|p| p.0).collect(),
            counts: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn total_count(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Terminal actions of `n` reference rollouts from uniform starts, simulated
/// in lockstep so each sub-step queries the generator once per distinct action.
pub fn reference_rollouts<R: Rng + ?Sized>(
    obs: &[f64],
    reference: &mut dyn GeneratorRates,
    n: usize,
    substeps: usize,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> Vec<usize> {
    let k = reference.action_count();
    let dt = 1.0 / substeps as f64;
    let mut states: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let mut sources = Vec::with_capacity(n);
    let mut slot = vec![usize::MAX; k];
    for m in 0..substeps {
        sources.clear();
        for &s in &states {
            if slot[s] == usize::MAX {
                slot[s] = sources.len();
                sources.push(s);
            }
        }
        let rows = reference.rows(obs, &sources, m, substeps);
        for s in states.iter_mut() {
            *s = euler_step(*s, &rows[slot[*s]], dt, rng, diag);
        }
        for &s in &sources {
            slot[s] = usize::MAX;
        }
    }
    states
}

/// Union of reference-rollout terminal actions and uniform draws.
pub fn build_candidate_set<R: Rng + ?Sized>(
    obs: &[f64],
    reference: &mut dyn GeneratorRates,
    cfg: &CandidateConfig,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> Result<CandidateSet> {
    let k = reference.action_count();
    if cfg.n_roll + cfg.n_rand == 0 {
        return Err(Error::InvalidArgument("candidate budget is zero".into()));
    }
    if cfg.substeps == 0 {
        return Err(Error::InvalidArgument("at least one sub-step".into()));
    }
    let mut counts = vec![0u32; k];
    let mut member = vec![false; k];
    if cfg.n_roll > 0 {
        for a in reference_rollouts(obs, reference, cfg.n_roll, cfg.substeps, rng, diag) {
            counts[a] += 1;
            member[a] = true;
        }
    }
    if cfg.enumerate_small && k <= cfg.n_roll + cfg.n_rand {
        member.iter_mut().for_each(|m| *m = true);
    } else {
        for _ in 0..cfg.n_rand {
            member[rng.gen_range(0..k)] = true;
        }
    }
    CandidateSet::new((0..k).filter(|&a| member[a]).map(|a| (a, counts[a])).collect())
}

/// Distribution over candidate indices, aligned with `CandidateSet::indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    pub indices: Vec<usize>,
    pub probs: Vec<f64>,
}

/// `pi_ref(a) ∝ count(a) / n_roll + eps / |cand|`; uniform when `n_roll = 0`.
pub fn smoothed_reference(cand: &CandidateSet, n_roll: usize, eps: f64) -> ReferencePolicy {
    let n = cand.len() as f64;
    let weights: Vec<f64> = if n_roll == 0 {
        vec![1.0; cand.len()]
    } else {
        cand.counts()
            .iter()
            .map(|&c| c as f64 / n_roll as f64 + eps / n)
            .collect()
    };
    let total: f64 = weights.iter().sum();
    ReferencePolicy {
        indices: cand.indices().to_vec(),
        probs: weights.iter().map(|w| w / total).collect(),
    }
}

fn tilt(pi_ref: &[f64], adv: &[f64], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = pi_ref.iter().zip(adv).map(|(&p, &a)| p.ln() + a / beta).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// `pi(a) ∝ pi_ref(a) exp(A(a) / beta)` on the candidates, zero elsewhere.
pub fn target_policy(pi_ref: &ReferencePolicy, adv: &AdvantageRow, beta: f64, actions: usize) -> TargetPolicyFull {
    assert!(beta > 0.0);
    assert_eq!(adv.clipped.len(), pi_ref.probs.len());
    let tilted = tilt(&pi_ref.probs, &adv.clipped, beta);
    let mut probs = vec![0.0; actions];
    for (&a, &p) in pi_ref.indices.iter().zip(&tilted) {
        probs[a] = p;
    }
    TargetPolicyFull::from_probs(probs).expect("softmax output is a distribution")
}

/// Lagged target on the candidates from precomputed `min_k Qk-(s, .)` and `V-(s)`.
pub fn lagged_target_probs(
    pi_ref: &ReferencePolicy,
    q_min_target: &[f64],
    v_target: f64,
    beta: f64,
    clip: f64,
    adv_eps: f64,
) -> Vec<f64> {
    let raw = pi_ref.indices.iter().map(|&a| q_min_target[a] - v_target).collect();
    let adv = AdvantageRow::from_raw(raw, clip, adv_eps);
    tilt(&pi_ref.probs, &adv.clipped, beta)
}

/// Lagged target on the candidates, evaluating the frozen critics at `obs`.
pub fn lagged_target_policy(cp: &CriticPair, pi_ref: &ReferencePolicy, obs: &[f64], beta: f64, clip: f64, adv_eps: f64) -> Vec<f64> {
    lagged_target_probs(pi_ref, &cp.min_q_target(obs), cp.value_target(obs), beta, clip, adv_eps)
}

/// Lagged policy over the whole action set with a uniform reference.
#[derive(Debug, Clone, Copy)]
pub struct FullSpaceLagged {
    pub beta: f64,
    pub clip: f64,
    pub adv_eps: f64,
}

impl LaggedPolicyProvider for FullSpaceLagged {
    fn lagged_policy(&mut self, _obs: &[f64], q: &[f64], v: f64) -> (Vec<usize>, Vec<f64>) {
        let k = q.len();
        let pi_ref = ReferencePolicy {
            indices: (0..k).collect(),
            probs: vec![1.0 / k as f64; k],
        };
        let probs = lagged_target_probs(&pi_ref, q, v, self.beta, self.clip, self.adv_eps);
        (pi_ref.indices, probs)
    }
}

/// Lagged policy over freshly built candidate sets.
pub struct CandidateLagged<'a, R: Rng + ?Sized> {
    pub reference: &'a mut dyn GeneratorRates,
    pub cfg: CandidateConfig,
    pub smoothing: f64,
    pub beta: f64,
    pub clip: f64,
    pub adv_eps: f64,
    pub rng: &'a mut R,
    pub diag: &'a mut EulerDiagnostics,
}

impl<R: Rng + ?Sized> LaggedPolicyProvider for CandidateLagged<'_, R> {
    fn lagged_policy(&mut self, obs: &[f64], q: &[f64], v: f64) -> (Vec<usize>, Vec<f64>) {
        let cand = build_candidate_set(obs, self.reference, &self.cfg, self.rng, self.diag).expect("valid candidate config");
        let pi_ref = smoothed_reference(&cand, self.cfg.n_roll, self.smoothing);
        let probs = lagged_target_probs(&pi_ref, q, v, self.beta, self.clip, self.adv_eps);
        (pi_ref.indices, probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{ConstantGenerator, RateRow};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every chain jumps to `target` on the first sub-step and stays.
    struct Absorb {
        k: usize,
        target: usize,
    }

    impl GeneratorRates for Absorb {
        fn action_count(&self) -> usize {
            self.k
        }
        fn rows(&mut self, _obs: &[f64], sources: &[usize], step: usize, substeps: usize) -> Vec<RateRow> {
            let t = step as f64 / substeps as f64;
            sources
                .iter()
                .map(|&i| {
                    let mut r = vec![0.0; self.k];
                    if i != self.target {
                        r[self.target] = 1e6;
                    }
                    RateRow::new(i, t, r)
                })
                .collect()
        }
    }

    #[test]
    fn point_mass_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut diag = EulerDiagnostics::default();
        let cfg = CandidateConfig {
            n_roll: 8,
            n_rand: 0,
            substeps: 10,
            enumerate_small: false,
        };
        let cand = build_candidate_set(&[], &mut Absorb { k: 6, target: 4 }, &cfg, &mut rng, &mut diag).unwrap();
        assert_eq!(cand.indices(), &[4]);
        assert_eq!(cand.counts(), &[8]);
    }

    #[test]
    fn full_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut diag = EulerDiagnostics::default();
        let cfg = CandidateConfig {
            n_roll: 0,
            n_rand: 5,
            substeps: 10,
            enumerate_small: true,
        };
        let cand = build_candidate_set(&[], &mut ConstantGenerator::zero(5), &cfg, &mut rng, &mut diag).unwrap();
        assert_eq!(cand.indices(), &[0, 1, 2, 3, 4]);
        assert_eq!(cand.total_count(), 0);
    }

    #[test]
    fn smoothing_examples() {
        let cand = CandidateSet::new(vec![(3, 8), (5, 0)]).unwrap();
        let r = smoothed_reference(&cand, 8, 0.01);
        assert!((r.probs[0] - 1.005 / 1.01).abs() < 1e-12);
        assert!((r.probs[1] - 0.005 / 1.01).abs() < 1e-12);
        let r = smoothed_reference(&cand, 0, 0.01);
        assert_eq!(r.probs, vec![0.5, 0.5]);
        let even = CandidateSet::new(vec![(0, 2), (1, 2)]).unwrap();
        assert_eq!(smoothed_reference(&even, 4, 0.01).probs, vec![0.5, 0.5]);
    }

    #[test]
    fn target_policy_examples() {
        let pi_ref = ReferencePolicy {
            indices: vec![0, 2],
            probs: vec![0.5, 0.5],
        };
        let adv = AdvantageRow {
            raw: vec![1.0, -1.0],
            normalized: vec![1.0, -1.0],
            clipped: vec![1.0, -1.0],
            mean: 0.0,
            std: 1.0,
        };
        let t = target_policy(&pi_ref, &adv, 1.0, 3);
        assert!((t.probs()[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
        assert_eq!(t.probs()[1], 0.0);
        assert_eq!(t.support(), &[0, 2]);
    }

    #[test]
    fn lagged_dominance() {
        let pi_ref = ReferencePolicy {
            indices: vec![0, 1],
            probs: vec![0.5, 0.5],
        };
        // Two candidates always standardise to (+1, -1).
        let p = lagged_target_probs(&pi_ref, &[10.0, -10.0], 0.0, 0.5, 3.0, 1e-6);
        assert!((p[0] / p[1] - (4.0f64).exp()).abs() / (4.0f64).exp() < 1e-5);
        // Clipped advantages (c, -c) with c = 3, beta = 0.5.
        let p = tilt(&pi_ref.probs, &[3.0, -3.0], 0.5);
        assert!(p[0] > 0.999);
        assert!((p[0] / p[1] - (12.0f64).exp()).abs() / (12.0f64).exp() < 1e-9);
    }
}
