//! Linear probability bridge from a source distribution to a target policy,
//! the coupling rates that realise it, and the coverage and stability
//! quantities for candidate-restricted targets.

use rand::Rng;

use crate::ctmc::{Distribution, RateRow, PROB_TOLERANCE};
use crate::{Error, Result};

/// Constant in the generator stability bound.
pub const STABILITY_CONSTANT: f64 = 4.0;

/// A target distribution over the full action set with an explicit support.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPolicyFull {
    probs: Vec<f64>,
    support: Vec<usize>,
}

impl TargetPolicyFull {
    /// Support is the set of strictly positive entries.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Distribution::new(probs.clone())?;
        let support = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Self { probs, support })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
            support: (0..k).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn to_distribution(&self) -> Distribution {
        Distribution::new(self.probs.clone()).expect("validated on construction")
    }
}

/// `p_t = (1 - t) p_0 + t target` and its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgePoint {
    t: f64,
    p_t: Vec<f64>,
    pdot: Vec<f64>,
}

impl BridgePoint {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn p_t(&self) -> &[f64] {
        &self.p_t
    }

    pub fn pdot(&self) -> &[f64] {
        &self.pdot
    }

    /// Total inflow `Z_t`, the sum of positive parts of `pdot`.
    pub fn inflow(&self) -> f64 {
        self.pdot.iter().map(|&x| positive_part(x)).sum()
    }

    pub fn sample_source<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        crate::ctmc::sample_weighted(&self.p_t, rng.gen::<f64>())
    }
}

#[inline]
pub fn positive_part(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn negative_part(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        0.0
    }
}

pub fn bridge_point(p0: &Distribution, target: &TargetPolicyFull, t: f64) -> Result<BridgePoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("bridge time {t} outside [0, 1]")));
    }
    if p0.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: p0.len(),
            got: target.len(),
        });
    }
    let (p_t, pdot) = p0
        .probs()
        .iter()
        .zip(target.probs())
        .map(|(&a, &b)| ((1.0 - t) * a + t * b, b - a))
        .unzip();
    Ok(BridgePoint { t, p_t, pdot })
}

/// Independent-coupling rates out of `source`:
/// `u(i -> j) = pdot^-(i) pdot^+(j) / (p_t(i) Z_t)` for `j != i`.
///
/// Returns the zero row when `p_t(i) = 0` or `Z_t = 0`.
pub fn coupling_row(bp: &BridgePoint, source: usize) -> RateRow {
    let k = bp.p_t.len();
    let z = bp.inflow();
    let p = bp.p_t[source];
    let out = negative_part(bp.pdot[source]);
    if p == 0.0 || z == 0.0 || out == 0.0 {
        return RateRow::zero(k, source, bp.t);
    }
    let scale = out / (p * z);
    let rates = bp
        .pdot
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == source { 0.0 } else { scale * positive_part(d) })
        .collect();
    RateRow::new(source, bp.t, rates)
}

/// Flow time `t ~ U[0, 1 - delta]`.
pub fn sample_flow_time<R: Rng + ?Sized>(delta: f64, rng: &mut R) -> f64 {
    assert!((0.0..1.0).contains(&delta));
    rng.gen::<f64>() * (1.0 - delta)
}

/// Lower bound on `p_t(i)` for a uniform source on `K` actions and `t <= 1 - delta`.
pub fn bridge_probability_floor(k: usize, delta: f64) -> f64 {
    delta / k as f64
}

/// Target mass outside the candidate set.
pub fn excluded_mass(target: &TargetPolicyFull, cand: &[usize]) -> f64 {
    let inside: f64 = cand.iter().map(|&a| target.probs[a]).sum();
    (1.0 - inside).max(0.0)
}

/// Restricts `target` to `cand` and renormalises.
///
/// The L1 distance to the original target equals twice the excluded mass.
pub fn restrict_renormalize(target: &TargetPolicyFull, cand: &[usize]) -> Result<TargetPolicyFull> {
    let k = target.len();
    if let Some(&a) = cand.iter().find(|&&a| a >= k) {
        return Err(Error::InvalidAction { action: a, actions: k });
    }
    let inside: f64 = cand.iter().map(|&a| target.probs[a]).sum();
    if !(inside > 0.0) {
        return Err(Error::InvalidArgument(
            "candidate set carries no target mass".into(),
        ));
    }
    let mut probs = vec![0.0; k];
    for &a in cand {
        probs[a] = target.probs[a] / inside;
    }
    let support = (0..k).filter(|&a| probs[a] > 0.0).collect();
    Ok(TargetPolicyFull { probs, support })
}

/// Inputs of the expected restriction error.
#[derive(Debug, Clone)]
pub struct CoverageParams {
    pub n_roll: usize,
    pub n_rand: usize,
    pub reference: Distribution,
    pub target: Distribution,
}

/// `E || target_cand - target ||_1 = 2 sum_a target(a) (1 - ref(a))^N_roll (1 - 1/K)^N_rand`.
pub fn expected_excluded_l1(params: &CoverageParams) -> Result<f64> {
    let k = params.target.len();
    if params.reference.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: params.reference.len(),
        });
    }
    let miss_rand = (1.0 - 1.0 / k as f64).powi(params.n_rand as i32);
    let total: f64 = params
        .target
        .probs()
        .iter()
        .zip(params.reference.probs())
        .map(|(&pi, &r)| pi * (1.0 - r).powi(params.n_roll as i32))
        .sum();
    Ok(2.0 * total * miss_rand)
}

/// Both sides of the generator stability bound at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    /// `max_i sum_{j != i} |u_cand(i -> j) - u(i -> j)|`.
    pub lhs: f64,
    /// `4 / (p^2 Z^2) * || target_cand - target ||_1`.
    pub rhs: f64,
    /// Smallest bridge probability over both bridges.
    pub min_p: f64,
    /// Smaller of the two inflows.
    pub min_z: f64,
}

/// Evaluates the stability bound for a uniform source.
///
/// Fails with [`Error::Precondition`] when either bridge violates the floors.
pub fn stability_lhs_rhs(
    target: &TargetPolicyFull,
    cand: &[usize],
    t: f64,
    p_floor: f64,
    z_floor: f64,
) -> Result<StabilityCheck> {
    let k = target.len();
    let p0 = Distribution::uniform(k);
    let restricted = restrict_renormalize(target, cand)?;
    let full = bridge_point(&p0, target, t)?;
    let cand_bp = bridge_point(&p0, &restricted, t)?;
    let min_p = full
        .p_t
        .iter()
        .chain(cand_bp.p_t.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let min_z = full.inflow().min(cand_bp.inflow());
    if min_p < p_floor * (1.0 - PROB_TOLERANCE) || min_z < z_floor * (1.0 - PROB_TOLERANCE) {
        return Err(Error::Precondition(format!(
            "floors violated at t={t}: min p={min_p}, min Z={min_z}"
        )));
    }
    let mut lhs: f64 = 0.0;
    for i in 0..k {
        let a = coupling_row(&full, i);
        let b = coupling_row(&cand_bp, i);
        let d: f64 = (0..k)
            .filter(|&j| j != i)
            .map(|j| (a.off_diag()[j] - b.off_diag()[j]).abs())
            .sum();
        lhs = lhs.max(d);
    }
    let dist = crate::ctmc::l1_distance(restricted.probs(), target.probs());
    let rhs = STABILITY_CONSTANT / (p_floor * p_floor * z_floor * z_floor) * dist;
    Ok(StabilityCheck {
        lhs,
        rhs,
        min_p,
        min_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{exact_marginals, validate_rate_row};

    #[test]
    fn uniform_target_gives_zero_rates() {
        let p0 = Distribution::uniform(4);
        let bp = bridge_point(&p0, &TargetPolicyFull::uniform(4), 0.5).unwrap();
        assert_eq!(bp.inflow(), 0.0);
        for i in 0..4 {
            assert!(coupling_row(&bp, i).off_diag().iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn coupling_rates_hand_case() {
        // K=2, target (1, 0), t=0.5: p=(0.75, 0.25), pdot=(0.5,-0.5), Z=0.5.
        let p0 = Distribution::uniform(2);
        let target = TargetPolicyFull::from_probs(vec![1.0, 0.0]).unwrap();
        let bp = bridge_point(&p0, &target, 0.5).unwrap();
        let row = coupling_row(&bp, 1);
        assert!((row.off_diag()[0] - 0.5 * 0.5 / (0.25 * 0.5)).abs() < 1e-15);
        assert_eq!(coupling_row(&bp, 0).exit_rate(), 0.0);
    }

    #[test]
    fn forward_equation_reaches_target() {
        let p0 = Distribution::uniform(3);
        let target = TargetPolicyFull::from_probs(vec![0.7, 0.3, 0.0]).unwrap();
        let t_end = 1.0 - 1e-3;
        let p = exact_marginals(
            |i, t| coupling_row(&bridge_point(&p0, &target, t).unwrap(), i),
            &p0,
            t_end,
            10_000,
        );
        let bp = bridge_point(&p0, &target, t_end).unwrap();
        assert!(p.l1_distance(bp.p_t()) < 1e-9);
        assert!(p.l1_distance(target.probs()) < 1e-2);
    }

    #[test]
    fn rows_are_valid() {
        let p0 = Distribution::uniform(5);
        let target = TargetPolicyFull::from_probs(vec![0.1, 0.0, 0.4, 0.5, 0.0]).unwrap();
        for &t in &[0.0, 0.3, 0.95] {
            let bp = bridge_point(&p0, &target, t).unwrap();
            for i in 0..5 {
                validate_rate_row(&coupling_row(&bp, i)).unwrap();
            }
        }
    }

    #[test]
    fn restriction_distance_is_twice_excluded_mass() {
        let target = TargetPolicyFull::from_probs(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cand = [1, 3];
        let r = restrict_renormalize(&target, &cand).unwrap();
        let d = crate::ctmc::l1_distance(r.probs(), target.probs());
        assert!((d - 2.0 * excluded_mass(&target, &cand)).abs() < 1e-12);
        assert!(restrict_renormalize(&target, &[]).is_err());
    }

    #[test]
    fn coverage_uniform_k4() {
        let params = CoverageParams {
            n_roll: 1,
            n_rand: 0,
            reference: Distribution::uniform(4),
            target: Distribution::uniform(4),
        };
        assert!((expected_excluded_l1(&params).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn stability_rejects_floor_violation() {
        let target = TargetPolicyFull::from_probs(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            stability_lhs_rhs(&target, &[0, 1], 0.99, 0.05, 0.05),
            Err(Error::Precondition(_))
        ));
    }
}
