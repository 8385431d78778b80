//! Finite-state continuous-time Markov chains over an action set.
//!
//! A chain is described by rate rows: for the current state `i` at time `t`,
//! the non-negative rates `u(i -> j)` for every `j != i`. The diagonal entry is
//! implied as minus the sum of the off-diagonal rates.

use rand::Rng;

use crate::{Error, Result};

/// Default number of fine steps used by [`exact_marginals`].
pub const DEFAULT_FINE_STEPS: usize = 10_000;

/// Tolerance used when validating probability vectors.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A finite action set `{0, .., size - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSpace {
    size: usize,
}

impl ActionSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "action space needs at least 2 actions, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, action: usize) -> bool {
        action < self.size
    }
}

/// A probability vector over an action set.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Validates non-negativity and unit mass (within [`PROB_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be finite, non-negative and not all zero".into(),
            ));
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "uniform distribution over zero actions");
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn point_mass(size: usize, index: usize) -> Self {
        assert!(index < size);
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_weighted(&self.probs, rng.gen::<f64>())
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        l1_distance(&self.probs, other)
    }
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Cumulative-sum inversion: picks index `k` with probability proportional to
/// `weights[k]` given a uniform draw `u` in `[0, 1)`.
pub fn sample_weighted(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = None;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(k);
        if target < acc {
            return k;
        }
    }
    last.unwrap_or(0)
}

/// Ways a rate row can be malformed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RateViolation {
    #[error("source {state} outside an action set of size {size}")]
    SourceOutOfRange { state: usize, size: usize },
    #[error("negative off-diagonal rate {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("non-finite rate at index {index}")]
    NonFinite { index: usize },
    #[error("self-transition slot must hold 0, found {value}")]
    SelfRate { value: f64 },
}

/// Outgoing rates of one source state at one time.
///
/// `off_diag[source]` is kept at zero; the diagonal is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    source: usize,
    time: f64,
    off_diag: Vec<f64>,
}

impl RateRow {
    /// Builds a row without validation; see [`validate_rate_row`].
    pub fn new(source: usize, time: f64, off_diag: Vec<f64>) -> Self {
        Self {
            source,
            time,
            off_diag,
        }
    }

    pub fn zero(size: usize, source: usize, time: f64) -> Self {
        Self::new(source, time, vec![0.0; size])
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.off_diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.off_diag.is_empty()
    }

    /// Off-diagonal rates, with a zero at the source slot.
    pub fn off_diag(&self) -> &[f64] {
        &self.off_diag
    }

    /// Full generator row entry, including the derived diagonal.
    pub fn rate(&self, j: usize) -> f64 {
        if j == self.source {
            self.diag()
        } else {
            self.off_diag[j]
        }
    }

    pub fn diag(&self) -> f64 {
        -exit_rate(self)
    }

    pub fn exit_rate(&self) -> f64 {
        exit_rate(self)
    }
}

pub fn validate_rate_row(row: &RateRow) -> std::result::Result<(), RateViolation> {
    if row.source >= row.off_diag.len() {
        return Err(RateViolation::SourceOutOfRange {
            state: row.source,
            size: row.off_diag.len(),
        });
    }
    for (index, &value) in row.off_diag.iter().enumerate() {
        if !value.is_finite() {
            return Err(RateViolation::NonFinite { index });
        }
        if index == row.source {
            if value != 0.0 {
                return Err(RateViolation::SelfRate { value });
            }
        } else if value < 0.0 {
            return Err(RateViolation::Negative { index, value });
        }
    }
    Ok(())
}

/// Total rate of leaving the source state.
pub fn exit_rate(row: &RateRow) -> f64 {
    row.off_diag
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != row.source)
        .map(|(_, r)| *r)
        .sum()
}

/// Counters collected while simulating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EulerDiagnostics {
    pub steps: u64,
    /// Sub-steps where `exit_rate * dt > 1` and the jump probability was clamped.
    pub clamped: u64,
}

impl EulerDiagnostics {
    pub fn merge(&mut self, other: EulerDiagnostics) {
        self.steps += other.steps;
        self.clamped += other.clamped;
    }
}

/// One Euler sub-step.
///
/// Jumps with probability `min(exit_rate * dt, 1)`, to `j` proportionally to
/// `u(i -> j)`. A single uniform draw decides both whether and where to jump, so
/// every call consumes exactly one draw.
pub fn euler_step<R: Rng + ?Sized>(
    current: usize,
    row: &RateRow,
    dt: f64,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> usize {
    debug_assert_eq!(row.source(), current);
    diag.steps += 1;
    let u: f64 = rng.gen();
    let lambda = row.exit_rate();
    if !(lambda > 0.0) {
        return current;
    }
    let mut p_jump = lambda * dt;
    if p_jump > 1.0 {
        p_jump = 1.0;
        diag.clamped += 1;
    }
    if u >= p_jump {
        return current;
    }
    let v = u / p_jump;
    let j = sample_weighted(&row.off_diag, v);
    if j == current {
        // Only reachable through rounding when every other rate underflows.
        current
    } else {
        j
    }
}

/// A simulated discrete path `X_0, .., X_M` on the grid `t_m = m / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    dt: f64,
    states: Vec<usize>,
}

impl PathRecord {
    pub fn new(states: Vec<usize>, dt: f64) -> Self {
        assert!(!states.is_empty());
        Self { dt, states }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn terminal(&self) -> usize {
        *self.states.last().unwrap()
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.dt
    }

    /// `jump_flags()[m]` is true when `X_{m+1} != X_m`.
    pub fn jump_flags(&self) -> Vec<bool> {
        self.states.windows(2).map(|w| w[0] != w[1]).collect()
    }

    pub fn jump_count(&self) -> usize {
        self.states.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// Simulates from `x0` over `substeps` Euler sub-steps on `[0, 1]`.
///
/// `rates(current, m, t_m)` returns the row used for sub-step `m`.
pub fn simulate_from<R, F>(
    mut rates: F,
    x0: usize,
    substeps: usize,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> Result<PathRecord>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, f64) -> RateRow,
{
    if substeps == 0 {
        return Err(Error::InvalidArgument("at least one sub-step".into()));
    }
    let dt = 1.0 / substeps as f64;
    let mut states = Vec::with_capacity(substeps + 1);
    let mut x = x0;
    states.push(x);
    for m in 0..substeps {
        let row = rates(x, m, m as f64 * dt);
        x = euler_step(x, &row, dt, rng, diag);
        states.push(x);
    }
    Ok(PathRecord::new(states, dt))
}

/// Samples `X_0 ~ init` and simulates; returns the terminal state and the path.
pub fn simulate<R, F>(
    rates: F,
    init: &Distribution,
    substeps: usize,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> Result<(usize, PathRecord)>
where
    R: Rng + ?Sized,
    F: FnMut(usize, usize, f64) -> RateRow,
{
    let x0 = init.sample(rng);
    let path = simulate_from(rates, x0, substeps, rng, diag)?;
    Ok((path.terminal(), path))
}

/// Integrates the forward equation `dp/dt = p Q_t` with explicit Euler steps.
///
/// `generator(i, t)` must return the row of source `i`. Rows of sources with
/// zero mass are not requested. Small negative entries from rounding are
/// clipped and the vector is renormalised after every step.
pub fn exact_marginals<F>(mut generator: F, p0: &Distribution, t_end: f64, steps: usize) -> Distribution
where
    F: FnMut(usize, f64) -> RateRow,
{
    assert!(steps > 0 && t_end >= 0.0);
    let k = p0.len();
    let dt = t_end / steps as f64;
    let mut p = p0.probs().to_vec();
    let mut flow = vec![0.0; k];
    for n in 0..steps {
        let t = n as f64 * dt;
        flow.iter_mut().for_each(|f| *f = 0.0);
        for i in 0..k {
            let mass = p[i];
            if mass == 0.0 {
                continue;
            }
            let row = generator(i, t);
            for (j, &r) in row.off_diag().iter().enumerate() {
                if j != i && r != 0.0 {
                    flow[j] += mass * r;
                    flow[i] -= mass * r;
                }
            }
        }
        for (pi, fi) in p.iter_mut().zip(&flow) {
            *pi = (*pi + dt * fi).max(0.0);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
    }
    Distribution { probs: p }
}

/// Law of the terminal state of the Euler scheme used by [`simulate_from`].
///
/// Propagates the one-step transition kernel exactly, including the clamp.
pub fn euler_marginals<F>(mut generator: F, p0: &Distribution, substeps: usize) -> Distribution
where
    F: FnMut(usize, usize, f64) -> RateRow,
{
    let k = p0.len();
    let dt = 1.0 / substeps as f64;
    let mut p = p0.probs().to_vec();
    for m in 0..substeps {
        let mut next = vec![0.0; k];
        for i in 0..k {
            if p[i] == 0.0 {
                continue;
            }
            let row = generator(i, m, m as f64 * dt);
            let lambda = row.exit_rate();
            if !(lambda > 0.0) {
                next[i] += p[i];
                continue;
            }
            let p_jump = (lambda * dt).min(1.0);
            next[i] += p[i] * (1.0 - p_jump);
            for (j, &r) in row.off_diag().iter().enumerate() {
                if j != i {
                    next[j] += p[i] * p_jump * r / lambda;
                }
            }
        }
        p = next;
    }
    Distribution { probs: p }
}

/// Rates for a state-conditioned chain evaluated on the Euler grid.
///
/// Implementations may cache rows; `rows` must return one row per source.
pub trait GeneratorRates {
    fn action_count(&self) -> usize;

    fn rows(&mut self, obs: &[f64], sources: &[usize], step: usize, substeps: usize) -> Vec<RateRow>;
}

/// A generator with the same constant row matrix for every state and time.
#[derive(Debug, Clone)]
pub struct ConstantGenerator {
    matrix: Vec<Vec<f64>>,
}

impl ConstantGenerator {
    /// `matrix[i][j]` is the rate `i -> j`; diagonal entries are ignored.
    pub fn new(mut matrix: Vec<Vec<f64>>) -> Result<Self> {
        let k = matrix.len();
        for (i, row) in matrix.iter_mut().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: row.len(),
                });
            }
            row[i] = 0.0;
            validate_rate_row(&RateRow::new(i, 0.0, row.clone()))?;
        }
        Ok(Self { matrix })
    }

    pub fn zero(k: usize) -> Self {
        Self {
            matrix: vec![vec![0.0; k]; k],
        }
    }

    pub fn row(&self, source: usize, t: f64) -> RateRow {
        RateRow::new(source, t, self.matrix[source].clone())
    }
}

impl GeneratorRates for ConstantGenerator {
    fn action_count(&self) -> usize {
        self.matrix.len()
    }

    fn rows(&mut self, _obs: &[f64], sources: &[usize], step: usize, substeps: usize) -> Vec<RateRow> {
        let t = step as f64 / substeps as f64;
        sources.iter().map(|&i| self.row(i, t)).collect()
    }
}
