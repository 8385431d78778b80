//! The rate network, flow-matching and path-KL losses, and the actor update.

use std::collections::HashMap;

use rand::Rng;

use crate::bridge::{bridge_point, coupling_row, sample_flow_time, TargetPolicyFull};
use crate::ctmc::{simulate, Distribution, EulerDiagnostics, GeneratorRates, PathRecord, RateRow};
use crate::nn::{Adam, Mlp};
use crate::policy::{build_candidate_set, smoothed_reference, target_policy, CandidateConfig};
use crate::value::{advantage_row, CriticPair};
use crate::{Error, Result};

/// Floor applied to rates inside the logarithms of the path-KL jump term.
pub const LOG_RATE_FLOOR: f64 = 1e-8;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rates out of `source` from raw logits: softplus, self slot masked to zero.
pub fn rates_from_logits(logits: &[f64], source: usize, t: f64) -> RateRow {
    let rates = logits
        .iter()
        .enumerate()
        .map(|(j, &g)| if j == source { 0.0 } else { softplus(g) })
        .collect();
    RateRow::new(source, t, rates)
}

/// MLP over `[state features, one-hot current action, t]` producing `K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct RateNetwork {
    mlp: Mlp,
    obs_dim: usize,
    actions: usize,
}

impl RateNetwork {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, actions: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim + actions + 1];
        dims.extend_from_slice(hidden);
        dims.push(actions);
        Self {
            mlp: Mlp::new(&dims, rng),
            obs_dim,
            actions,
        }
    }

    pub fn from_mlp(mlp: Mlp, obs_dim: usize, actions: usize) -> Result<Self> {
        if mlp.input_dim() != obs_dim + actions + 1 || mlp.output_dim() != actions {
            return Err(Error::InvalidArgument(format!(
                "network {:?} does not fit {obs_dim} features and {actions} actions",
                mlp.dims()
            )));
        }
        Ok(Self { mlp, obs_dim, actions })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.actions + 1
    }

    pub fn write_input(&self, obs: &[f64], current: usize, t: f64, out: &mut [f64]) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        out[..self.obs_dim].copy_from_slice(obs);
        out[self.obs_dim..self.obs_dim + self.actions].iter_mut().for_each(|x| *x = 0.0);
        out[self.obs_dim + current] = 1.0;
        out[self.obs_dim + self.actions] = t;
    }

    pub fn logits(&self, obs: &[f64], current: usize, t: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.input_dim()];
        self.write_input(obs, current, t, &mut x);
        self.mlp.forward(&x).expect("input dim")
    }

    pub fn rate_row(&self, obs: &[f64], current: usize, t: f64) -> RateRow {
        rates_from_logits(&self.logits(obs, current, t), current, t)
    }

    fn batch_inputs(&self, items: &[(&[f64], usize, f64)]) -> Vec<f64> {
        let d = self.input_dim();
        let mut x = vec![0.0; items.len() * d];
        for (b, &(obs, i, t)) in items.iter().enumerate() {
            self.write_input(obs, i, t, &mut x[b * d..(b + 1) * d]);
        }
        x
    }

    /// Samples an action: `X_0` uniform, then `substeps` Euler sub-steps.
    pub fn sample_action<R: Rng + ?Sized>(&self, obs: &[f64], substeps: usize, rng: &mut R, diag: &mut EulerDiagnostics) -> usize {
        self.sample_path(obs, substeps, rng, diag).terminal()
    }

    pub fn sample_path<R: Rng + ?Sized>(&self, obs: &[f64], substeps: usize, rng: &mut R, diag: &mut EulerDiagnostics) -> PathRecord {
        let init = Distribution::uniform(self.actions);
        let (_, path) = simulate(|i, _m, t| self.rate_row(obs, i, t), &init, substeps, rng, diag).expect("substeps > 0");
        path
    }
}

impl GeneratorRates for RateNetwork {
    fn action_count(&self) -> usize {
        self.actions
    }

    fn rows(&mut self, obs: &[f64], sources: &[usize], step: usize, substeps: usize) -> Vec<RateRow> {
        let t = step as f64 / substeps as f64;
        let items: Vec<(&[f64], usize, f64)> = sources.iter().map(|&i| (obs, i, t)).collect();
        let cache = self.mlp.forward_batch(&self.batch_inputs(&items), items.len()).expect("input dim");
        sources
            .iter()
            .enumerate()
            .map(|(b, &i)| rates_from_logits(cache.output_row(b), i, t))
            .collect()
    }
}

struct StateTable {
    substeps: usize,
    rows: Vec<Option<RateRow>>,
}

/// Frozen snapshot of the rate network with memoised grid rows.
pub struct ReferenceGenerator {
    net: RateNetwork,
    cache: HashMap<Vec<u64>, StateTable>,
    refreshes: u64,
}

const MAX_CACHED_STATES: usize = 50_000;

impl ReferenceGenerator {
    pub fn new(net: RateNetwork) -> Self {
        Self {
            net,
            cache: HashMap::new(),
            refreshes: 0,
        }
    }

    pub fn net(&self) -> &RateNetwork {
        &self.net
    }

    /// Number of times the snapshot was replaced.
    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn replace(&mut self, net: RateNetwork) {
        self.net = net;
        self.cache.clear();
        self.refreshes += 1;
    }
}

impl GeneratorRates for ReferenceGenerator {
    fn action_count(&self) -> usize {
        self.net.actions
    }

    fn rows(&mut self, obs: &[f64], sources: &[usize], step: usize, substeps: usize) -> Vec<RateRow> {
        let k = self.net.actions;
        if self.cache.len() >= MAX_CACHED_STATES {
            self.cache.clear();
        }
        let key: Vec<u64> = obs.iter().map(|x| x.to_bits()).collect();
        let table = self.cache.entry(key).or_insert_with(|| StateTable {
            substeps,
            rows: vec![None; substeps * k],
        });
        if table.substeps != substeps {
            *table = StateTable {
                substeps,
                rows: vec![None; substeps * k],
            };
        }
        let base = step * k;
        let missing: Vec<usize> = sources.iter().copied().filter(|&i| table.rows[base + i].is_none()).collect();
        if !missing.is_empty() {
            for row in self.net.rows(obs, &missing, step, substeps) {
                let i = row.source();
                table.rows[base + i] = Some(row);
            }
        }
        sources.iter().map(|&i| table.rows[base + i].clone().unwrap()).collect()
    }
}

/// One flow-matching regression sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DfmSample {
    pub obs: Vec<f64>,
    pub t: f64,
    pub source: usize,
    /// Target off-diagonal rates out of `source` (self slot ignored).
    pub target: Vec<f64>,
}

/// Batch mean of `sum_{j != i} (u(i -> j) - u*(i -> j))^2` and its gradient.
pub fn dfm_loss(net: &RateNetwork, samples: &[DfmSample]) -> (f64, Vec<f64>) {
    let n = samples.len();
    let k = net.actions;
    let items: Vec<(&[f64], usize, f64)> = samples.iter().map(|s| (s.obs.as_slice(), s.source, s.t)).collect();
    let cache = net.mlp.forward_batch(&net.batch_inputs(&items), n).expect("input dim");
    let mut d_out = vec![0.0; n * k];
    let mut loss = 0.0;
    for (b, s) in samples.iter().enumerate() {
        let g = cache.output_row(b);
        for j in 0..k {
            if j == s.source {
                continue;
            }
            let err = softplus(g[j]) - s.target[j];
            loss += err * err;
            d_out[b * k + j] = 2.0 * err * sigmoid(g[j]) / n as f64;
        }
    }
    (loss / n as f64, net.mlp.backward(&cache, &d_out))
}

/// Path-KL surrogate terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KlEstimate {
    /// `sum over jumps of log u_theta - log u_ref`.
    pub jump_term: f64,
    /// `sum_m (lambda_ref - lambda_theta) dt`.
    pub holding_term: f64,
    pub total: f64,
}

fn floored_ln(u: f64) -> f64 {
    u.max(LOG_RATE_FLOOR).ln()
}

fn kl_step(est: &mut KlEstimate, u_theta: &RateRow, u_ref: &RateRow, next: usize, dt: f64) {
    est.holding_term += (u_ref.exit_rate() - u_theta.exit_rate()) * dt;
    if next != u_theta.source() {
        est.jump_term += floored_ln(u_theta.off_diag()[next]) - floored_ln(u_ref.off_diag()[next]);
    }
}

/// The surrogate on a fixed path for arbitrary rate functions `(state, t) -> row`.
pub fn path_kl_from_rates<F, G>(path: &PathRecord, mut theta: F, mut reference: G) -> KlEstimate
where
    F: FnMut(usize, f64) -> RateRow,
    G: FnMut(usize, f64) -> RateRow,
{
    let mut est = KlEstimate::default();
    for m in 0..path.substeps() {
        let (x, t) = (path.states()[m], path.time(m));
        kl_step(&mut est, &theta(x, t), &reference(x, t), path.states()[m + 1], path.dt());
    }
    est.total = est.jump_term + est.holding_term;
    est
}

/// Evaluates the surrogate on fixed paths, one per state. Returns the per-path
/// estimates and the gradient of their mean with respect to `net`.
pub fn kl_on_paths(net: &RateNetwork, reference: &RateNetwork, items: &[(&[f64], &PathRecord)]) -> (Vec<KlEstimate>, Vec<f64>) {
    let k = net.actions;
    if items.is_empty() {
        return (Vec::new(), vec![0.0; net.mlp.num_params()]);
    }
    let mut rows: Vec<(&[f64], usize, f64)> = Vec::new();
    for &(obs, path) in items {
        for m in 0..path.substeps() {
            rows.push((obs, path.states()[m], path.time(m)));
        }
    }
    let x = net.batch_inputs(&rows);
    let theta = net.mlp.forward_batch(&x, rows.len()).expect("input dim");
    let refr = reference.mlp.forward_batch(&x, rows.len()).expect("input dim");
    let scale = 1.0 / items.len() as f64;
    let mut d_out = vec![0.0; rows.len() * k];
    let mut estimates = Vec::with_capacity(items.len());
    let mut r = 0;
    for &(_, path) in items {
        let dt = path.dt();
        let mut est = KlEstimate::default();
        for m in 0..path.substeps() {
            let (x_m, x_next) = (path.states()[m], path.states()[m + 1]);
            let g = theta.output_row(r);
            let h = refr.output_row(r);
            let u_theta = rates_from_logits(g, x_m, 0.0);
            let u_ref = rates_from_logits(h, x_m, 0.0);
            kl_step(&mut est, &u_theta, &u_ref, x_next, dt);
            for j in 0..k {
                if j != x_m {
                    d_out[r * k + j] -= scale * dt * sigmoid(g[j]);
                }
            }
            let a = u_theta.off_diag()[x_next];
            if x_next != x_m && a > LOG_RATE_FLOOR {
                d_out[r * k + x_next] += scale * sigmoid(g[x_next]) / a;
            }
            r += 1;
        }
        est.total = est.jump_term + est.holding_term;
        estimates.push(est);
    }
    (estimates, net.mlp.backward(&theta, &d_out))
}

/// Samples one path under `net` from a uniform start and evaluates the surrogate on it.
pub fn path_kl_estimate<R: Rng + ?Sized>(
    net: &RateNetwork,
    reference: &RateNetwork,
    obs: &[f64],
    substeps: usize,
    rng: &mut R,
    diag: &mut EulerDiagnostics,
) -> (KlEstimate, PathRecord, Vec<f64>) {
    let path = net.sample_path(obs, substeps, rng, diag);
    let (est, grad) = kl_on_paths(net, reference, &[(obs, &path)]);
    (est[0], path, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Additive smoothing of the reference policy.
    pub smoothing: f64,
    pub adv_clip: f64,
    pub adv_eps: f64,
    pub candidates: CandidateConfig,
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub net: RateNetwork,
    pub opt: Adam,
}

impl Actor {
    pub fn new(net: RateNetwork, lr: f64) -> Self {
        let opt = Adam::new(net.mlp.num_params(), lr);
        Self { net, opt }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorLosses {
    pub dfm: f64,
    pub kl: f64,
    pub combined: f64,
}

/// Separate random streams used by one actor update.
pub struct ActorRngs<'a, R: Rng + ?Sized> {
    pub candidate: &'a mut R,
    pub flow: &'a mut R,
    pub kl: &'a mut R,
}

/// `L = L_dfm + alpha * L_kl` on fixed samples and paths, with gradient.
pub fn combined_objective(
    net: &RateNetwork,
    reference: &RateNetwork,
    samples: &[DfmSample],
    paths: &[(&[f64], &PathRecord)],
    alpha: f64,
) -> (ActorLosses, Vec<f64>) {
    let (dfm, mut grad) = dfm_loss(net, samples);
    let (kls, g_kl) = kl_on_paths(net, reference, paths);
    let kl = if kls.is_empty() { 0.0 } else { kls.iter().map(|e| e.total).sum::<f64>() / kls.len() as f64 };
    for (g, h) in grad.iter_mut().zip(&g_kl) {
        *g += alpha * h;
    }
    (
        ActorLosses {
            dfm,
            kl,
            combined: dfm + alpha * kl,
        },
        grad,
    )
}

/// Builds the flow-matching sample for one state.
pub fn flow_sample<R: Rng + ?Sized>(
    reference: &mut dyn GeneratorRates,
    critics: &CriticPair,
    obs: &[f64],
    cfg: &ActorConfig,
    rngs: &mut ActorRngs<'_, R>,
    diag: &mut EulerDiagnostics,
) -> Result<DfmSample> {
    let k = reference.action_count();
    let cand = build_candidate_set(obs, reference, &cfg.candidates, rngs.candidate, diag)?;
    let pi_ref = smoothed_reference(&cand, cfg.candidates.n_roll, cfg.smoothing);
    let adv = advantage_row(critics, obs, cand.indices(), cfg.adv_clip, cfg.adv_eps);
    let target = target_policy(&pi_ref, &adv, cfg.beta, k);
    bridge_sample(obs, &target, cfg.delta, rngs.flow)
}

/// Draws `t`, a source from the bridge marginal, and the coupling row toward `target`.
pub fn bridge_sample<R: Rng + ?Sized>(obs: &[f64], target: &TargetPolicyFull, delta: f64, rng: &mut R) -> Result<DfmSample> {
    let t = sample_flow_time(delta, rng);
    let bp = bridge_point(&Distribution::uniform(target.len()), target, t)?;
    let source = bp.sample_source(rng);
    let row = coupling_row(&bp, source);
    Ok(DfmSample {
        obs: obs.to_vec(),
        t,
        source,
        target: row.off_diag().to_vec(),
    })
}

/// One combined actor step over a batch of states.
pub fn actor_update<R: Rng + ?Sized>(
    actor: &mut Actor,
    reference: &mut ReferenceGenerator,
    critics: &CriticPair,
    states: &[Vec<f64>],
    cfg: &ActorConfig,
    rngs: &mut ActorRngs<'_, R>,
    diag: &mut EulerDiagnostics,
) -> Result<ActorLosses> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty actor batch".into()));
    }
    let mut samples = Vec::with_capacity(states.len());
    let mut paths = Vec::with_capacity(states.len());
    for s in states {
        samples.push(flow_sample(reference, critics, s, cfg, rngs, diag)?);
        paths.push(actor.net.sample_path(s, cfg.candidates.substeps, rngs.kl, diag));
    }
    let items: Vec<(&[f64], &PathRecord)> = states.iter().map(|s| s.as_slice()).zip(paths.iter()).collect();
    let (losses, grad) = combined_objective(&actor.net, reference.net(), &samples, &items, cfg.alpha);
    actor.opt.step(actor.net.mlp.params_mut(), &grad);
    Ok(losses)
}

/// Replaces the reference with a snapshot of the current actor.
pub fn refresh_reference(actor: &Actor, reference: &mut ReferenceGenerator) {
    reference.replace(actor.net.clone());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::validate_rate_row;
    use crate::nn::max_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-40.0) < 1e-17 && softplus(-40.0) > 0.0);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rows_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let net = RateNetwork::new(3, 5, &[8], &mut rng);
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let row = net.rate_row(&obs, rng.gen_range(0..5), rng.gen::<f64>());
            validate_rate_row(&row).unwrap();
        }
    }

    #[test]
    fn dfm_hand_case() {
        // Zero network: logits 0, rates ln 2 everywhere off the source.
        let mlp = Mlp::from_params(&[4, 2], vec![0.0; 10]).unwrap();
        let net = RateNetwork::from_mlp(mlp, 1, 2, ).unwrap();
        let s = DfmSample {
            obs: vec![1.0],
            t: 0.2,
            source: 0,
            target: vec![0.0, std::f64::consts::LN_2 + 1.0],
        };
        let (loss, _) = dfm_loss(&net, &[s]);
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_generators_give_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = RateNetwork::new(2, 4, &[8, 8], &mut rng);
        let mut diag = EulerDiagnostics::default();
        for _ in 0..50 {
            let obs = vec![rng.gen::<f64>(), 1.0];
            let (est, _, _) = path_kl_estimate(&net, &net.clone(), &obs, 7, &mut rng, &mut diag);
            assert_eq!(est.total, 0.0);
        }
    }

    #[test]
    fn combined_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut diag = EulerDiagnostics::default();
        let mut net = RateNetwork::new(3, 4, &[6, 6], &mut rng);
        // Zero biases put dead-unit samples exactly on a ReLU kink.
        net.mlp.params_mut().iter_mut().for_each(|w| *w += rng.gen_range(-0.1..0.1));
        let reference = RateNetwork::new(3, 4, &[6, 6], &mut rng);
        let states: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let samples: Vec<DfmSample> = states
            .iter()
            .map(|s| DfmSample {
                obs: s.clone(),
                t: rng.gen::<f64>() * 0.9,
                source: rng.gen_range(0..4),
                target: (0..4).map(|_| rng.gen_range(0.0..2.0)).collect(),
            })
            .collect();
        let paths: Vec<PathRecord> = states.iter().map(|s| net.sample_path(s, 5, &mut rng, &mut diag)).collect();
        let items: Vec<(&[f64], &PathRecord)> = states.iter().map(|s| s.as_slice()).zip(paths.iter()).collect();
        let (_, g) = combined_objective(&net, &reference, &samples, &items, 0.7);
        let h = 1e-5;
        let mut fd = vec![0.0; g.len()];
        for p in 0..g.len() {
            let orig = net.mlp.params()[p];
            net.mlp.params_mut()[p] = orig + h;
            let up = combined_objective(&net, &reference, &samples, &items, 0.7).0.combined;
            net.mlp.params_mut()[p] = orig - h;
            let down = combined_objective(&net, &reference, &samples, &items, 0.7).0.combined;
            net.mlp.params_mut()[p] = orig;
            fd[p] = (up - down) / (2.0 * h);
        }
        assert!(max_relative_error(&g, &fd, 1e-6) < 1e-4);
    }

    #[test]
    fn reference_cache_matches_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = RateNetwork::new(2, 3, &[5], &mut rng);
        let mut reference = ReferenceGenerator::new(net.clone());
        let obs = [0.5, -0.5];
        let a = reference.rows(&obs, &[2, 0], 3, 10);
        let b = reference.rows(&obs, &[0, 2], 3, 10);
        assert_eq!(a[0], b[1]);
        let direct = net.rate_row(&obs, 2, 0.3);
        for (x, y) in a[0].off_diag().iter().zip(direct.off_diag()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
