//! Python module `jumpflow`: environments, the rate network, bridge rates and
//! the training entry points.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpflow::bridge::{bridge_point, coupling_row, TargetPolicyFull};
use jumpflow::ctmc::{Distribution, EulerDiagnostics};
use jumpflow::env::{self as envs, EnvName, EnvSpec, FeatureEncoder};
use jumpflow::harness::{self, EvalSummary, RunConfig, TheoryCheck};

fn err(e: jumpflow::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn env_name(name: &str) -> PyResult<EnvName> {
    name.parse().map_err(err)
}

fn config(toml: &str) -> PyResult<RunConfig> {
    RunConfig::resolve(toml).map_err(err)
}

/// Grid environment. Observations are returned as feature vectors.
#[pyclass(module = "jumpflow")]
struct Env {
    inner: envs::Env,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (name, seed = 0))]
    fn new(name: &str, seed: u64) -> PyResult<Self> {
        let inner = envs::make_env(EnvSpec::for_env(env_name(name)?), seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.spec().action_count()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec().feature_dim()
    }

    #[getter]
    fn phase(&self) -> u8 {
        self.inner.phase()
    }

    #[getter]
    fn cell(&self) -> usize {
        self.inner.observation().cell
    }

    fn reset(&mut self) -> Vec<f64> {
        let obs = self.inner.reset();
        self.inner.spec().features(&obs)
    }

    /// Returns `(obs, reward, done, truncated, goal)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, bool, Option<usize>)> {
        let o = self.inner.step(action).map_err(err)?;
        Ok((self.inner.spec().features(&o.obs), o.reward, o.done, o.truncated, o.goal))
    }
}

/// Rate network `obs, current action, t -> off-diagonal rates`.
#[pyclass(module = "jumpflow")]
struct RateNetwork {
    inner: jumpflow::actor::RateNetwork,
}

impl RateNetwork {
    fn check_obs(&self, obs: &[f64]) -> PyResult<()> {
        if obs.len() != self.inner.obs_dim() {
            return Err(PyValueError::new_err(format!("obs has {} entries, expected {}", obs.len(), self.inner.obs_dim())));
        }
        Ok(())
    }
}

#[pymethods]
impl RateNetwork {
    #[new]
    #[pyo3(signature = (obs_dim, actions, hidden = vec![64, 64], seed = 0))]
    fn new(obs_dim: usize, actions: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        if actions < 2 || obs_dim == 0 || hidden.contains(&0) {
            return Err(PyValueError::new_err("need obs_dim > 0, actions >= 2 and positive hidden widths"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: jumpflow::actor::RateNetwork::new(obs_dim, actions, &hidden, &mut rng),
        })
    }

    /// Loads `rate.net` from an agent directory written by the CLI.
    #[staticmethod]
    fn load(agent_dir: PathBuf) -> PyResult<Self> {
        match harness::load_agent(&agent_dir, 3e-4, 3e-4).map_err(err)?.1 {
            harness::StoredAgent::Flow(a) => Ok(Self { inner: a.actor }),
            harness::StoredAgent::Dqn(_) => Err(PyValueError::new_err("checkpoint holds a DQN agent")),
        }
    }

    #[getter]
    fn actions(&self) -> usize {
        self.inner.actions()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    /// Off-diagonal rates out of `current` at time `t` (zero at `current`).
    fn rates(&self, obs: Vec<f64>, current: usize, t: f64) -> PyResult<Vec<f64>> {
        self.check_obs(&obs)?;
        if current >= self.inner.actions() {
            return Err(PyValueError::new_err("current action out of range"));
        }
        Ok(self.inner.rate_row(&obs, current, t).off_diag().to_vec())
    }

    /// Simulates the chain from a uniform start; returns the visited states.
    #[pyo3(signature = (obs, substeps = 10, seed = 0))]
    fn sample_path(&self, obs: Vec<f64>, substeps: usize, seed: u64) -> PyResult<Vec<usize>> {
        self.check_obs(&obs)?;
        if substeps == 0 {
            return Err(PyValueError::new_err("substeps must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = self.inner.sample_path(&obs, substeps, &mut rng, &mut EulerDiagnostics::default());
        Ok(path.states().to_vec())
    }

    #[pyo3(signature = (obs, substeps = 10, seed = 0))]
    fn sample_action(&self, obs: Vec<f64>, substeps: usize, seed: u64) -> PyResult<usize> {
        Ok(*self.sample_path(obs, substeps, seed)?.last().expect("non-empty path"))
    }
}

/// Marginal of the linear bridge from `p0` to `target` at time `t`.
#[pyfunction]
fn bridge_marginal(p0: Vec<f64>, target: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
    let p0 = Distribution::new(p0).map_err(err)?;
    let target = TargetPolicyFull::from_probs(target).map_err(err)?;
    Ok(bridge_point(&p0, &target, t).map_err(err)?.p_t().to_vec())
}

/// Coupling rates out of `source` that transport the bridge marginal.
#[pyfunction]
fn coupling_rates(p0: Vec<f64>, target: Vec<f64>, t: f64, source: usize) -> PyResult<Vec<f64>> {
    let p0 = Distribution::new(p0).map_err(err)?;
    let target = TargetPolicyFull::from_probs(target).map_err(err)?;
    if source >= p0.len() {
        return Err(PyValueError::new_err("source out of range"));
    }
    let bp = bridge_point(&p0, &target, t).map_err(err)?;
    Ok(coupling_row(&bp, source).off_diag().to_vec())
}

#[pyfunction]
fn env_names() -> Vec<&'static str> {
    EnvName::ALL.iter().map(|e| e.as_str()).collect()
}

/// Resolved default configuration for `env` as TOML text.
#[pyfunction]
fn default_config(env: &str) -> PyResult<String> {
    Ok(RunConfig::for_env(env_name(env)?).to_toml())
}

/// Runs one property suite; returns `(passed, report)`.
#[pyfunction]
#[pyo3(signature = (which, trials = None, seed = 0))]
fn check_theory(which: &str, trials: Option<usize>, seed: u64) -> PyResult<(bool, String)> {
    let check: TheoryCheck = which.parse().map_err(err)?;
    let report = harness::check_theory(check, trials.unwrap_or_else(|| check.default_trials()), seed).map_err(err)?;
    Ok((report.passed(), report.to_string()))
}

/// Collects the offline dataset for `env` and writes it to `path`.
#[pyfunction]
#[pyo3(signature = (env, path, seed = 0))]
fn collect_data(env: &str, path: PathBuf, seed: u64) -> PyResult<usize> {
    let name = env_name(env)?;
    let behavior = envs::BehaviorSpec::default_for(name);
    let data = envs::collect_offline(&EnvSpec::for_env(name), &behavior, seed).map_err(err)?;
    envs::write_dataset(&path, envs::DatasetHeader { env: name, seed }, &data).map_err(err)?;
    Ok(data.len())
}

fn summary<'py>(py: Python<'py>, offline: &EvalSummary, fin: &EvalSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("offline_return", offline.mean_return)?;
    d.set_item("final_return", fin.mean_return)?;
    d.set_item("final_std", fin.std_return)?;
    d.set_item("goal_visits", fin.goal_visits.clone())?;
    d.set_item("distinct_goals", fin.distinct_goals)?;
    d.set_item("success_rate", fin.success_rate)?;
    d.set_item("mean_success_length", fin.mean_success_length)?;
    Ok(d)
}

/// Pretrains and fine-tunes a flow agent; `config` is TOML layered over the defaults.
#[pyfunction]
#[pyo3(signature = (config = ""))]
fn run_flow<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = self::config(config)?;
    let (_, fine) = harness::run_flow_experiment(&cfg).map_err(err)?;
    let d = summary(py, &fine.offline_eval, &fine.final_eval)?;
    d.set_item("refreshes", fine.refresh_steps.len())?;
    d.set_item("kl_trace", fine.kl_trace)?;
    Ok(d)
}

/// Offline then online double DQN.
#[pyfunction]
#[pyo3(signature = (config = ""))]
fn run_dqn<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = self::config(config)?;
    let data = Arc::new(harness::offline_dataset(&cfg).map_err(err)?);
    let out = harness::run_dqn(&cfg, data).map_err(err)?;
    summary(py, &out.offline_eval, &out.final_eval)
}

#[pymodule]
#[pyo3(name = "jumpflow")]
fn jumpflow_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<RateNetwork>()?;
    m.add_function(wrap_pyfunction!(bridge_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_rates, m)?)?;
    m.add_function(wrap_pyfunction!(env_names, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(check_theory, m)?)?;
    m.add_function(wrap_pyfunction!(collect_data, m)?)?;
    m.add_function(wrap_pyfunction!(run_flow, m)?)?;
    m.add_function(wrap_pyfunction!(run_dqn, m)?)?;
    Ok(())
}
