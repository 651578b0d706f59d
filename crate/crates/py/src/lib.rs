//! Python bindings (`import adr_py`).
//!
//! Actions are flat indices: `0..n` debris, `n` refuel, `n+1..=2n` detour
//! above, `2n+1..=3n` detour below.

use adr_core::astro::{self, DetourDirection, TransferPlan};
use adr_core::env::{self as core_env, Action, MissionState};
use adr_core::harness::{self, EvaluationMode, SuiteConfig};
use adr_core::planners::{self, MctsConfig};
use adr_core::ppo::{self, PPOHyperparams, PolicyParameters, TrainConfig};
use adr_core::rng::rng_from_seed;
use adr_core::scenario::{self as core_scenario, MissionParams};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::path::PathBuf;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn mission(n_debris: usize, collision_probability: f64) -> PyResult<MissionParams> {
    let p = MissionParams { n_debris, collision_probability, ..Default::default() };
    p.validate().map_err(value_err)?;
    Ok(p)
}

fn plan_dict<'py>(py: Python<'py>, plan: &TransferPlan) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r1_km", plan.r1_km)?;
    d.set_item("r2_km", plan.r2_km)?;
    d.set_item("delta_v_depart_km_s", plan.delta_v_depart_km_s)?;
    d.set_item("delta_v_arrive_km_s", plan.delta_v_arrive_km_s)?;
    d.set_item("closure_delta_v_km_s", plan.closure_delta_v_km_s)?;
    d.set_item("delta_v_total_km_s", plan.delta_v_total_km_s)?;
    d.set_item("time_of_flight_s", plan.time_of_flight_s)?;
    d.set_item("transfer_semi_major_axis_km", plan.transfer_semi_major_axis_km)?;
    d.set_item("radial_offset_km", plan.radial_offset_km)?;
    Ok(d)
}

/// Hohmann transfer between two circular altitudes (km).
#[pyfunction]
fn hohmann<'py>(py: Python<'py>, altitude1_km: f64, altitude2_km: f64) -> PyResult<Bound<'py, PyDict>> {
    let plan = astro::hohmann_plan(astro::altitude_to_radius(altitude1_km), astro::altitude_to_radius(altitude2_km))
        .map_err(value_err)?;
    plan_dict(py, &plan)
}

/// Detour to `altitude2 ± offset` followed by the circularisation burn.
#[pyfunction]
fn ca_detour<'py>(
    py: Python<'py>,
    altitude1_km: f64,
    altitude2_km: f64,
    offset_km: f64,
    direction: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let dir = match direction.to_ascii_lowercase().as_str() {
        "above" => DetourDirection::Above,
        "below" => DetourDirection::Below,
        other => return Err(value_err(format!("direction must be 'above' or 'below', got {other:?}"))),
    };
    let plan = astro::ca_adjusted_plan(
        astro::altitude_to_radius(altitude1_km),
        astro::altitude_to_radius(altitude2_km),
        offset_km,
        dir,
    )
    .map_err(value_err)?;
    plan_dict(py, &plan)
}

#[pyclass(name = "Scenario", module = "adr_py")]
struct PyScenario {
    inner: core_scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    #[pyo3(signature = (seed, n_debris = 50, collision_probability = 1.0 / 3.0))]
    fn generate(seed: u64, n_debris: usize, collision_probability: f64) -> PyResult<Self> {
        let p = mission(n_debris, collision_probability)?;
        Ok(Self { inner: core_scenario::generate_scenario(seed, &p).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: core_scenario::scenario_from_csv(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: core_scenario::load_scenario(&path).map_err(|e| PyIOError::new_err(e.to_string()))? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core_scenario::save_scenario(&self.inner, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_csv(&self) -> String {
        core_scenario::scenario_to_csv(&self.inner)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn collision_probability(&self) -> f64 {
        self.inner.params.collision_probability
    }

    #[getter]
    fn altitudes_km(&self) -> Vec<f64> {
        self.inner.debris.iter().map(|d| d.elements.altitude_km()).collect()
    }

    #[getter]
    fn true_anomalies_rad(&self) -> Vec<f64> {
        self.inner.debris.iter().map(|d| d.elements.true_anomaly_rad).collect()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(n={}, seed={}, p={})", self.inner.n(), self.inner.seed, self.inner.params.collision_probability)
    }
}

#[pyclass(name = "MissionEnv", module = "adr_py")]
struct PyMissionEnv {
    scenario: core_scenario::Scenario,
    state: MissionState,
}

impl PyMissionEnv {
    fn action(&self, index: usize) -> PyResult<Action> {
        Action::from_index(index, self.scenario.n())
            .ok_or_else(|| value_err(format!("action index {index} out of range")))
    }
}

#[pymethods]
impl PyMissionEnv {
    #[new]
    #[pyo3(signature = (scenario, seed = 0))]
    fn new(scenario: PyRef<'_, PyScenario>, seed: u64) -> Self {
        let scenario = scenario.inner.clone();
        let state = MissionState::reset(&scenario, seed);
        Self { scenario, state }
    }

    /// Start a new episode; returns the observation.
    #[pyo3(signature = (seed = 0))]
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.state = MissionState::reset(&self.scenario, seed);
        self.state.observation(&self.scenario).values
    }

    /// Apply a flat action index; returns `(observation, reward, terminal, info)`.
    fn step<'py>(&mut self, py: Python<'py>, action: usize) -> PyResult<(Vec<f64>, f64, bool, Bound<'py, PyDict>)> {
        let a = self.action(action)?;
        let out = self.state.step(&self.scenario, a).map_err(value_err)?;
        let info = PyDict::new(py);
        info.set_item("action", a.to_string())?;
        info.set_item("delta_v_km_s", out.info.delta_v_km_s)?;
        info.set_item("time_s", out.info.time_s)?;
        info.set_item("replanned", out.info.replanned)?;
        info.set_item("refueled", out.info.refueled)?;
        info.set_item("zone_triggered", out.info.zone_triggered)?;
        info.set_item("visited", out.info.visited)?;
        info.set_item("clearance_km", out.info.clearance_km)?;
        info.set_item("detour_offset_km", out.info.detour_offset_km)?;
        info.set_item("termination", out.termination.map(|t| t.as_str()))?;
        Ok((self.state.observation(&self.scenario).values, out.reward, out.terminal, info))
    }

    fn observation(&self) -> Vec<f64> {
        self.state.observation(&self.scenario).values
    }

    fn action_mask(&self) -> PyResult<Vec<bool>> {
        self.state.action_mask(&self.scenario).map_err(value_err)
    }

    fn valid_actions(&self) -> PyResult<Vec<usize>> {
        let n = self.scenario.n();
        Ok(self.state.valid_actions(&self.scenario).map_err(value_err)?.iter().map(|a| a.to_index(n)).collect())
    }

    fn action_label(&self, index: usize) -> PyResult<String> {
        Ok(self.action(index)?.to_string())
    }

    /// Arrow-joined labels of the maneuvers flown so far.
    fn trace(&self) -> String {
        core_env::format_trace(&self.state.trace)
    }

    fn episode_log_csv(&self) -> String {
        core_env::episode_log_csv(&self.state.trace)
    }

    #[getter]
    fn n_actions(&self) -> usize {
        core_env::action_count(self.scenario.n())
    }

    #[getter]
    fn observation_size(&self) -> usize {
        core_env::observation_len(self.scenario.n())
    }

    #[getter]
    fn terminal(&self) -> bool {
        self.state.is_terminal()
    }

    #[getter]
    fn termination(&self) -> Option<&'static str> {
        self.state.termination.map(|t| t.as_str())
    }

    #[getter]
    fn fuel(&self) -> f64 {
        self.state.fuel
    }

    #[getter]
    fn elapsed_s(&self) -> f64 {
        self.state.elapsed_s
    }

    #[getter]
    fn visited_count(&self) -> usize {
        self.state.visited_count()
    }

    #[getter]
    fn episode_return(&self) -> f64 {
        self.state.episode_return
    }

    #[getter]
    fn pending_target(&self) -> Option<usize> {
        self.state.pending_target
    }

    /// Greedy min-Δv sequencing or, when a detour is pending, the
    /// minimum-time detour.
    fn greedy_action(&self) -> PyResult<usize> {
        let a = if self.state.pending_target.is_some() {
            planners::greedy_ca_min_time(&self.state, &self.scenario)
        } else {
            planners::greedy_min_dv(&self.state, &self.scenario)
        }
        .map_err(value_err)?;
        Ok(a.to_index(self.scenario.n()))
    }

    #[pyo3(signature = (simulations = 200, rollout_depth = 15, exploration_constant = 1.5, seed = 0))]
    fn mcts_action(&self, simulations: usize, rollout_depth: usize, exploration_constant: f64, seed: u64) -> PyResult<usize> {
        let cfg = MctsConfig { exploration_constant, simulations_per_step: simulations, rollout_depth };
        let mut rng = rng_from_seed(seed);
        let a = planners::mcts_select_action(&self.state, &self.scenario, &cfg, &mut rng).map_err(value_err)?;
        Ok(a.to_index(self.scenario.n()))
    }
}

#[pyclass(name = "Policy", module = "adr_py")]
struct PyPolicy {
    inner: PolicyParameters,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (n_debris, hidden = 256, seed = 0))]
    fn new(n_debris: usize, hidden: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: PolicyParameters::new(n_debris, [hidden, hidden], seed).map_err(value_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, n_debris = None))]
    fn load(path: PathBuf, n_debris: Option<usize>) -> PyResult<Self> {
        Ok(Self { inner: ppo::load_policy(&path, n_debris).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ppo::save_policy(&self.inner, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        ppo::policy_to_json(&self.inner).map_err(runtime_err)
    }

    #[getter]
    fn n_debris(&self) -> usize {
        self.inner.n_debris
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// `(logits, value)` for one observation.
    fn forward(&self, observation: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        self.inner.forward(&observation).map_err(value_err)
    }

    fn action_probabilities(&self, observation: Vec<f64>, mask: Vec<bool>) -> PyResult<Vec<f64>> {
        self.inner.action_probabilities(&observation, &mask).map_err(value_err)
    }

    fn greedy_action(&self, observation: Vec<f64>, mask: Vec<bool>) -> PyResult<usize> {
        self.inner.greedy_action(&observation, &mask).map_err(value_err)
    }
}

#[pyfunction]
fn masked_softmax(logits: Vec<f64>, mask: Vec<bool>) -> PyResult<Vec<f64>> {
    ppo::masked_softmax(&logits, &mask).map_err(value_err)
}

#[pyfunction]
fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    ppo::clipped_surrogate(ratio, advantage, epsilon)
}

/// Returns `(advantages, returns)`.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, last_value = 0.0, gamma = 0.99, gae_lambda = 0.95))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    last_value: f64,
    gamma: f64,
    gae_lambda: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    ppo::compute_gae(&rewards, &values, &dones, last_value, gamma, gae_lambda).map_err(value_err)
}

/// Exhaustive optimum for a small zone-free scenario.
#[pyfunction]
fn brute_force_oracle<'py>(py: Python<'py>, scenario: PyRef<'_, PyScenario>) -> PyResult<Bound<'py, PyDict>> {
    let r = planners::brute_force_oracle(&scenario.inner).map_err(value_err)?;
    let n = scenario.inner.n();
    let d = PyDict::new(py);
    d.set_item("actions", r.actions.iter().map(|a| a.to_index(n)).collect::<Vec<_>>())?;
    d.set_item("labels", r.actions.iter().map(|a| a.to_string()).collect::<Vec<_>>())?;
    d.set_item("episode_return", r.episode_return)?;
    d.set_item("total_delta_v_km_s", r.total_delta_v_km_s)?;
    Ok(d)
}

/// Train a policy; returns `(policy, log_csv)`.
#[pyfunction]
#[pyo3(signature = (
    n_debris, total_steps, seed = 0, collision_probability = 1.0 / 3.0, learning_rate = 5e-6,
    hidden = 256, batch_size = 2048, minibatch_size = 256, epochs = 10, workers = 1
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    n_debris: usize,
    total_steps: usize,
    seed: u64,
    collision_probability: f64,
    learning_rate: f64,
    hidden: usize,
    batch_size: usize,
    minibatch_size: usize,
    epochs: usize,
    workers: usize,
) -> PyResult<(PyPolicy, String)> {
    let config = TrainConfig {
        hyperparams: PPOHyperparams {
            learning_rate,
            total_steps,
            batch_size,
            minibatch_size,
            epochs_per_batch: epochs,
            ..Default::default()
        },
        mission: mission(n_debris, collision_probability)?,
        hidden: [hidden, hidden],
        seed,
        workers,
    };
    let out = py.detach(|| ppo::train(&config)).map_err(runtime_err)?;
    Ok((PyPolicy { inner: out.policy }, ppo::train_log_csv(&out.log)))
}

/// Run the evaluation suite; returns `(rows_csv, summary_csv)`.
#[pyfunction]
#[pyo3(signature = (
    modes, n_test_cases, iterations, seed = 0, n_debris = 50, collision_probability = 1.0 / 3.0,
    policy = None, workers = 1
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    modes: Vec<String>,
    n_test_cases: usize,
    iterations: usize,
    seed: u64,
    n_debris: usize,
    collision_probability: f64,
    policy: Option<PyRef<'_, PyPolicy>>,
    workers: usize,
) -> PyResult<(String, String)> {
    let modes = modes
        .iter()
        .map(|m| m.replace('-', "_").parse::<EvaluationMode>().map_err(value_err))
        .collect::<PyResult<Vec<_>>>()?;
    let config = SuiteConfig {
        modes,
        n_test_cases,
        iterations,
        seed,
        mission: mission(n_debris, collision_probability)?,
        workers,
        ..Default::default()
    };
    let params = policy.as_ref().map(|p| p.inner.clone());
    let report = py.detach(|| harness::run_suite(&config, params.as_ref())).map_err(value_err)?;
    Ok((harness::rows_to_csv(&report.rows), harness::summary_to_csv(&report.summary)))
}

#[pymodule]
fn adr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyMissionEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(hohmann, m)?)?;
    m.add_function(wrap_pyfunction!(ca_detour, m)?)?;
    m.add_function(wrap_pyfunction!(masked_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("MU_KM3_S2", astro::MU_KM3_S2)?;
    m.add("EARTH_RADIUS_KM", astro::EARTH_RADIUS_KM)?;
    Ok(())
}
