//! Python bindings: environments, planning, the exploration agents, the
//! confidence primitives and the harness experiments.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rfexplore::baselines::{run_generative_model, run_random_policy};
use rfexplore::bpi::{run_bpi_ucrl, BpiConfig};
use rfexplore::confidence::{self, ThresholdMode, ThresholdSpec};
use rfexplore::envs::{make_double_chain, make_gridworld, make_random_mdp};
use rfexplore::harness::{run_error_curve, run_sample_complexity, run_visit_counts, ExperimentConfig, OutputFormat};
use rfexplore::mdp::{eval_policy, plan_optimal};
use rfexplore::rf::{run_rf_express, run_rf_ucrl, Outcome, RfConfig};
use rfexplore::rng::seeded;
use rfexplore::{EmpiricalState, Policy, RewardTable, TabularMdp};

fn py_err(e: rfexplore::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A finite-horizon tabular MDP with its built-in reward.
#[pyclass(name = "Mdp", frozen)]
pub struct PyMdp {
    inner: TabularMdp,
}

#[pymethods]
impl PyMdp {
    #[staticmethod]
    #[pyo3(signature = (length, horizon, slip = 0.1, gamma = 1.0))]
    fn double_chain(length: usize, horizon: usize, slip: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self { inner: make_double_chain(length, horizon, slip, gamma).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (side, horizon, slip = 0.05, reward_cell = (16, 16), start_cell = (10, 10), gamma = 1.0))]
    fn gridworld(
        side: usize,
        horizon: usize,
        slip: f64,
        reward_cell: (usize, usize),
        start_cell: (usize, usize),
        gamma: f64,
    ) -> PyResult<Self> {
        Ok(Self { inner: make_gridworld(side, horizon, slip, reward_cell, start_cell, gamma).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (num_states, num_actions, horizon, gamma = 1.0, seed = 0))]
    fn random(num_states: usize, num_actions: usize, horizon: usize, gamma: f64, seed: u64) -> PyResult<Self> {
        let inner = make_random_mdp(num_states, num_actions, horizon, gamma, &mut seeded(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn initial_state(&self) -> usize {
        self.inner.initial_state()
    }

    /// `(V*(s1), actions)` where `actions[h][s]` is the optimal action.
    fn plan(&self) -> PyResult<(f64, Vec<Vec<usize>>)> {
        let (policy, values) = plan_optimal(&self.inner, self.inner.rewards()).map_err(py_err)?;
        Ok((values.v(0, self.inner.initial_state()), policy_rows(&policy, self.inner.num_states())))
    }

    /// Value at the initial state of the policy `actions[h][s]`.
    fn evaluate(&self, actions: Vec<Vec<usize>>) -> PyResult<f64> {
        let policy = policy_from_rows(&self.inner, actions)?;
        let values = eval_policy(&self.inner, &policy, self.inner.rewards()).map_err(py_err)?;
        Ok(values.v(0, self.inner.initial_state()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Mdp(num_states={}, num_actions={}, horizon={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.horizon()
        )
    }
}

fn policy_rows(policy: &Policy, num_states: usize) -> Vec<Vec<usize>> {
    policy.actions().chunks(num_states).map(<[usize]>::to_vec).collect()
}

fn policy_from_rows(mdp: &TabularMdp, rows: Vec<Vec<usize>>) -> PyResult<Policy> {
    let flat: Vec<usize> = rows.into_iter().flatten().collect();
    Policy::new(mdp.horizon(), mdp.num_states(), mdp.num_actions(), flat).map_err(py_err)
}

/// Outcome of one exploration run.
#[pyclass(name = "RunResult", frozen, get_all)]
pub struct PyRunResult {
    /// Whether the stopping rule fired within the budget.
    stopped: bool,
    /// Episodes collected.
    episodes: u64,
    /// Visits per state, summed over steps and actions.
    visits: Vec<u64>,
    /// Largest error, over `rewards` random reward tables, of the value planned
    /// in the empirical model (reward-free agents); `None` otherwise.
    worst_error: Option<f64>,
    /// Value of the recommended policy (best-policy agent); `None` otherwise.
    recommended_value: Option<f64>,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!("RunResult(stopped={}, episodes={})", self.stopped, self.episodes)
    }
}

fn stopped_and_episodes(outcome: Outcome) -> (bool, u64) {
    match outcome {
        Outcome::Stopped { tau } => (true, tau),
        Outcome::BudgetExhausted { episodes } => (false, episodes),
    }
}

/// Worst `|V_hat* - V*|` at the initial state over random reward tables.
fn worst_planning_error(mdp: &TabularMdp, state: &EmpiricalState, rewards: usize, seed: u64) -> PyResult<f64> {
    let empirical = state.empirical_mdp(mdp, ThresholdMode::PerStep).map_err(py_err)?;
    let s1 = mdp.initial_state();
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..rewards {
        let reward = RewardTable::random(mdp.horizon(), mdp.num_states(), mdp.num_actions(), &mut rng);
        let estimate = plan_optimal(&empirical, &reward).map_err(py_err)?.1.v(0, s1);
        let truth = plan_optimal(mdp, &reward).map_err(py_err)?.1.v(0, s1);
        worst = worst.max((estimate - truth).abs());
    }
    Ok(worst)
}

/// Reward-free exploration; `w_bonus` selects the variance-style bonus.
#[pyfunction]
#[pyo3(signature = (mdp, epsilon, delta = 0.1, clipped = true, w_bonus = false, budget = 1_000_000, seed = 0, rewards = 20))]
#[allow(clippy::too_many_arguments)]
fn explore_reward_free(
    mdp: &PyMdp,
    epsilon: f64,
    delta: f64,
    clipped: bool,
    w_bonus: bool,
    budget: u64,
    seed: u64,
    rewards: usize,
) -> PyResult<PyRunResult> {
    let cfg = RfConfig { clipped, ..RfConfig::new(epsilon, delta).map_err(py_err)?.with_budget(budget) };
    let spec = cfg.threshold_spec(&mdp.inner).map_err(py_err)?;
    let mut rng = seeded(seed);
    let run = if w_bonus {
        run_rf_express(&mdp.inner, &cfg, &spec, &mut rng)
    } else {
        run_rf_ucrl(&mdp.inner, &cfg, &spec, &mut rng)
    }
    .map_err(py_err)?;
    let (stopped, episodes) = stopped_and_episodes(run.outcome);
    Ok(PyRunResult {
        stopped,
        episodes,
        visits: run.state.state_visits(),
        worst_error: Some(worst_planning_error(&mdp.inner, &run.state, rewards, seed.wrapping_add(1))?),
        recommended_value: None,
    })
}

/// Best-policy identification for the MDP's built-in reward.
#[pyfunction]
#[pyo3(signature = (mdp, epsilon, delta = 0.1, budget = 1_000_000, seed = 0))]
fn identify_best_policy(mdp: &PyMdp, epsilon: f64, delta: f64, budget: u64, seed: u64) -> PyResult<PyRunResult> {
    let cfg = BpiConfig::new(epsilon, delta).map_err(py_err)?.with_budget(budget);
    let spec = cfg.threshold_spec(&mdp.inner).map_err(py_err)?;
    let run = run_bpi_ucrl(&mdp.inner, mdp.inner.rewards(), &cfg, &spec, &mut seeded(seed)).map_err(py_err)?;
    let (stopped, episodes) = stopped_and_episodes(run.outcome);
    let value = eval_policy(&mdp.inner, &run.recommendation, mdp.inner.rewards()).map_err(py_err)?;
    Ok(PyRunResult {
        stopped,
        episodes,
        visits: run.state.state_visits(),
        worst_error: None,
        recommended_value: Some(value.v(0, mdp.inner.initial_state())),
    })
}

/// Per-state visits of uniform-random exploration over `transitions` steps.
#[pyfunction]
#[pyo3(signature = (mdp, transitions, seed = 0))]
fn random_policy_visits(mdp: &PyMdp, transitions: u64, seed: u64) -> Vec<u64> {
    run_random_policy(&mdp.inner, transitions, &mut seeded(seed)).state_visits()
}

/// Per-state visits of generative-model sampling over `transitions` draws.
#[pyfunction]
#[pyo3(signature = (mdp, transitions, seed = 0))]
fn generative_model_visits(mdp: &PyMdp, transitions: u64, seed: u64) -> PyResult<Vec<u64>> {
    let state = run_generative_model(&mdp.inner, transitions, ThresholdMode::PerStep, &mut seeded(seed)).map_err(py_err)?;
    Ok(state.state_visits())
}

/// Exploration threshold `beta(n, delta)` for per-step counts.
#[pyfunction]
fn beta(n: f64, delta: f64, num_states: usize, num_actions: usize, horizon: usize) -> PyResult<f64> {
    let spec = ThresholdSpec::per_step(delta, num_states, num_actions, horizon).map_err(py_err)?;
    Ok(confidence::beta(n, &spec))
}

/// `KL(q || p)` between categorical distributions.
#[pyfunction]
fn kl(q: Vec<f64>, p: Vec<f64>) -> PyResult<f64> {
    confidence::kl_categorical(&q, &p).map_err(py_err)
}

/// `max p.v` over `{p : KL(q || p) <= alpha}`, with the maximiser.
#[pyfunction]
fn kl_ball_max(q: Vec<f64>, v: Vec<f64>, alpha: f64) -> PyResult<(f64, Vec<f64>)> {
    confidence::kl_ball_max(&q, &v, alpha).map_err(py_err)
}

/// `min p.v` over `{p : KL(q || p) <= alpha}`, with the minimiser.
#[pyfunction]
fn kl_ball_min(q: Vec<f64>, v: Vec<f64>, alpha: f64) -> PyResult<(f64, Vec<f64>)> {
    confidence::kl_ball_min(&q, &v, alpha).map_err(py_err)
}

fn experiment_format(format: &str) -> PyResult<OutputFormat> {
    match format {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(PyValueError::new_err(format!("unknown format '{other}'"))),
    }
}

/// Runs a harness experiment from a JSON config and returns the rendered table.
/// `kind` is one of `curve`, `visits`, `complexity`.
#[pyfunction]
#[pyo3(signature = (kind, config_json = "{}", format = "csv"))]
fn run_experiment(kind: &str, config_json: &str, format: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let format = experiment_format(format)?;
    let table = match kind {
        "curve" => run_error_curve(&cfg).map_err(py_err)?.to_table(),
        "visits" => run_visit_counts(&cfg).map_err(py_err)?.to_table(),
        "complexity" => run_sample_complexity(&cfg).map_err(py_err)?.to_table(),
        other => return Err(PyValueError::new_err(format!("unknown experiment '{other}'"))),
    };
    table.render(format).map_err(py_err)
}

/// Adds every binding to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(explore_reward_free, m)?)?;
    m.add_function(wrap_pyfunction!(identify_best_policy, m)?)?;
    m.add_function(wrap_pyfunction!(random_policy_visits, m)?)?;
    m.add_function(wrap_pyfunction!(generative_model_visits, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(kl_ball_max, m)?)?;
    m.add_function(wrap_pyfunction!(kl_ball_min, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

#[pymodule]
fn pyrfexplore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_rows_round_trip() {
        let mdp = make_double_chain(5, 3, 0.1, 1.0).unwrap();
        let (policy, _) = plan_optimal(&mdp, mdp.rewards()).unwrap();
        let rows = policy_rows(&policy, 5);
        assert_eq!(rows.len(), 3);
        assert_eq!(policy_from_rows(&mdp, rows).unwrap(), policy);
    }

    #[test]
    fn formats_are_parsed() {
        assert!(matches!(experiment_format("csv"), Ok(OutputFormat::Csv)));
        assert!(matches!(experiment_format("json"), Ok(OutputFormat::Json)));
    }
}
