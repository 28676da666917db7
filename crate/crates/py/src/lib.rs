//! Python module `rollin`: MDPs, softmax policies, the exact solvers, four-room
//! training and the check suites.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rollin_core::exact;
use rollin_core::fourroom::{default_layout, FourRoomEnv};
use rollin_core::spg::{self, TrainConfig};
use rollin_core::tabular::{self, MdpDocument, StateDistribution};
use rollin_core::verify::{self, Suite, SuiteConfig};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn json_value<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "TabularMdp", module = "rollin", frozen)]
pub struct PyMdp {
    inner: tabular::TabularMdp,
}

#[pymethods]
impl PyMdp {
    /// `transition[s][a][s']`, `reward[s][a]`; raises listing every violation.
    #[new]
    fn new(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, discount: f64, init_dist: Vec<f64>) -> PyResult<Self> {
        let doc = MdpDocument {
            n_states: transition.len(),
            n_actions: transition.first().map_or(0, Vec::len),
            discount,
            transition,
            reward,
            init_dist,
        };
        let report = tabular::validate_mdp(&doc);
        if !report.is_ok() {
            return Err(PyValueError::new_err(format!("invalid MDP:\n{report}")));
        }
        Ok(Self { inner: tabular::TabularMdp::from_document(&doc).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: tabular::TabularMdp::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    #[getter]
    fn init_dist(&self) -> Vec<f64> {
        self.inner.init_dist().probs().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("TabularMdp(n_states={}, n_actions={}, discount={})", self.n_states(), self.n_actions(), self.discount())
    }
}

#[pyclass(name = "SoftmaxPolicy", module = "rollin", frozen)]
pub struct PyPolicy {
    inner: tabular::SoftmaxPolicy,
}

#[pymethods]
impl PyPolicy {
    /// Logits `theta[s][a]`; omitted means uniform.
    #[new]
    #[pyo3(signature = (n_states, n_actions, theta = None))]
    fn new(n_states: usize, n_actions: usize, theta: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let inner = match theta {
            None => tabular::SoftmaxPolicy::zeros(n_states, n_actions),
            Some(t) => tabular::SoftmaxPolicy::new(n_states, n_actions, t.concat()).map_err(err)?,
        };
        Ok(Self { inner })
    }

    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        rows(self.inner.theta(), self.inner.n_actions())
    }

    fn probs(&self, s: usize) -> PyResult<Vec<f64>> {
        if s >= self.inner.n_states() {
            return Err(PyValueError::new_err(format!("state {s} out of range")));
        }
        Ok(self.inner.probs(s))
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
}

fn mu_or_rho(mdp: &PyMdp, mu: Option<Vec<f64>>) -> PyResult<StateDistribution> {
    match mu {
        Some(p) => StateDistribution::new(p).map_err(err),
        None => Ok(mdp.inner.init_dist().clone()),
    }
}

/// Soft value iteration; returns a dict with q_star, v_star, pi_star, residual,
/// iterations and the optimal `policy`.
#[pyfunction]
#[pyo3(signature = (mdp, alpha, tol = 1e-10, max_iter = 1_000_000))]
fn soft_value_iteration<'py>(py: Python<'py>, mdp: &PyMdp, alpha: f64, tol: f64, max_iter: usize) -> PyResult<Bound<'py, PyDict>> {
    let sol = exact::soft_value_iteration(&mdp.inner, alpha, tol, max_iter).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("q_star", rows(&sol.q_star, sol.n_actions))?;
    out.set_item("v_star", sol.v_star.clone())?;
    out.set_item("pi_star", rows(&sol.pi_star, sol.n_actions))?;
    out.set_item("residual", sol.residual)?;
    out.set_item("iterations", sol.iterations)?;
    out.set_item("policy", PyPolicy { inner: sol.policy() })?;
    Ok(out)
}

#[pyfunction]
fn exact_policy_evaluation(mdp: &PyMdp, policy: &PyPolicy, alpha: f64) -> PyResult<Vec<f64>> {
    exact::exact_policy_evaluation(&mdp.inner, &policy.inner, alpha).map_err(err)
}

/// Discounted visitation from `mu` (default: the MDP's initial distribution).
#[pyfunction]
#[pyo3(signature = (mdp, policy, mu = None))]
fn visitation_distribution(mdp: &PyMdp, policy: &PyPolicy, mu: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let mu = mu_or_rho(mdp, mu)?;
    Ok(exact::visitation_distribution(&mdp.inner, &policy.inner, &mu).map_err(err)?.probs().to_vec())
}

#[pyfunction]
#[pyo3(signature = (mdp, policy, alpha, mu = None))]
fn exact_gradient(mdp: &PyMdp, policy: &PyPolicy, alpha: f64, mu: Option<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let mu = mu_or_rho(mdp, mu)?;
    let g = exact::exact_gradient(&mdp.inner, &policy.inner, alpha, &mu).map_err(err)?;
    Ok(rows(&g, mdp.inner.n_actions()))
}

/// Four-room training on the bundled layout. Keyword arguments override the
/// `TrainConfig` defaults; returns final kappa, switches and the logged rows.
#[pyfunction]
#[pyo3(signature = (seed = 0, **overrides))]
fn train_fourroom<'py>(py: Python<'py>, seed: u64, overrides: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyAny>> {
    let mut config = serde_json::to_value(TrainConfig::default()).map_err(err)?;
    if let Some(kw) = overrides {
        let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let extra: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).map_err(err)?;
        let obj = config.as_object_mut().expect("config is an object");
        for (k, v) in extra {
            if !obj.contains_key(&k) {
                return Err(PyValueError::new_err(format!("unknown training option {k:?}")));
            }
            obj.insert(k, v);
        }
    }
    let config: TrainConfig = serde_json::from_value(config).map_err(err)?;
    let env = FourRoomEnv::new(default_layout(), config.reward);
    let out = py.detach(|| spg::train_fourroom(&env, &config, seed)).map_err(err)?;
    let summary = serde_json::json!({
        "final_kappa": out.final_kappa,
        "final_context": out.final_context,
        "switches": out.switches,
        "rows": out.rows,
    });
    json_value(py, &summary.to_string())
}

/// Runs a check suite and returns its reports as dicts.
#[pyfunction]
#[pyo3(signature = (suite = "all", seed = 0, instances = 100, mc_samples = 1_000_000, fourroom = true))]
fn run_suite<'py>(
    py: Python<'py>,
    suite: &str,
    seed: u64,
    instances: usize,
    mc_samples: usize,
    fourroom: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let config = SuiteConfig {
        instances,
        q_pairs: 10 * instances,
        mc_samples,
        fourroom,
        ..Default::default()
    };
    let reports = py.detach(|| verify::run_suite(suite, seed, &config)).map_err(err)?;
    json_value(py, &serde_json::to_string(&reports).map_err(err)?)
}

#[pymodule]
fn rollin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdp>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(soft_value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(exact_policy_evaluation, m)?)?;
    m.add_function(wrap_pyfunction!(visitation_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(exact_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(train_fourroom, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
