//! Python bindings for `softq_core`.
//!
//! Q-tables cross the boundary as nested lists indexed `[state][action]`.
//! Models are the built-in two-state MDP unless `mdp_toml` carries a TOML
//! model description.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use softq_core::bounds::{self, BoundKind, BoundParams};
use softq_core::learner::{run, LearnerConfig, Sampling};
use softq_core::mdp::{build_mdp, uniform_distribution, MdpSpec, QTable, TabularMdp};
use softq_core::soft::{self, SoftOperator};
use softq_core::solvers::{self, DEFAULT_MAX_ITER, DEFAULT_TOL};
use softq_core::verify::{self as checks, VerifyOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn operator(name: &str, beta: f64) -> PyResult<SoftOperator> {
    match name {
        "lse" => SoftOperator::lse(beta).map_err(value_err),
        "boltzmann" | "boltz" => SoftOperator::boltzmann(beta).map_err(value_err),
        other => Err(PyValueError::new_err(format!(
            "unknown operator {other:?}; expected \"lse\" or \"boltzmann\""
        ))),
    }
}

fn load_mdp(mdp_toml: Option<&str>) -> PyResult<TabularMdp> {
    let spec = match mdp_toml {
        Some(text) => MdpSpec::from_toml(text).map_err(value_err)?,
        None => MdpSpec::two_state_example(),
    };
    build_mdp(&spec, true).map_err(value_err)
}

fn rows(q: &QTable) -> Vec<Vec<f64>> {
    (0..q.n_states()).map(|s| q.action_values(s)).collect()
}

/// Soft maximum of `values` under `"lse"` or `"boltzmann"`.
#[pyfunction]
fn soft_value(values: Vec<f64>, operator_name: &str, beta: f64) -> PyResult<f64> {
    soft::soft_value(&values, operator(operator_name, beta)?).map_err(value_err)
}

/// Boltzmann weights `exp(βv) / Σ exp(βv)`.
#[pyfunction]
fn softmax(values: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    soft::softmax(&values, beta).map_err(value_err)
}

/// Optimal Q-function by value iteration.
#[pyfunction]
#[pyo3(signature = (mdp_toml=None))]
fn optimal_q(py: Python<'_>, mdp_toml: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
    let mdp = load_mdp(mdp_toml)?;
    let q = py
        .detach(|| solvers::optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER))
        .map_err(runtime_err)?;
    Ok(rows(&q))
}

/// Fixed point of the soft Bellman operator, started from zero.
#[pyfunction]
#[pyo3(signature = (operator_name, beta, mdp_toml=None))]
fn soft_fixed_point(
    py: Python<'_>,
    operator_name: &str,
    beta: f64,
    mdp_toml: Option<&str>,
) -> PyResult<Vec<Vec<f64>>> {
    let op = operator(operator_name, beta)?;
    let mdp = load_mdp(mdp_toml)?;
    let report = py
        .detach(|| solvers::soft_fixed_point(&mdp, op, DEFAULT_TOL, DEFAULT_MAX_ITER, 4, 0))
        .map_err(runtime_err)?;
    if !report.converged {
        return Err(PyRuntimeError::new_err(format!(
            "did not converge (residual {:e})",
            report.residual
        )));
    }
    Ok(rows(&report.q))
}

/// Runs soft Q-learning with uniform i.i.d. sampling from `Q_0 = 0`.
///
/// Returns a dict with `final_q`, `tail_mean_q`, `final_error`,
/// `max_iterate_norm` and `visit_counts`.
#[pyfunction]
#[pyo3(signature = (operator_name, beta, alpha, n_steps, seed=0, stream=0, mdp_toml=None))]
#[allow(clippy::too_many_arguments)]
fn run_learner<'py>(
    py: Python<'py>,
    operator_name: &str,
    beta: f64,
    alpha: f64,
    n_steps: usize,
    seed: u64,
    stream: u64,
    mdp_toml: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let op = operator(operator_name, beta)?;
    let mdp = load_mdp(mdp_toml)?;
    let cfg = LearnerConfig::new(
        op,
        alpha,
        n_steps,
        Sampling::Iid {
            d: uniform_distribution(&mdp),
        },
    )
    .with_seed(seed, stream);
    let (trace, q_star) = py.detach(|| {
        let q_star =
            solvers::optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).map_err(runtime_err)?;
        let trace = run(&cfg, &mdp).map_err(value_err)?;
        Ok::<_, PyErr>((trace, q_star))
    })?;
    let out = PyDict::new(py);
    out.set_item("final_q", rows(&trace.final_q))?;
    out.set_item("tail_mean_q", rows(&trace.tail_mean_q))?;
    out.set_item("final_error", trace.final_q.linf_distance(&q_star))?;
    out.set_item("max_iterate_norm", trace.max_iterate_norm)?;
    out.set_item("visit_counts", trace.visit_counts)?;
    Ok(out)
}

/// Evaluates a finite-time bound at step `k`.
///
/// `kind` is one of `lse-lower`, `lse-final`, `boltz-lower`, `boltz-final`,
/// `trace-xk`, `noise-moment`, `iterate` or `decay-rate`.
#[pyfunction]
#[pyo3(signature = (kind, k, alpha, beta, gamma, d_min, d_max, n_pairs, n_actions, q0_gap_l2=0.0, q0_gap_linf=0.0))]
#[allow(clippy::too_many_arguments)]
fn bound(
    kind: &str,
    k: u64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    d_min: f64,
    d_max: f64,
    n_pairs: usize,
    n_actions: usize,
    q0_gap_l2: f64,
    q0_gap_linf: f64,
) -> PyResult<f64> {
    let p = BoundParams {
        alpha,
        beta,
        gamma,
        d_min,
        d_max,
        n_pairs,
        n_actions,
        q0_gap_l2,
        q0_gap_linf,
    };
    p.validate().map_err(value_err)?;
    match kind {
        "noise-moment" => Ok(bounds::noise_moment_bound(&p)),
        "iterate" => Ok(bounds::iterate_bound(&p)),
        "decay-rate" => Ok(bounds::decay_rate(&p)),
        other => BoundKind::parse(other)
            .map(|kind| kind.evaluate(k, &p))
            .ok_or_else(|| PyValueError::new_err(format!("unknown bound kind {other:?}"))),
    }
}

/// Runs the acceptance checks. Returns `(all_passed, summary, report_json)`.
#[pyfunction]
#[pyo3(signature = (quick=true, base_seed=0))]
fn verify(py: Python<'_>, quick: bool, base_seed: u64) -> (bool, String, String) {
    let report = py.detach(|| {
        checks::verify(VerifyOptions {
            quick,
            mutation: None,
            base_seed,
        })
    });
    (report.all_passed, report.summary(), report.to_json())
}

#[pymodule]
fn softq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(soft_value, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_q, m)?)?;
    m.add_function(wrap_pyfunction!(soft_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_learner, m)?)?;
    m.add_function(wrap_pyfunction!(bound, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
