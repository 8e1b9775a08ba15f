//! Python bindings: thin stateless wrappers over the core types, taking and
//! returning plain lists/dicts so no Rust types leak into Python.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use solid_core::consensus::{ConsistencySet, DecisionVector, DualPrice};
use solid_core::coordinator::{self, CoordinatorConfig, UpdateOrdering};
use solid_core::llm::mock::QuadraticMockAgent;
use solid_core::llm::{self, ConfidenceLevel, PromptContext};
use solid_core::markowitz::{self, MarkowitzModel};

/// `(public, per-agent prices, converged, iterations)`.
type ConsensusOutcome = (Vec<f64>, Vec<Vec<f64>>, bool, usize);

fn err(e: solid_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn set_from_kind(kind: &str, dim: usize) -> PyResult<ConsistencySet> {
    match kind {
        "simplex" => Ok(ConsistencySet::simplex(dim)),
        "unconstrained" => Ok(ConsistencySet::unconstrained(dim)),
        other => Err(PyValueError::new_err(format!(
            "unknown consistency set kind {other:?}, expected 'simplex' or 'unconstrained'"
        ))),
    }
}

fn levels_from_strings(
    levels: BTreeMap<String, String>,
) -> PyResult<BTreeMap<String, ConfidenceLevel>> {
    levels
        .into_iter()
        .map(|(t, l)| Ok((t, ConfidenceLevel::parse_token(&l).map_err(err)?)))
        .collect()
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_simplex(v: Vec<f64>) -> PyResult<Vec<f64>> {
    let x = DecisionVector::new(v).map_err(err)?;
    let p = ConsistencySet::simplex(x.len()).project(&x).map_err(err)?;
    Ok(p.as_slice().to_vec())
}

/// Minimum-variance weights subject to `w'μ = target` and `w'1 = 1`.
#[pyfunction]
fn solve_markowitz(sigma: Vec<Vec<f64>>, mu: Vec<f64>, target: f64) -> PyResult<Vec<f64>> {
    let model =
        MarkowitzModel::new(matrix(sigma)?, DVector::from_vec(mu), target).map_err(err)?;
    Ok(model.solve().map_err(err)?.as_slice().to_vec())
}

/// The optimizer's augmented proposal at a given price and previous public
/// decision.
#[pyfunction]
fn propose_augmented(
    sigma: Vec<Vec<f64>>,
    mu: Vec<f64>,
    target: f64,
    price: Vec<f64>,
    prev_public: Vec<f64>,
    rho: f64,
) -> PyResult<Vec<f64>> {
    let model =
        MarkowitzModel::new(matrix(sigma)?, DVector::from_vec(mu), target).map_err(err)?;
    let proposal = model
        .propose_augmented(
            &DualPrice::new(price).map_err(err)?,
            &DecisionVector::new(prev_public).map_err(err)?,
            rho,
        )
        .map_err(err)?;
    Ok(proposal.as_slice().to_vec())
}

/// Sample mean and ridge-regularized covariance from rows of per-period
/// returns.
#[pyfunction]
fn estimate_moments(
    returns: Vec<Vec<f64>>,
    ridge: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (mu, sigma) = markowitz::estimate_moments(&matrix(returns)?, ridge).map_err(err)?;
    Ok((mu.iter().copied().collect(), matrix_rows(&sigma)))
}

/// Parse an LLM response into `{ticker: confidence level}`.
#[pyfunction]
fn parse_response(text: &str, tickers: Vec<String>) -> PyResult<BTreeMap<String, String>> {
    let levels = llm::parse_response(text, &tickers).map_err(err)?;
    Ok(levels.into_iter().map(|(t, l)| (t, l.label())).collect())
}

/// Map `{ticker: confidence level}` to normalized portfolio weights.
#[pyfunction]
fn levels_to_proposal(
    tickers: Vec<String>,
    levels: BTreeMap<String, String>,
    sparse: bool,
) -> PyResult<Vec<f64>> {
    let parsed = levels_from_strings(levels)?;
    let w = llm::levels_to_proposal(&tickers, &parsed, sparse).map_err(err)?;
    Ok(w.as_slice().to_vec())
}

/// Build the `(system, user)` prompt pair for one negotiation round.
#[pyfunction]
#[pyo3(signature = (tickers, news, recent_prices, decision_price, public_plan, sparse=false))]
fn build_prompt(
    tickers: Vec<String>,
    news: BTreeMap<String, String>,
    recent_prices: String,
    decision_price: Vec<f64>,
    public_plan: Vec<f64>,
    sparse: bool,
) -> PyResult<(String, String)> {
    let ctx = PromptContext {
        tickers,
        news,
        recent_prices,
        decision_price: DualPrice::new(decision_price).map_err(err)?,
        public_plan: DecisionVector::new(public_plan).map_err(err)?,
        sparse_mode: sparse,
    };
    llm::build_prompt(&ctx).map_err(err)
}

/// Run the consensus loop between two quadratic agents
/// `½(x−c)'Q(x−c)` and return `(public, prices, converged, iterations)`.
#[pyfunction]
#[pyo3(signature = (q1, c1, q2, c2, rho=1.0, max_iterations=500, eps_abs=1e-6, eps_rel=1e-4, set_kind="unconstrained", ordering="prices_first"))]
#[allow(clippy::too_many_arguments)]
fn run_consensus(
    q1: Vec<Vec<f64>>,
    c1: Vec<f64>,
    q2: Vec<Vec<f64>>,
    c2: Vec<f64>,
    rho: f64,
    max_iterations: usize,
    eps_abs: f64,
    eps_rel: f64,
    set_kind: &str,
    ordering: &str,
) -> PyResult<ConsensusOutcome> {
    let n = c1.len();
    let a1 = QuadraticMockAgent::new("a1", c1, matrix(q1)?).map_err(err)?;
    let a2 = QuadraticMockAgent::new("a2", c2, matrix(q2)?).map_err(err)?;
    let ordering = match ordering {
        "prices_first" => UpdateOrdering::PricesFirst,
        "public_first" => UpdateOrdering::PublicFirst,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown ordering {other:?}, expected 'prices_first' or 'public_first'"
            )))
        }
    };
    let config = CoordinatorConfig {
        rho,
        max_iterations,
        eps_abs,
        eps_rel,
        set: set_from_kind(set_kind, n)?,
        ordering,
    };
    let result = coordinator::run_consensus(
        &[&a1, &a2],
        &config,
        &config.set.initial_point(),
        &[DualPrice::zeros(n), DualPrice::zeros(n)],
    )
    .map_err(err)?;
    Ok((
        result.public.as_slice().to_vec(),
        result.prices.iter().map(|p| p.as_slice().to_vec()).collect(),
        result.converged,
        result.iterations_used,
    ))
}

#[pymodule]
fn solid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    m.add_function(wrap_pyfunction!(solve_markowitz, m)?)?;
    m.add_function(wrap_pyfunction!(propose_augmented, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_moments, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(levels_to_proposal, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run_consensus, m)?)?;
    Ok(())
}
