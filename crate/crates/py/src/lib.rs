//! Python bindings for `hdm-core`.
//!
//! Models, scenarios and price rules cross the boundary as JSON strings in
//! the same format the `hdm` config files use.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hdm_core::behavior;
use hdm_core::estimation::{self, ModelFamily, ObservationDataset, SearchConfig};
use hdm_core::fog::{self, PriceRule};
use hdm_core::game::{self, MixedStrategy};
use hdm_core::utility::{self, Lottery, ProspectParams, SocialPrefParams};
use hdm_core::{BehavioralModel, Error};

fn to_py(e: Error) -> PyErr {
    if e.is_validation() || matches!(e, Error::Domain(_) | Error::InvalidPrice { .. }) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("invalid {what} JSON: {e}")))
}

fn weights(s: Vec<MixedStrategy>) -> Vec<Vec<f64>> {
    s.into_iter().map(Vec::from).collect()
}

/// Normal-form game with a dense payoff table per player.
#[pyclass(name = "Game", module = "hdm")]
struct PyGame(game::NormalFormGame);

#[pymethods]
impl PyGame {
    /// `payoffs[p]` lists player `p`'s payoffs over all profiles, last player varying fastest.
    #[new]
    fn new(action_counts: Vec<usize>, payoffs: Vec<Vec<f64>>) -> PyResult<Self> {
        game::NormalFormGame::new(action_counts, payoffs).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn bimatrix(row: Vec<Vec<f64>>, col: Vec<Vec<f64>>) -> PyResult<Self> {
        game::NormalFormGame::bimatrix(&row, &col).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        from_json(text, "game").map(Self)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| to_py(e.into()))
    }

    #[getter]
    fn num_players(&self) -> usize {
        self.0.num_players()
    }

    #[getter]
    fn action_counts(&self) -> Vec<usize> {
        self.0.action_counts().to_vec()
    }

    fn payoff(&self, player: usize, profile: Vec<usize>) -> PyResult<f64> {
        if player >= self.0.num_players()
            || profile.len() != self.0.num_players()
            || profile.iter().zip(self.0.action_counts()).any(|(a, n)| a >= n)
        {
            return Err(PyValueError::new_err("player or profile out of range"));
        }
        Ok(self.0.payoff(player, &profile))
    }

    fn __repr__(&self) -> String {
        format!("Game(action_counts={:?})", self.0.action_counts())
    }
}

#[pyfunction]
fn pure_nash(game: &PyGame) -> Vec<Vec<usize>> {
    game::pure_nash(&game.0)
}

#[pyfunction]
fn logit_qbr(utilities: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    if utilities.is_empty() {
        return Err(PyValueError::new_err("utilities must not be empty"));
    }
    if !(lam.is_finite() && lam >= 0.0) {
        return Err(PyValueError::new_err("lambda must be finite and >= 0"));
    }
    Ok(behavior::logit_qbr(&utilities, lam).into())
}

/// Returns `(profile, residual, iterations)`.
#[pyfunction]
#[pyo3(signature = (game, lam, damping=0.5, max_iters=10_000, tol=1e-10))]
fn qbr_equilibrium(game: &PyGame, lam: f64, damping: f64, max_iters: usize, tol: f64) -> PyResult<(Vec<Vec<f64>>, f64, usize)> {
    let eq = behavior::qbr_equilibrium(&game.0, lam, damping, max_iters, tol).map_err(to_py)?;
    Ok((weights(eq.profile), eq.residual, eq.iterations))
}

/// Predicted mixed strategy of `player`; `model` is a model JSON object.
#[pyfunction]
fn predict(game: &PyGame, model: &str, player: usize) -> PyResult<Vec<f64>> {
    let model: BehavioralModel = from_json(model, "model")?;
    behavior::predict(&model, &game.0, player).map(Into::into).map_err(to_py)
}

#[pyfunction]
fn predict_profile(game: &PyGame, model: &str) -> PyResult<Vec<Vec<f64>>> {
    let model: BehavioralModel = from_json(model, "model")?;
    behavior::predict_profile(&model, &game.0).map(weights).map_err(to_py)
}

fn prospect(params: Option<&str>) -> PyResult<ProspectParams> {
    match params {
        Some(text) => from_json(text, "prospect parameters"),
        None => Ok(ProspectParams::default()),
    }
}

#[pyfunction]
#[pyo3(signature = (x, params=None))]
fn pt_value(x: f64, params: Option<&str>) -> PyResult<f64> {
    Ok(utility::pt_value(x, &prospect(params)?))
}

#[pyfunction]
#[pyo3(signature = (p, params=None))]
fn pt_weight(p: f64, params: Option<&str>) -> PyResult<f64> {
    utility::pt_weight(p, &prospect(params)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (outcomes, probs, params=None))]
fn pt_evaluate(outcomes: Vec<f64>, probs: Vec<f64>, params: Option<&str>) -> PyResult<f64> {
    let lottery = Lottery::new(outcomes, probs).map_err(to_py)?;
    Ok(utility::pt_evaluate(&lottery, &prospect(params)?))
}

/// Applies one social-preference parameter set (JSON) per player.
#[pyfunction]
fn transform_game_social(game: &PyGame, params: Vec<String>) -> PyResult<PyGame> {
    let params = params
        .iter()
        .map(|p| from_json::<SocialPrefParams>(p, "social preference"))
        .collect::<PyResult<Vec<_>>>()?;
    utility::transform_game_social(&game.0, &params).map(PyGame).map_err(to_py)
}

/// Fog-market scenario: one offloading user and `M` fog nodes.
#[pyclass(name = "FogScenario", module = "hdm")]
struct PyFogScenario(fog::FogScenario);

#[pymethods]
impl PyFogScenario {
    /// Default constants for `m` nodes and the given budget.
    #[new]
    #[pyo3(signature = (m=4, budget=100.0))]
    fn new(m: usize, budget: f64) -> PyResult<Self> {
        let s = fog::FogScenario::with_defaults(m, budget);
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let s: fog::FogScenario = from_json(text, "scenario")?;
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| to_py(e.into()))
    }

    /// Copy with the given noise level and averaging switch.
    fn with_noise(&self, rho: f64, averaging: bool) -> PyResult<Self> {
        let s = self.0.clone().with_noise(rho, averaging);
        s.validate().map_err(to_py)?;
        Ok(Self(s))
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn budget(&self) -> f64 {
        self.0.budget
    }

    fn optimal_demand(&self, prices: Vec<f64>) -> PyResult<Vec<f64>> {
        fog::optimal_demand(&self.0, &prices).map_err(to_py)
    }

    fn user_utility(&self, demands: Vec<f64>, prices: Vec<f64>) -> PyResult<f64> {
        fog::user_utility(&self.0, &demands, &prices).map_err(to_py)
    }

    fn fog_gain(&self, node: usize, price: f64, demand: f64) -> PyResult<f64> {
        fog::fog_gain(&self.0, node, price, demand).map_err(to_py)
    }
}

/// Record of one negotiation run.
#[pyclass(name = "NegotiationTrace", module = "hdm")]
struct PyTrace(fog::NegotiationTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn convergence_round(&self) -> Option<usize> {
        self.0.convergence_round
    }

    #[getter]
    fn num_rounds(&self) -> usize {
        self.0.rounds.len()
    }

    fn prices(&self) -> Vec<Vec<f64>> {
        self.0.rounds.iter().map(|r| r.prices.clone()).collect()
    }

    fn demands(&self) -> Vec<Vec<f64>> {
        self.0.rounds.iter().map(|r| r.demands.clone()).collect()
    }

    fn user_utility(&self) -> Vec<f64> {
        self.0.rounds.iter().map(|r| r.user_utility).collect()
    }

    fn fog_gains(&self) -> Vec<Vec<f64>> {
        self.0.rounds.iter().map(|r| r.fog_gains.clone()).collect()
    }

    fn instability_index(&self) -> f64 {
        self.0.instability_index()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_csv(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Runs the negotiation; `price_rule` is a rule JSON value (default: gradient ascent).
#[pyfunction]
#[pyo3(signature = (scenario, seed, price_rule=None))]
fn run_negotiation(py: Python<'_>, scenario: &PyFogScenario, seed: u64, price_rule: Option<&str>) -> PyResult<PyTrace> {
    let rule: PriceRule = match price_rule {
        Some(text) => from_json(text, "price rule")?,
        None => PriceRule::default(),
    };
    let s = scenario.0.clone();
    py.detach(|| fog::run_negotiation(&s, rule, seed)).map(PyTrace).map_err(to_py)
}

/// Fits a model family to a JSON Lines dataset; returns the fit as JSON.
#[pyfunction]
#[pyo3(signature = (model, dataset_path, bounds=None, grid_points=21, refine_iters=3))]
fn fit_mle(
    py: Python<'_>,
    model: &str,
    dataset_path: &str,
    bounds: Option<Vec<(f64, f64)>>,
    grid_points: usize,
    refine_iters: usize,
) -> PyResult<String> {
    let family = ModelFamily::new(from_json(model, "model")?);
    let data = ObservationDataset::load_jsonl(dataset_path).map_err(to_py)?;
    let bounds = bounds.unwrap_or_else(|| family.default_bounds());
    let search = SearchConfig { grid_points, refine_iters };
    let fit = py
        .detach(|| estimation::fit_mle(&family, &data, &bounds, search))
        .map_err(to_py)?;
    serde_json::to_string(&fit).map_err(|e| to_py(e.into()))
}

#[pymodule]
fn hdm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGame>()?;
    m.add_class::<PyFogScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(pure_nash, m)?)?;
    m.add_function(wrap_pyfunction!(logit_qbr, m)?)?;
    m.add_function(wrap_pyfunction!(qbr_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(predict_profile, m)?)?;
    m.add_function(wrap_pyfunction!(pt_value, m)?)?;
    m.add_function(wrap_pyfunction!(pt_weight, m)?)?;
    m.add_function(wrap_pyfunction!(pt_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(transform_game_social, m)?)?;
    m.add_function(wrap_pyfunction!(run_negotiation, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mle, m)?)?;
    Ok(())
}
