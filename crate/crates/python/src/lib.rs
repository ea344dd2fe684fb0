//! Python bindings. Configs are passed as TOML text plus `key=value`
//! overrides, exactly as on the command line.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use atomion::cache::Cache;
use atomion::config::{Point, RunConfig};
use atomion::eigensolve::{lowest_eigenstates, solve_1d};
use atomion::hamiltonians::{build_h1b, build_relative_cmf, cm_solution};
use atomion::observables::{bunching_probability, mean_separations, two_body_density};
use atomion::pipeline::{self, RELATIVE_STATES};
use atomion::verify::run_checks;
use atomion::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidParams(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(toml: Option<&str>, overrides: Option<Vec<String>>) -> PyResult<RunConfig> {
    let mut cfg = match toml {
        Some(text) => RunConfig::from_toml_str(text).map_err(to_py)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&overrides.unwrap_or_default()).map_err(to_py)?;
    Ok(cfg)
}

fn relative_states(
    cfg: &RunConfig,
    beta: f64,
    g: f64,
) -> atomion::Result<(Vec<f64>, Vec<atomion::eigensolve::WaveFn>)> {
    let pt = Point { beta, g };
    cfg.validate(&[pt])?;
    let p = cfg.model.with_beta(beta).with_g(g);
    let op = build_relative_cmf(cfg.grids.cmf, &p)?;
    let (rec, states) = lowest_eigenstates(&op, RELATIVE_STATES, &cfg.solver.relative)?;
    Ok((rec.eigenvalues, states))
}

/// Five lowest relative-frame eigenvalues at `(beta, g)`.
#[pyfunction]
#[pyo3(signature = (beta = 0.0, g = 0.0, config = None, overrides = None))]
fn solve(
    py: Python<'_>,
    beta: f64,
    g: f64,
    config: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<f64>> {
    let cfg = self::config(config, overrides)?;
    py.detach(|| relative_states(&cfg, beta, g).map(|(e, _)| e))
        .map_err(to_py)
}

/// `(d_AA, d_AI, P_bunched)` of one relative-frame eigenstate.
#[pyfunction]
#[pyo3(signature = (beta = 0.0, g = 0.0, state = 0, config = None, overrides = None))]
fn separations(
    py: Python<'_>,
    beta: f64,
    g: f64,
    state: usize,
    config: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<(f64, f64, f64)> {
    if state >= RELATIVE_STATES {
        return Err(PyValueError::new_err(format!(
            "state must be below {RELATIVE_STATES}"
        )));
    }
    let cfg = self::config(config, overrides)?;
    py.detach(|| {
        let (_, states) = relative_states(&cfg, beta, g)?;
        let rho2 = two_body_density(&states[state])?;
        let (d_aa, d_ai) = mean_separations(&rho2)?;
        Ok((d_aa, d_ai, bunching_probability(&rho2)?))
    })
    .map_err(to_py)
}

/// Eigenvalues of the static-ion single-particle Hamiltonian.
#[pyfunction]
#[pyo3(signature = (count = 4, config = None, overrides = None))]
fn orbital_energies(
    count: usize,
    config: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<f64>> {
    let cfg = self::config(config, overrides)?;
    let p = cfg.model.with_beta(0.0).with_g(0.0);
    let (mut e, _) = build_h1b(cfg.grids.cmf, &p)
        .and_then(|op| solve_1d(&op))
        .map_err(to_py)?;
    e.truncate(count);
    Ok(e)
}

/// Analytic centre-of-mass ground energy `E_R`.
#[pyfunction]
fn cm_energy(beta: f64) -> PyResult<f64> {
    let p = RunConfig::default().model.with_beta(beta);
    cm_solution(&p).map(|c| c.energy).map_err(to_py)
}

/// Runs the pipeline like `atomion sweep` (or a single point with
/// `sweep=False`) and returns the manifest as a JSON string.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = None, sweep = true, cache_dir = None))]
fn run(
    py: Python<'_>,
    config: Option<&str>,
    overrides: Option<Vec<String>>,
    sweep: bool,
    cache_dir: Option<PathBuf>,
) -> PyResult<String> {
    let cfg = self::config(config, overrides)?;
    let points = if sweep {
        cfg.sweep_points()
    } else {
        cfg.single_point()
    };
    let cache = Cache::new(cache_dir.unwrap_or_else(|| cfg.output_dir.join("cache")));
    let manifest = py
        .detach(|| pipeline::run(&cfg, &points, cache, "python", false))
        .map_err(to_py)?;
    serde_json::to_string_pretty(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Built-in oracle checks as `(name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = None))]
fn verify(
    py: Python<'_>,
    config: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<(String, bool, String)>> {
    let cfg = self::config(config, overrides)?;
    cfg.validate(&[]).map_err(to_py)?;
    let checks = py.detach(|| run_checks(&cfg));
    Ok(checks
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect())
}

#[pymodule]
#[pyo3(name = "atomion")]
fn atomion_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(separations, m)?)?;
    m.add_function(wrap_pyfunction!(orbital_energies, m)?)?;
    m.add_function(wrap_pyfunction!(cm_energy, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
