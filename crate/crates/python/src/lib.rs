//! Python module `kwlab_py`. Reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kwlab::pipeline::{self, ExperimentConfig};
use kwlab::{fixtures, functional, greens, solver, FunctionalContext, KwError, ScalarField, SolverOptions, SurfaceGrid};

fn err(e: KwError) -> PyErr {
    match e {
        KwError::InvalidConfig(_) | KwError::InvalidGrid(_) | KwError::InvalidWeight(_) | KwError::UnknownFixture(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn fixture_context(n: usize, fixture: &str, eps: f64) -> kwlab::Result<FunctionalContext> {
    let grid = SurfaceGrid::flat(n)?;
    FunctionalContext::new(fixtures::fixture(fixture)?.weight(grid), eps)
}

/// Names of the catalog weights.
#[pyfunction]
fn fixture_names() -> Vec<&'static str> {
    fixtures::catalog().iter().map(|f| f.name).collect()
}

/// Robin constant A_p of the flat N×N torus at the node nearest (x, y).
#[pyfunction]
#[pyo3(signature = (n, x=0.0, y=0.0))]
fn robin_constant(py: Python<'_>, n: usize, x: f64, y: f64) -> PyResult<f64> {
    py.detach(|| {
        let grid = SurfaceGrid::flat(n)?;
        let green = greens::solve_green(&grid, grid.nearest_node(x, y));
        if green.robin_a.is_finite() {
            Ok(green.robin_a)
        } else {
            Err(KwError::InvalidGrid(format!("N = {n} too coarse for the Robin fit")))
        }
    })
    .map_err(err)
}

/// Closed-form and quadrature Dirichlet energy of the standard bubble on B_R.
#[pyfunction]
fn bubble_energy<'py>(py: Python<'py>, hp: f64, r: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &functional::bubble_energy(hp, r).map_err(err)?)
}

/// Threshold report (C0, p0, DJLW value) for a catalog weight on a flat grid.
#[pyfunction]
#[pyo3(signature = (fixture, n=128, lattice=16))]
fn thresholds<'py>(py: Python<'py>, fixture: &str, n: usize, lattice: usize) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| fixture_context(n, fixture, 0.0).and_then(|ctx| functional::thresholds(&ctx, lattice)))
        .map_err(err)?
        .0;
    to_py(py, &report)
}

/// Minimizes J_eps from u = 0 for a catalog weight; returns (summary, values)
/// with values in row-major order.
#[pyfunction]
#[pyo3(signature = (fixture, eps, n=64))]
fn solve<'py>(py: Python<'py>, fixture: &str, eps: f64, n: usize) -> PyResult<(Bound<'py, PyAny>, Vec<f64>)> {
    let (summary, values) = py
        .detach(|| {
            let ctx = fixture_context(n, fixture, eps)?;
            let init = ScalarField::constant(ctx.grid().clone(), 0.0);
            let state = solver::minimize_at_eps(&ctx, &init, &SolverOptions::default())?;
            Ok((state.summary(&ctx)?, state.u.into_values()))
        })
        .map_err(err)?;
    Ok((to_py(py, &summary)?, values))
}

/// Runs the full pipeline from a JSON config string; returns the summary.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = ExperimentConfig::from_json(config_json).map_err(err)?;
    let outcome = py.detach(|| pipeline::run_pipeline(&config)).map_err(err)?;
    to_py(py, &outcome.summary)
}

/// Writes plot CSVs for a finished run directory; returns their paths.
#[pyfunction]
fn emit_plot_data(dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    pipeline::emit_plot_data(&dir).map_err(err)
}

#[pymodule]
fn kwlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fixture_names, m)?)?;
    m.add_function(wrap_pyfunction!(robin_constant, m)?)?;
    m.add_function(wrap_pyfunction!(bubble_energy, m)?)?;
    m.add_function(wrap_pyfunction!(thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(emit_plot_data, m)?)?;
    Ok(())
}
