use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lattice_ot::error::Error;
use lattice_ot::experiments::{run_convergence, run_gh_maps, run_inequality_suite, ExperimentConfig};
use lattice_ot::fields::{lipschitz_constant, Density};
use lattice_ot::grid::GridShape;
use lattice_ot::heat::heat_apply_density;
use lattice_ot::means::{harmonic_mean as harmonic, log_mean as logarithmic};
use lattice_ot::regularize::choose_constants as choose;
use lattice_ot::solver::{solve_distance, Metric, SolverOptions};
use lattice_ot::transport::w2n_exact;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn shape_for(len: usize, dim: usize) -> PyResult<GridShape> {
    if dim == 0 {
        return Err(PyValueError::new_err("dim must be positive"));
    }
    let n = (len as f64).powf(1.0 / dim as f64).round() as usize;
    if n.pow(dim as u32) != len {
        return Err(PyValueError::new_err(format!("{len} values do not form a {dim}-dimensional cube")));
    }
    GridShape::new(dim, n).map_err(err)
}

fn density(values: Vec<f64>, dim: usize) -> PyResult<Density> {
    let shape = shape_for(values.len(), dim)?;
    Density::new(shape, values).map_err(err)
}

#[pyfunction]
fn log_mean(a: f64, b: f64) -> f64 {
    logarithmic(a, b)
}

#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    harmonic(a, b)
}

/// Lattice density `values` (row-major, mean 1) diffused for time `t`.
#[pyfunction]
#[pyo3(signature = (values, t, dim = 1))]
fn heat(values: Vec<f64>, t: f64, dim: usize) -> PyResult<Vec<f64>> {
    let rho = density(values, dim)?;
    Ok(heat_apply_density(t, &rho).map_err(err)?.0.into_values())
}

#[pyfunction]
#[pyo3(signature = (values, dim = 1))]
fn lipschitz(values: Vec<f64>, dim: usize) -> PyResult<f64> {
    let shape = shape_for(values.len(), dim)?;
    lipschitz_constant(&shape, &values).map_err(err)
}

/// Exact `W_{2,N}` between two lattice densities.
#[pyfunction]
#[pyo3(signature = (rho0, rho1, dim = 1))]
fn w2n(rho0: Vec<f64>, rho1: Vec<f64>, dim: usize) -> PyResult<f64> {
    Ok(w2n_exact(&density(rho0, dim)?, &density(rho1, dim)?).map_err(err)?.value)
}

/// Transport distance; `metric` is `"log"`, `"harmonic"` or `"regular"` (paths kept in `D_δ`).
#[pyfunction]
#[pyo3(signature = (rho0, rho1, dim = 1, metric = "log", delta = 0.5, steps = 16, tol = 1e-7, refine = false))]
#[allow(clippy::too_many_arguments)]
fn distance<'py>(
    py: Python<'py>,
    rho0: Vec<f64>,
    rho1: Vec<f64>,
    dim: usize,
    metric: &str,
    delta: f64,
    steps: usize,
    tol: f64,
    refine: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let metric = match metric {
        "log" => Metric::Logarithmic,
        "harmonic" => Metric::Harmonic,
        "regular" => Metric::ConstrainedLog(delta),
        other => return Err(PyValueError::new_err(format!("unknown metric '{other}'"))),
    };
    let opts = SolverOptions {
        steps,
        tol,
        refinement: refine,
        max_steps: SolverOptions::default().max_steps.max(steps),
        ..SolverOptions::with_metric(metric)
    };
    let rep = solve_distance(&density(rho0, dim)?, &density(rho1, dim)?, &opts).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("value", rep.value)?;
    out.set_item("objective", rep.objective)?;
    out.set_item("steps", rep.path.steps())?;
    out.set_item("residual", rep.feasibility_residual)?;
    out.set_item("converged", rep.converged)?;
    out.set_item("densities", rep.path.densities().iter().map(|d| d.values().to_vec()).collect::<Vec<_>>())?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (eps, delta, dim = 1, n = 8))]
fn choose_constants<'py>(py: Python<'py>, eps: f64, delta: f64, dim: usize, n: usize) -> PyResult<Bound<'py, PyDict>> {
    let s = choose(eps, delta, &GridShape::new(dim, n).map_err(err)?).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("ell", s.ell)?;
    out.set_item("a", s.a)?;
    out.set_item("b", s.b)?;
    out.set_item("c_b", s.c_b)?;
    out.set_item("delta_bar", s.delta_bar)?;
    Ok(out)
}

/// Runs `suite`, `converge` or `ghmaps` from a TOML string; returns `(rows, all_pass)`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<(Vec<Bound<'py, PyDict>>, bool)> {
    let cfg = ExperimentConfig::from_toml(config).map_err(err)?;
    let rows = match cfg.experiment.as_str() {
        "suite" => run_inequality_suite(&cfg),
        "converge" => run_convergence(&cfg),
        "ghmaps" => run_gh_maps(&cfg),
        other => Err(Error::Config(format!("unknown experiment '{other}'"))),
    }
    .map_err(err)?;
    let pass = rows.iter().all(|r| r.pass);
    let dicts = rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("experiment", &r.experiment)?;
            d.set_item("anchor", &r.anchor)?;
            d.set_item("params", &r.params)?;
            d.set_item("measured", r.measured)?;
            d.set_item("bound", r.bound)?;
            d.set_item("slack", r.slack)?;
            d.set_item("pass", r.pass)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((dicts, pass))
}

#[pymodule]
pub fn lattice_ot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(log_mean, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(heat, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz, m)?)?;
    m.add_function(wrap_pyfunction!(w2n, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(choose_constants, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
