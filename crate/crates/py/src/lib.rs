use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dtsipbc as core;
use core::analysis::{resolve_indices, sweep, Analysis as CoreAnalysis};
use core::equiv::bisim_equivalent;
use core::export::matrix;
use core::markov::transient;
use core::netsem::{box_of, build_rg, check_safe_clean, DtsiBox};
use core::opsem::{build_ts_with, ts_isomorphic, BuildOptions};
use core::parser::{parse_index, parse_model, parse_static, ModelFile, ParamValue};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn analysis_err(e: core::Error) -> PyErr {
    if e.is_input_error() {
        value_err(e)
    } else {
        runtime_err(e)
    }
}

/// A static expression.
#[pyclass(name = "Expr", frozen)]
struct PyExpr {
    inner: core::StaticExpr,
}

#[pymethods]
impl PyExpr {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyExpr { inner: parse_static(text).map_err(value_err)? })
    }

    fn is_regular(&self) -> bool {
        self.inner.is_regular()
    }

    fn transition_system(&self) -> PyResult<PyTs> {
        build_ts_with(&self.inner, &BuildOptions::default())
            .map(|inner| PyTs { inner })
            .map_err(|e| analysis_err(e.into()))
    }

    #[pyo3(name = "box")]
    fn net(&self) -> PyResult<PyBox> {
        box_of(&self.inner).map(|inner| PyBox { inner }).map_err(|e| analysis_err(e.into()))
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn analyze(&self, tol: f64) -> PyResult<PyAnalysis> {
        CoreAnalysis::of_expr(&self.inner, &BuildOptions::default(), tol)
            .map(|inner| PyAnalysis { inner })
            .map_err(analysis_err)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expr({:?})", self.inner.to_string())
    }
}

/// A model file: definitions, parameters and named indices.
#[pyclass(name = "Model")]
struct PyModel {
    inner: ModelFile,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: parse_model(text).map_err(value_err)? })
    }

    /// One of the models shipped with the library.
    #[staticmethod]
    fn bundled(name: &str) -> PyResult<Self> {
        let src = core::models::get(name).ok_or_else(|| value_err(format!("no bundled model {name}")))?;
        Self::parse(src)
    }

    #[staticmethod]
    fn bundled_names() -> Vec<&'static str> {
        core::models::ALL.iter().map(|(n, _)| *n).collect()
    }

    /// Sets a parameter from text: `0.5`, `1/3` or `start:stop:step`.
    fn set_param(&mut self, name: &str, value: &str) -> PyResult<()> {
        self.inner.set_param(name, ParamValue::parse(value).map_err(value_err)?);
        Ok(())
    }

    fn definitions(&self) -> Vec<String> {
        self.inner.definitions().to_vec()
    }

    fn index_names(&self) -> Vec<String> {
        self.inner.indices.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Root (or a named definition) with parameters overridden by `bindings`.
    #[pyo3(signature = (name = None, bindings = None))]
    fn instantiate(&self, name: Option<&str>, bindings: Option<BTreeMap<String, f64>>) -> PyResult<PyExpr> {
        // ranges must be bound explicitly
        let mut b: BTreeMap<String, f64> = self
            .inner
            .params
            .iter()
            .filter_map(|(n, v)| match v {
                ParamValue::Value(x) => Some((n.clone(), *x)),
                ParamValue::Range { .. } => None,
            })
            .collect();
        b.extend(bindings.unwrap_or_default());
        let e = match name {
            Some(n) => self.inner.instantiate_named(n, &b),
            None => self.inner.instantiate(&b),
        };
        Ok(PyExpr { inner: e.map_err(value_err)? })
    }

    /// Evaluates indices over the parameter grid; returns (params, values) rows.
    #[pyo3(signature = (indices, tol = 1e-9))]
    fn sweep(&self, py: Python<'_>, indices: Vec<String>, tol: f64) -> PyResult<Vec<(BTreeMap<String, f64>, Vec<f64>)>> {
        let ix = resolve_indices(&self.inner, &indices).map_err(analysis_err)?;
        let rows = py
            .detach(|| sweep(&self.inner, &ix, &BuildOptions::default(), tol))
            .map_err(analysis_err)?;
        Ok(rows.into_iter().map(|r| (r.params, r.values)).collect())
    }
}

/// Labeled probabilistic transition system (or reachability graph).
#[pyclass(name = "TransitionSystem", frozen)]
struct PyTs {
    inner: core::TransitionSystem,
}

#[pymethods]
impl PyTs {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn initial(&self) -> usize {
        self.inner.initial
    }

    #[getter]
    fn tangible(&self) -> Vec<bool> {
        self.inner.states.iter().map(|s| s.tangible).collect()
    }

    fn key(&self, s: usize) -> PyResult<String> {
        if s >= self.inner.len() {
            return Err(value_err(format!("state {s} out of range")));
        }
        Ok(self.inner.key(s))
    }

    /// (source, step activities, probability, target), 0-based.
    fn transitions(&self) -> Vec<(usize, Vec<String>, f64, usize)> {
        self.inner
            .transitions
            .iter()
            .map(|t| (t.source, t.step.activities().iter().map(|a| a.to_string()).collect(), t.prob, t.target))
            .collect()
    }

    fn pm(&self, s: usize, t: usize) -> f64 {
        self.inner.pm(s, t)
    }

    /// State bijection onto `other`, or None.
    #[pyo3(signature = (other, tol = 1e-9))]
    fn isomorphism(&self, other: &PyTs, tol: f64) -> Option<Vec<usize>> {
        ts_isomorphic(&self.inner, &other.inner, tol)
    }

    fn to_json(&self) -> String {
        core::export::ts_json(&self.inner).to_string()
    }
}

#[pyclass(name = "Box", frozen)]
struct PyBox {
    inner: DtsiBox,
}

#[pymethods]
impl PyBox {
    #[getter]
    fn n_places(&self) -> usize {
        self.inner.places.len()
    }

    #[getter]
    fn n_transitions(&self) -> usize {
        self.inner.transitions.len()
    }

    fn reachability_graph(&self) -> PyResult<PyTs> {
        build_rg(&self.inner).map(|inner| PyTs { inner }).map_err(|e| analysis_err(e.into()))
    }

    /// (safe, clean) over the reachable markings.
    fn safe_clean(&self) -> PyResult<(bool, bool)> {
        let r = check_safe_clean(&self.inner).map_err(|e| analysis_err(e.into()))?;
        Ok((r.safe, r.clean))
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    fn to_dot(&self) -> String {
        self.inner.to_dot()
    }
}

/// Solved chains of one expression, full and quotient.
#[pyclass(name = "Analysis")]
struct PyAnalysis {
    inner: CoreAnalysis,
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn sj(&self) -> Vec<f64> {
        self.inner.solution.sojourn.sj.clone()
    }

    #[getter]
    fn var(&self) -> Vec<f64> {
        self.inner.solution.sojourn.var.clone()
    }

    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.inner.solution.psi.pmf.clone()
    }

    #[getter]
    fn psi_star(&self) -> Vec<f64> {
        self.inner.solution.psi_star.pmf.clone()
    }

    #[getter]
    fn phi(&self) -> Vec<f64> {
        self.inner.solution.phi.clone()
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        matrix(&self.inner.chain.dtmc())
    }

    #[getter]
    fn p_star(&self) -> Vec<Vec<f64>> {
        matrix(&self.inner.chain.edtmc())
    }

    #[getter]
    fn blocks(&self) -> Vec<Vec<usize>> {
        self.inner.partition.blocks.clone()
    }

    #[getter]
    fn quotient_phi(&self) -> Vec<f64> {
        self.inner.quotient_solution.phi.clone()
    }

    #[getter]
    fn quotient_p_star(&self) -> Vec<Vec<f64>> {
        matrix(&self.inner.quotient.edtmc())
    }

    /// DTMC distribution after k steps from the initial state.
    fn transient(&self, k: usize) -> Vec<f64> {
        transient(&self.inner.chain.dtmc(), &self.inner.chain.initial_pmf(), k)
    }

    /// Evaluates an index expression such as `recurrence[K2]`.
    fn index(&self, expr: &str) -> PyResult<f64> {
        let e = parse_index(expr).map_err(value_err)?;
        self.inner.eval(&e, &[]).map_err(analysis_err)
    }
}

/// Whether two expressions are step stochastic bisimulation equivalent.
#[pyfunction]
#[pyo3(signature = (left, right, tol = 1e-9))]
fn bisimilar(left: &PyExpr, right: &PyExpr, tol: f64) -> PyResult<bool> {
    bisim_equivalent(&left.inner, &right.inner, tol)
        .map(|r| r.equivalent)
        .map_err(|e| analysis_err(e.into()))
}

#[pymodule]
#[pyo3(name = "dtsipbc")]
fn dtsipbc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the classes and functions to `m`; lets embedding hosts and tests
/// build the module without importing the shared library.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpr>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTs>()?;
    m.add_class::<PyBox>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(bisimilar, m)?)?;
    Ok(())
}
