use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kdehmm::structure::{sem_fit, SemConfig, Variant};
use kdehmm::synth::{gen_observations, gen_state_sequence, SyntheticSpec};
use kdehmm::{kernel, ErrorKind, KdeAsHmmModel, TimeSeries};

fn to_py(err: kdehmm::Error) -> PyErr {
    match err.kind() {
        ErrorKind::Numerical => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn series_from(rows: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<TimeSeries> {
    match names {
        Some(names) => TimeSeries::new(names, rows),
        None => TimeSeries::from_rows(rows),
    }
    .map_err(to_py)
}

/// A fitted KDE-AsHMM.
#[pyclass(name = "Model", module = "pykdehmm")]
struct PyModel {
    inner: KdeAsHmmModel,
    loglik_trace: Vec<f64>,
}

#[pymethods]
impl PyModel {
    /// Fit by (structural) EM on rows of observations.
    #[staticmethod]
    #[pyo3(signature = (data, n_states=2, p_star=1, variant="kde-as", sem_rounds=1, max_iter=100, tol=1e-6, seed=0, feature_names=None))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        data: Vec<Vec<f64>>,
        n_states: usize,
        p_star: usize,
        variant: &str,
        sem_rounds: usize,
        max_iter: usize,
        tol: f64,
        seed: u64,
        feature_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let series = series_from(data, feature_names)?;
        let variant: Variant = variant.parse().map_err(to_py)?;
        let mut config = SemConfig::new(kdehmm::EmConfig::new(n_states, p_star), variant);
        config.em.max_iter = max_iter;
        config.em.rel_tol = tol;
        config.em.seed = seed;
        config.sem_rounds = sem_rounds;
        let (inner, report) = py.detach(|| sem_fit(&series, &config)).map_err(to_py)?;
        Ok(PyModel { inner, loglik_trace: report.loglik_trace })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = KdeAsHmmModel::load(path).map_err(to_py)?;
        Ok(PyModel { inner, loglik_trace: Vec::new() })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (inner, _) = KdeAsHmmModel::from_json(text).map_err(to_py)?;
        Ok(PyModel { inner, loglik_trace: Vec::new() })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json(None).map_err(to_py)
    }

    /// `ln P(x | model)` over the scored instants.
    fn log_likelihood(&self, py: Python<'_>, data: Vec<Vec<f64>>) -> PyResult<f64> {
        let series = series_from(data, Some(self.inner.centers.feature_names().to_vec()))?;
        py.detach(|| kdehmm::log_likelihood(&self.inner, &series)).map_err(to_py)
    }

    /// Most probable state for instants `p_star..`.
    fn viterbi(&self, py: Python<'_>, data: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let series = series_from(data, Some(self.inner.centers.feature_names().to_vec()))?;
        py.detach(|| kdehmm::viterbi(&self.inner, &series)).map_err(to_py)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn p_star(&self) -> usize {
        self.inner.p_star
    }

    #[getter]
    fn n_vars(&self) -> usize {
        self.inner.n_vars()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.centers.feature_names().to_vec()
    }

    #[getter]
    fn initial(&self) -> Vec<f64> {
        self.inner.pi.clone()
    }

    #[getter]
    fn transitions(&self) -> Vec<Vec<f64>> {
        self.inner.a.clone()
    }

    #[getter]
    fn bandwidths(&self) -> Vec<Vec<f64>> {
        self.inner.h.iter().map(|row| row.iter().map(|h| h.value()).collect()).collect()
    }

    /// `parents[state][var]`.
    #[getter]
    fn parents(&self) -> Vec<Vec<Vec<usize>>> {
        self.inner.graph.parents.clone()
    }

    #[getter]
    fn ar_order(&self) -> Vec<Vec<usize>> {
        self.inner.graph.ar_order.clone()
    }

    #[getter]
    fn loglik_trace(&self) -> Vec<f64> {
        self.loglik_trace.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(n_states={}, n_vars={}, p_star={}, arcs={})",
            self.inner.n_states,
            self.inner.n_vars(),
            self.inner.p_star,
            (0..self.inner.n_states).map(|i| self.inner.graph.n_arcs(i)).sum::<usize>()
        )
    }
}

#[pyfunction]
fn gaussian_kernel(u: f64) -> PyResult<f64> {
    kernel::gaussian_kernel(u).map_err(to_py)
}

#[pyfunction]
fn silverman_bandwidth(sample_std: f64, n: usize) -> PyResult<f64> {
    kernel::silverman_bandwidth(sample_std, n).map(|h| h.value()).map_err(to_py)
}

#[pyfunction]
fn log_sum_exp(values: Vec<f64>) -> PyResult<f64> {
    kernel::log_sum_exp(&values).map_err(to_py)
}

/// Synthetic rows and their hidden states; the bundled spec unless `spec_json` is given.
#[pyfunction]
#[pyo3(signature = (length, seed=0, spec_json=None))]
fn synth(length: usize, seed: u64, spec_json: Option<&str>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let spec = match spec_json {
        Some(text) => SyntheticSpec::from_json(text).map_err(to_py)?,
        None => SyntheticSpec::default_benchmark(),
    };
    let states = gen_state_sequence(&spec, length).map_err(to_py)?;
    let series = gen_observations(&spec, &states, seed).map_err(to_py)?;
    let rows = (0..series.len()).map(|t| series.row(t).to_vec()).collect();
    Ok((rows, states))
}

#[pymodule]
fn pykdehmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(silverman_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
