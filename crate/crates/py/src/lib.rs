//! Python bindings. Matrices cross the boundary as lists of rows (any
//! sequence of sequences, numpy arrays included); structured results come
//! back as plain dicts and lists.

use std::collections::BTreeSet;

use lobsad::data::{generate_synthetic, load_lob_csv, Dataset, FeatureView, Provenance, SchemaConfig, SynthConfig};
use lobsad::eval::{pca_fit, pca_project, rank_test, ratio_test, ModelKind, ScoreSet, Split};
use lobsad::harness::{contiguous_kfold, run_experiment, RunOptions, TrainConfig};
use lobsad::nnet::{MlpModel, DEFAULT_LAYER_DIMS};
use lobsad::objectives::{self, Hypersphere, LabeledBatch, SadHyper};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: lobsad::Error) -> PyErr {
    match e {
        lobsad::Error::Divergence(_) => PyRuntimeError::new_err(e.to_string()),
        lobsad::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>, cols: Option<usize>) -> PyResult<Array2<f64>> {
    let d = cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(PyValueError::new_err(format!("row {i} has {} values, expected {d}", r.len())));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    text.map_or_else(
        || Ok(T::default()),
        |t| serde_json::from_str(t).map_err(|e| PyValueError::new_err(format!("config: {e}"))),
    )
}

/// Fully connected ReLU network with a linear output layer.
#[pyclass(name = "MlpModel", module = "lobsad_py")]
struct PyMlp {
    inner: MlpModel,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (seed = 0, layer_dims = None, bias = true))]
    fn new(seed: u64, layer_dims: Option<Vec<usize>>, bias: bool) -> PyResult<Self> {
        let dims = layer_dims.unwrap_or_else(|| DEFAULT_LAYER_DIMS.to_vec());
        Ok(Self {
            inner: MlpModel::init(seed, &dims, bias).map_err(to_py)?,
        })
    }

    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims().to_vec()
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params_flat()
    }

    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_params_flat(&params).map_err(to_py)
    }

    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(x, Some(self.inner.input_dim()))?;
        Ok(rows(&self.inner.predict(x.view()).map_err(to_py)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_json(path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MlpModel::load_json(path).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("MlpModel(layer_dims={:?})", self.inner.layer_dims())
    }
}

fn sphere(center: Vec<f64>) -> PyResult<Hypersphere> {
    Hypersphere::new(Array1::from(center)).map_err(to_py)
}

/// Reconstruction loss and its gradient (flat, parameter order).
#[pyfunction]
fn ae_loss(model: &PyMlp, x: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    let x = matrix(x, Some(model.inner.input_dim()))?;
    let (loss, g) = objectives::ae_loss(&model.inner, x.view()).map_err(to_py)?;
    Ok((loss, g.flat()))
}

#[pyfunction]
fn svdd_loss(model: &PyMlp, x: Vec<Vec<f64>>, center: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
    let x = matrix(x, Some(model.inner.input_dim()))?;
    let (loss, g) = objectives::svdd_loss(&model.inner, x.view(), &sphere(center)?).map_err(to_py)?;
    Ok((loss, g.flat()))
}

/// Semi-supervised loss; `labels` holds +1 (normal) or -1 (anomalous) per labeled row.
#[pyfunction]
#[pyo3(signature = (model, x, labeled_x, labels, center, eta = 1.0, eps = 1e-6))]
#[allow(clippy::too_many_arguments)]
fn sad_loss(
    model: &PyMlp,
    x: Vec<Vec<f64>>,
    labeled_x: Vec<Vec<f64>>,
    labels: Vec<i8>,
    center: Vec<f64>,
    eta: f64,
    eps: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let d = model.inner.input_dim();
    let x = matrix(x, Some(d))?;
    let labeled = LabeledBatch::new(matrix(labeled_x, Some(d))?, labels).map_err(to_py)?;
    let hyper = SadHyper {
        eta,
        eps,
        weight_decay: 0.0,
    };
    let (loss, g) = objectives::sad_loss(&model.inner, x.view(), &labeled, &sphere(center)?, &hyper).map_err(to_py)?;
    Ok((loss, g.flat()))
}

#[pyfunction]
fn init_center(model: &PyMlp, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let x = matrix(x, Some(model.inner.input_dim()))?;
    Ok(objectives::init_center(&model.inner, x.view()).map_err(to_py)?.center.to_vec())
}

#[pyfunction]
fn anomaly_score(model: &PyMlp, x: Vec<Vec<f64>>, center: Vec<f64>) -> PyResult<Vec<f64>> {
    let x = matrix(x, Some(model.inner.input_dim()))?;
    Ok(objectives::anomaly_score(&model.inner, x.view(), &sphere(center)?).map_err(to_py)?.to_vec())
}

fn score_set(scores: Vec<f64>, labeled: Vec<usize>) -> PyResult<ScoreSet> {
    ScoreSet::new(scores, labeled.into_iter().collect::<BTreeSet<_>>(), Split::Test, ModelKind::Sad).map_err(to_py)
}

/// Mean labeled score over mean unlabeled score, or None when undefined.
#[pyfunction]
fn ratio(scores: Vec<f64>, labeled: Vec<usize>) -> PyResult<Option<f64>> {
    Ok(ratio_test(&score_set(scores, labeled)?))
}

/// Mean 1-based descending rank of the labeled rows, or None when undefined.
#[pyfunction]
fn rank(scores: Vec<f64>, labeled: Vec<usize>) -> PyResult<Option<f64>> {
    Ok(rank_test(&score_set(scores, labeled)?).map(|r| r.mean_rank))
}

#[pyfunction]
fn kfold(n_rows: usize, k: usize) -> PyResult<Vec<(usize, usize)>> {
    let plan = contiguous_kfold(n_rows, k).map_err(to_py)?;
    Ok(plan.folds.iter().map(|r| (r.start, r.end)).collect())
}

/// PCA fit on `x`; returns the basis and the projection of `x`.
#[pyfunction]
#[pyo3(signature = (x, k = 2))]
fn pca<'py>(py: Python<'py>, x: Vec<Vec<f64>>, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let x = matrix(x, None)?;
    let basis = pca_fit(x.view(), k).map_err(to_py)?;
    let projected = pca_project(&basis, x.view()).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mean", basis.mean.to_vec())?;
    out.set_item("components", rows(&basis.components))?;
    out.set_item("explained_variance", basis.explained_variance.to_vec())?;
    out.set_item("rank_deficient", basis.rank_deficient)?;
    out.set_item("projected", rows(&projected))?;
    Ok(out)
}

/// Synthetic order book data. `config` is a JSON object of generator settings.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn generate<'py>(py: Python<'py>, config: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg: SynthConfig = from_json(config)?;
    let synth = py.detach(|| generate_synthetic(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("features", rows(synth.dataset.features()))?;
    out.set_item("feature_names", synth.dataset.feature_names().to_vec())?;
    out.set_item("timestamps", synth.dataset.timestamps().to_vec())?;
    out.set_item("labels", synth.labeled_rows())?;
    let truth: Vec<(usize, &str, bool)> = synth.ground_truth.iter().map(|g| (g.row, g.archetype.as_str(), g.labeled)).collect();
    out.set_item("ground_truth", truth)?;
    Ok(out)
}

/// Loads an order book CSV; returns features, column names and timestamps.
#[pyfunction]
#[pyo3(signature = (path, view = "combined"))]
fn load_csv<'py>(py: Python<'py>, path: &str, view: &str) -> PyResult<Bound<'py, PyDict>> {
    let view: FeatureView = serde_json::from_value(serde_json::Value::String(view.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown feature view {view:?}")))?;
    let data = load_lob_csv(path, &SchemaConfig::from_view(view)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("features", rows(data.features()))?;
    out.set_item("feature_names", data.feature_names().to_vec())?;
    out.set_item("timestamps", data.timestamps().to_vec())?;
    Ok(out)
}

/// Runs the repeated k-fold experiment and returns one report dict per
/// trial. `config` is a JSON object of training settings.
#[pyfunction]
#[pyo3(signature = (features, labels, config = None, jobs = 1))]
fn run<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    config: Option<&str>,
    jobs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: TrainConfig = from_json(config)?;
    let x = matrix(features, None)?;
    let n = x.nrows();
    let names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
    let data = Dataset::new(x, (0..n as i64).collect(), names, Provenance::Synthetic)
        .and_then(|d| d.with_labels(labels))
        .map_err(to_py)?;
    let results = py
        .detach(|| run_experiment(&data, &cfg, &RunOptions { jobs, probe: None }))
        .map_err(to_py)?;
    let reports: Vec<_> = results.into_iter().map(|r| r.report).collect();
    let value = serde_json::to_value(&reports).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

#[pymodule]
fn lobsad_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_function(wrap_pyfunction!(ae_loss, m)?)?;
    m.add_function(wrap_pyfunction!(svdd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sad_loss, m)?)?;
    m.add_function(wrap_pyfunction!(init_center, m)?)?;
    m.add_function(wrap_pyfunction!(anomaly_score, m)?)?;
    m.add_function(wrap_pyfunction!(ratio, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(kfold, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matrix(vec![vec![1.0, 2.0], vec![3.0]], None).is_err());
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]], Some(2)).unwrap();
        assert_eq!(m[[1, 0]], 3.0);
        assert_eq!(matrix(vec![], Some(3)).unwrap().dim(), (0, 3));
    }
}
