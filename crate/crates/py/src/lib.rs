//! Python bindings for the protoxct toolkit: the prototype model and
//! standardizer, the evaluation/calibration operations, and a few
//! numeric primitives. Vectors cross the boundary as plain lists; the
//! module is meant for desk-scale analysis and notebook work.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use protoxct::data::Label;
use protoxct::eval::{ScoredRecord, ScoredSet};
use protoxct::numerics::Rng;

fn err(e: protoxct::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn labels_from(labels: Vec<u8>) -> PyResult<Vec<Label>> {
    labels.into_iter().map(|l| Label::from_u8(l).map_err(err)).collect()
}

fn scored_from(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<ScoredSet> {
    if labels.len() != scores.len() {
        return Err(PyValueError::new_err("labels and scores differ in length"));
    }
    let records = labels
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (l, s))| {
            Ok(ScoredRecord {
                id: i as u32,
                label: Label::from_u8(l).map_err(err)?,
                score: s,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    ScoredSet::new(records, false).map_err(err)
}

/// Per-dimension mean/scale transform fitted on training embeddings.
#[pyclass(name = "Standardizer")]
struct PyStandardizer {
    inner: protoxct::encoder::Standardizer,
}

#[pymethods]
impl PyStandardizer {
    /// Fits population statistics on rows (a list of equal-length lists).
    #[staticmethod]
    fn fit(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let mat = protoxct::numerics::Mat64::from_rows(&rows).map_err(err)?;
        let batch = protoxct::encoder::EmbeddingBatch::new(
            (0..mat.rows() as u32).collect(),
            mat,
        )
        .map_err(err)?;
        Ok(PyStandardizer {
            inner: protoxct::encoder::fit_standardizer(&batch).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyStandardizer {
            inner: protoxct::encoder::Standardizer::load(std::path::Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(err)
    }

    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.transform_vec(&x).map_err(err)
    }

    fn inverse(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.inverse_vec(&z).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn scale(&self) -> Vec<f64> {
        self.inner.scale.clone()
    }
}

/// The prototype head: distances, attribution, calibrated predictions.
#[pyclass(name = "PrototypeModel")]
struct PyPrototypeModel {
    inner: protoxct::head::PrototypeModel,
}

#[pymethods]
impl PyPrototypeModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPrototypeModel {
            inner: protoxct::head::PrototypeModel::load(std::path::Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn calibration_temperature(&self) -> f64 {
        self.inner.calibration_temperature
    }

    /// Semantic type name per prototype row.
    #[getter]
    fn semantic_types(&self) -> Vec<&'static str> {
        self.inner.semantic_map.iter().map(|t| t.as_str()).collect()
    }

    fn prototypes(&self) -> Vec<Vec<f64>> {
        (0..self.inner.k())
            .map(|i| self.inner.prototypes.row(i).to_vec())
            .collect()
    }

    /// Dimension-normalized squared distances to each prototype.
    fn distances(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        protoxct::head::distances(&z, &self.inner.prototypes).map_err(err)
    }

    /// Classifies one standardized embedding at threshold `t`. Returns
    /// label, p_defect, the attribution distribution, and the
    /// attributed semantic type.
    fn predict<'py>(&self, py: Python<'py>, z: Vec<f64>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let p = protoxct::head::predict(&z, &self.inner, t).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("label", p.label.as_u8())?;
        out.set_item("p_defect", p.p_defect)?;
        out.set_item("attribution", p.attribution)?;
        out.set_item("attributed_type", p.attributed_type.as_str())?;
        Ok(out)
    }
}

/// log Σ exp with the usual max shift.
#[pyfunction]
fn log_sum_exp(xs: Vec<f64>) -> PyResult<f64> {
    protoxct::numerics::log_sum_exp(&xs).map_err(err)
}

#[pyfunction]
fn softmax(xs: Vec<f64>) -> PyResult<Vec<f64>> {
    protoxct::numerics::softmax(&xs).map_err(err)
}

#[pyfunction]
fn cosine_sim(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    protoxct::numerics::cosine_sim(&a, &b).map_err(err)
}

/// The deterministic 40-dimensional statistical descriptor of one raw
/// 64×64 tile (row-major, unit intensity scale).
#[pyfunction]
fn patch_descriptor(tile: Vec<f32>) -> PyResult<Vec<f64>> {
    if tile.len() != protoxct::data::PATCH_AREA {
        return Err(PyValueError::new_err(format!(
            "tile must hold {} values",
            protoxct::data::PATCH_AREA
        )));
    }
    Ok(protoxct::encoder::descriptor::patch_descriptor(&tile))
}

/// Confusion counts and thresholded metrics at threshold `t`; undefined
/// ratios come back as None.
#[pyfunction]
fn confusion_metrics<'py>(
    py: Python<'py>,
    labels: Vec<u8>,
    scores: Vec<f64>,
    t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let scored = scored_from(labels, scores)?;
    let (c, m) = protoxct::eval::confusion_and_metrics(&scored, t).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("tp", c.tp)?;
    out.set_item("fp", c.fp)?;
    out.set_item("tn", c.tn)?;
    out.set_item("fn", c.fn_)?;
    out.set_item("accuracy", m.accuracy)?;
    out.set_item("precision", m.precision)?;
    out.set_item("recall", m.recall)?;
    out.set_item("f1", m.f1)?;
    out.set_item("specificity", m.specificity)?;
    Ok(out)
}

#[pyfunction]
fn roc_auc(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    protoxct::eval::roc_auc(&scored_from(labels, scores)?).map_err(err)
}

#[pyfunction]
fn pr_auc(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    protoxct::eval::pr_auc(&scored_from(labels, scores)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (labels, scores, bins = 15))]
fn ece(labels: Vec<u8>, scores: Vec<f64>, bins: usize) -> PyResult<f64> {
    protoxct::eval::ece(&scored_from(labels, scores)?, bins).map_err(err)
}

#[pyfunction]
fn brier(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    protoxct::eval::brier(&scored_from(labels, scores)?).map_err(err)
}

/// Temperature T minimizing the binary NLL of sigmoid(logit / T).
#[pyfunction]
fn fit_temperature(logits: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    protoxct::eval::fit_temperature(&logits, &labels_from(labels)?).map_err(err)
}

/// F1-maximizing threshold over inter-score midpoints.
#[pyfunction]
fn select_threshold(labels: Vec<u8>, scores: Vec<f64>) -> PyResult<f64> {
    protoxct::eval::select_threshold(&scored_from(labels, scores)?).map_err(err)
}

/// Patch-level bootstrap: 95% intervals per thresholded metric.
#[pyfunction]
#[pyo3(signature = (labels, scores, t, replicates = 2000, seed = 0))]
fn bootstrap_ci<'py>(
    py: Python<'py>,
    labels: Vec<u8>,
    scores: Vec<f64>,
    t: f64,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let scored = scored_from(labels, scores)?;
    let ci = protoxct::eval::bootstrap_ci(&scored, t, replicates, &Rng::new(seed)).map_err(err)?;
    let out = PyDict::new(py);
    for (name, (lo, hi)) in &ci.intervals {
        out.set_item(name, (lo, hi))?;
    }
    Ok(out)
}

/// Window origins of a slice tiling at the given stride.
#[pyfunction]
fn tile_origins(height: usize, width: usize, stride: usize) -> PyResult<Vec<(usize, usize)>> {
    Ok(protoxct::maps::tile(height, width, stride).map_err(err)?.origins)
}

#[pymodule]
fn protoxct_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStandardizer>()?;
    m.add_class::<PyPrototypeModel>()?;
    m.add_function(wrap_pyfunction!(log_sum_exp, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_sim, m)?)?;
    m.add_function(wrap_pyfunction!(patch_descriptor, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add_function(wrap_pyfunction!(fit_temperature, m)?)?;
    m.add_function(wrap_pyfunction!(select_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(tile_origins, m)?)?;
    Ok(())
}
