//! Python module `bottomup`: feature maps, the column-attention and
//! bottom-up scan kernels, the composed block, box IoU and the gradient suite.
//!
//! Maps are passed as flat row-major `H×W×C` lists with row 0 at the bottom.

use bottomup::cca::{self, AttentionWeights, ColumnQueries};
use bottomup::gradsuite::{self, MapSize, SuiteConfig};
use bottomup::metrics::{self, KittiLabel};
use bottomup::posenc::{self, PositionalEncoding};
use bottomup::rrcs::{self, AttentionMode, BlockParams, ScanDirection};
use bottomup::{Error, Tensor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn direction(name: &str) -> PyResult<ScanDirection> {
    match name {
        "bottom_up" => Ok(ScanDirection::BottomUp),
        "up_bottom" => Ok(ScanDirection::UpBottom),
        _ => Err(PyValueError::new_err(format!("unknown direction {name:?} (bottom_up, up_bottom)"))),
    }
}

fn mode(name: &str) -> PyResult<AttentionMode> {
    match name {
        "column" => Ok(AttentionMode::Column),
        "global" => Ok(AttentionMode::Global),
        _ => Err(PyValueError::new_err(format!("unknown attention mode {name:?} (column, global)"))),
    }
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Tensor> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err(format!("{what} must be a non-empty rectangular list of lists")));
    }
    Tensor::new(&[n, m], rows.concat()).map_err(err)
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let m = t.shape()[1];
    t.data().chunks(m).map(<[f64]>::to_vec).collect()
}

#[pyclass(name = "FeatureMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFeatureMap(bottomup::FeatureMap);

#[pymethods]
impl PyFeatureMap {
    #[new]
    fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> PyResult<Self> {
        let t = Tensor::new(&[h, w, c], data).map_err(err)?;
        bottomup::FeatureMap::new(t).map(Self).map_err(err)
    }

    /// Uniform values in `[-1, 1)` from `seed`.
    #[staticmethod]
    fn random(h: usize, w: usize, c: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::uniform(&[h, w, c], -1.0, 1.0, &mut rng);
        bottomup::FeatureMap::new(t).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    fn get(&self, row: usize, col: usize, channel: usize) -> PyResult<f64> {
        let (h, w, c) = self.0.dims();
        if row >= h || col >= w || channel >= c {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.0.pixel(row, col)[channel])
    }

    fn to_list(&self) -> Vec<f64> {
        self.0.tensor().data().to_vec()
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.0.dims();
        format!("FeatureMap({h}x{w}x{c})")
    }
}

#[pyclass(name = "Box3D", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBox3D(metrics::Box3D);

#[pymethods]
impl PyBox3D {
    /// `center` is the geometric centre, `dims` is `(h, w, l)`.
    #[new]
    fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self(metrics::Box3D::new(center, dims, yaw))
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.0.center
    }

    #[getter]
    fn dims(&self) -> [f64; 3] {
        self.0.dims
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn __repr__(&self) -> String {
        format!("Box3D(center={:?}, dims={:?}, yaw={})", self.0.center, self.0.dims, self.0.yaw)
    }
}

/// Randomly initialised block: key encoder, queries and output projection.
#[pyclass(name = "Block", frozen)]
struct PyBlock {
    params: BlockParams,
    mode: AttentionMode,
}

#[pymethods]
impl PyBlock {
    #[new]
    #[pyo3(signature = (width, channels, seed = 0, mode = "column"))]
    fn new(width: usize, channels: usize, seed: u64, mode: &str) -> PyResult<Self> {
        let mode = self::mode(mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { params: BlockParams::init(width, channels, mode, &mut rng), mode })
    }

    /// Attention weights as `H` lists of `W` values.
    fn attention(&self, features: &PyFeatureMap) -> PyResult<Vec<Vec<f64>>> {
        let (h, _, c) = features.0.dims();
        let pe = PositionalEncoding::new(h, c).map_err(err)?;
        let w = rrcs::block_attention(&features.0, &pe, &self.params, self.mode).map_err(err)?;
        Ok(rows_of(w.tensor()))
    }

    #[pyo3(signature = (features, direction = "bottom_up"))]
    fn forward(&self, features: &PyFeatureMap, direction: &str) -> PyResult<PyFeatureMap> {
        let dir = self::direction(direction)?;
        let (h, _, c) = features.0.dims();
        let pe = PositionalEncoding::new(h, c).map_err(err)?;
        let w = rrcs::block_attention(&features.0, &pe, &self.params, self.mode).map_err(err)?;
        rrcs::block_with_weights(&features.0, &w, &self.params.phi, dir)
            .map(PyFeatureMap)
            .map_err(err)
    }
}

/// Sinusoidal row encoding as `height` lists of `channels` values.
#[pyfunction]
fn positional_encoding(height: usize, channels: usize) -> PyResult<Vec<Vec<f64>>> {
    let pe = PositionalEncoding::new(height, channels).map_err(err)?;
    Ok(rows_of(pe.table()))
}

#[pyfunction]
fn add_encoding(features: &PyFeatureMap) -> PyResult<PyFeatureMap> {
    let (h, _, c) = features.0.dims();
    let pe = PositionalEncoding::new(h, c).map_err(err)?;
    posenc::add_encoding(&features.0, &pe).map(PyFeatureMap).map_err(err)
}

/// Per-column softmax weights (`H` lists of `W`) for `W` queries of `C` values.
#[pyfunction]
fn column_attention(keys: &PyFeatureMap, queries: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let q = ColumnQueries::new(matrix(queries, "queries")?).map_err(err)?;
    let w = cca::column_attention(&keys.0, &q).map_err(err)?;
    Ok(rows_of(w.tensor()))
}

/// Softmax over the whole map for a single query.
#[pyfunction]
fn global_attention(keys: &PyFeatureMap, query: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let w = cca::global_attention(&keys.0, &Tensor::vector(&query)).map_err(err)?;
    Ok(rows_of(w.tensor()))
}

#[pyfunction]
fn apply_weights(features: &PyFeatureMap, weights: Vec<Vec<f64>>) -> PyResult<PyFeatureMap> {
    let w = AttentionWeights::new(matrix(weights, "weights")?).map_err(err)?;
    cca::apply_weights(&features.0, &w).map(PyFeatureMap).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (features, direction = "bottom_up"))]
fn vertical_cumsum(features: &PyFeatureMap, direction: &str) -> PyResult<PyFeatureMap> {
    Ok(PyFeatureMap(rrcs::vertical_cumsum(&features.0, self::direction(direction)?)))
}

#[pyfunction]
#[pyo3(signature = (scanned, direction = "bottom_up"))]
fn normalize_rows(scanned: &PyFeatureMap, direction: &str) -> PyResult<PyFeatureMap> {
    Ok(PyFeatureMap(rrcs::normalize_rows(&scanned.0, self::direction(direction)?)))
}

#[pyfunction]
fn cca_cost_model(h: usize, w: usize, c: usize) -> u64 {
    cca::cca_cost_model(h, w, c)
}

#[pyfunction]
fn quadratic_cost_model(h: usize, w: usize, c: usize) -> u64 {
    bottomup::bench::quadratic_cost_model(h, w, c)
}

#[pyfunction]
fn bev_iou(a: &PyBox3D, b: &PyBox3D) -> f64 {
    metrics::bev_iou(&a.0, &b.0)
}

#[pyfunction]
fn iou_3d(a: &PyBox3D, b: &PyBox3D) -> f64 {
    metrics::iou_3d(&a.0, &b.0)
}

fn label_dict<'py>(py: Python<'py>, l: &KittiLabel) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("type", &l.kind)?;
    d.set_item("truncated", l.truncated)?;
    d.set_item("occluded", l.occluded)?;
    d.set_item("alpha", l.alpha)?;
    d.set_item("bbox", l.bbox)?;
    d.set_item("dims", l.dims)?;
    d.set_item("location", l.location)?;
    d.set_item("rotation_y", l.rotation_y)?;
    d.set_item("score", l.score)?;
    Ok(d)
}

/// Parses one KITTI label line into a dict.
#[pyfunction]
fn parse_kitti_label<'py>(py: Python<'py>, line: &str) -> PyResult<Bound<'py, PyDict>> {
    let l = metrics::parse_kitti_label(line).map_err(err)?;
    label_dict(py, &l)
}

/// Runs the finite-difference suite; returns `{"max_rel_error": .., "results": [(op, size, err), ..]}`.
#[pyfunction]
#[pyo3(signature = (sizes = None, trials = 20, seed = 0))]
fn gradcheck<'py>(
    py: Python<'py>,
    sizes: Option<Vec<String>>,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = SuiteConfig { trials, seed, ..SuiteConfig::default() };
    if let Some(s) = sizes {
        config.sizes = s.iter().map(|s| s.parse::<MapSize>()).collect::<Result<_, _>>().map_err(err)?;
    }
    let report = py.detach(|| gradsuite::run_suite(&config)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("max_rel_error", report.max_rel_error)?;
    let results: Vec<(String, String, f64)> = report
        .results
        .iter()
        .map(|r| (r.op.clone(), r.size.to_string(), r.max_rel_error))
        .collect();
    d.set_item("results", results)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "bottomup")]
fn bottomup_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyBox3D>()?;
    m.add_class::<PyBlock>()?;
    m.add_function(wrap_pyfunction!(positional_encoding, m)?)?;
    m.add_function(wrap_pyfunction!(add_encoding, m)?)?;
    m.add_function(wrap_pyfunction!(column_attention, m)?)?;
    m.add_function(wrap_pyfunction!(global_attention, m)?)?;
    m.add_function(wrap_pyfunction!(apply_weights, m)?)?;
    m.add_function(wrap_pyfunction!(vertical_cumsum, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_rows, m)?)?;
    m.add_function(wrap_pyfunction!(cca_cost_model, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_cost_model, m)?)?;
    m.add_function(wrap_pyfunction!(bev_iou, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(parse_kitti_label, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
