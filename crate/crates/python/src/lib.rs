//! Python bindings: pooling, backprojection, checkpoints, MNIST128
//! synthesis and evaluation.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use spamcam_core::backproject::{detect_on_cam, pinpoint_from_cam, receptive_field as rf};
use spamcam_core::dataset::{self, MnistSet, Sample as CoreSample, Split};
use spamcam_core::eval::{evaluate as core_evaluate, Task};
use spamcam_core::pooling::{pool_backward as core_pool_backward, pool_forward as core_pool_forward, PoolingName};
use spamcam_core::trainer::{self, TrainConfig};
use spamcam_core::{BackprojectConfig, CamMap, Checkpoint, Error, NetConfig, PoolingKind, SpamConfig, Tensor};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_numeric() {
        PyArithmeticError::new_err(msg)
    } else if matches!(e.root(), Error::Io(_)) {
        PyOSError::new_err(msg)
    } else {
        PyValueError::new_err(msg)
    }
}

fn square(rows: Vec<Vec<f64>>) -> PyResult<CamMap<f64>> {
    let side = rows.len();
    if rows.iter().any(|r| r.len() != side) {
        return Err(PyValueError::new_err("activation map must be a square list of rows"));
    }
    CamMap::new(side, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn rows<T: spamcam_core::Real>(m: &CamMap<T>) -> Vec<Vec<f64>> {
    m.values().chunks(m.side()).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
}

fn kind(name: &str, kernels: Option<Vec<usize>>, side: usize) -> PyResult<PoolingKind> {
    let name: PoolingName = name.parse().map_err(py_err)?;
    Ok(match name {
        PoolingName::Gmp => PoolingKind::Gmp,
        PoolingName::Gap => PoolingKind::Gap,
        PoolingName::Spam => match kernels {
            Some(k) => PoolingKind::Spam(SpamConfig::new(k).map_err(py_err)?),
            None => PoolingKind::Spam(SpamConfig::default_for(side)),
        },
    })
}

/// Pooled value of a square map under `gmp`, `gap` or `spam`.
#[pyfunction]
#[pyo3(signature = (pooling, cam, kernels=None))]
fn pool_forward(pooling: &str, cam: Vec<Vec<f64>>, kernels: Option<Vec<usize>>) -> PyResult<f64> {
    let cam = square(cam)?;
    let k = kind(pooling, kernels, cam.side())?;
    Ok(core_pool_forward(&k, &cam).map_err(py_err)?.0)
}

/// Gradient of the pooled value with respect to every cell, times `upstream`.
#[pyfunction]
#[pyo3(signature = (pooling, cam, upstream=1.0, kernels=None))]
fn pool_backward(pooling: &str, cam: Vec<Vec<f64>>, upstream: f64, kernels: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
    let cam = square(cam)?;
    let k = kind(pooling, kernels, cam.side())?;
    let (_, ctx) = core_pool_forward(&k, &cam).map_err(py_err)?;
    Ok(rows(&core_pool_backward(&ctx, upstream)))
}

/// Input box `(x0, y0, x1, y1)` seen by CAM cell `(x, y)` of the MNIST128
/// network, shrunk by `ratio`; `None` when the shrink leaves nothing.
#[pyfunction]
#[pyo3(signature = (x, y, ratio=0.0))]
fn mnist128_receptive_field(x: usize, y: usize, ratio: f64) -> PyResult<Option<(usize, usize, usize, usize)>> {
    let cfg = NetConfig::mnist128(PoolingName::Spam);
    let image = (cfg.input.2, cfg.input.1);
    let b = rf(&cfg.geometries_cam_to_input(), x, y, ratio, image).map_err(py_err)?;
    Ok(b.map(|b| (b.x0, b.y0, b.x1, b.y1)))
}

/// `(dims, payload)` of an unsigned-byte IDX file.
#[pyfunction]
fn parse_idx<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(Vec<usize>, Bound<'py, PyBytes>)> {
    let a = dataset::parse_idx(data).map_err(py_err)?;
    Ok((a.dims, PyBytes::new(py, &a.data)))
}

#[pyfunction]
fn encode_idx<'py>(py: Python<'py>, dims: Vec<usize>, payload: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
    let bytes = dataset::encode_idx(&dataset::IdxArray { dims, data: payload.to_vec() }).map_err(py_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// `(x0, y0, x1, y1, score)`.
type DetectionTuple = (usize, usize, usize, usize, f64);

/// One digit on a 128x128 canvas.
#[pyclass(frozen, from_py_object, module = "spamcam")]
#[derive(Clone)]
struct Sample {
    inner: CoreSample,
}

#[pymethods]
impl Sample {
    #[getter]
    fn id(&self) -> usize {
        self.inner.id
    }

    #[getter]
    fn digit(&self) -> u8 {
        self.inner.digit
    }

    #[getter]
    fn label(&self) -> u8 {
        self.inner.label
    }

    #[getter]
    fn gt_box(&self) -> (usize, usize, usize, usize) {
        let b = self.inner.gt_box;
        (b.x0, b.y0, b.x1, b.y1)
    }

    /// Row-major canvas bytes.
    fn canvas<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.canvas_bytes())
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!("Sample(id={}, digit={}, label={}, gt_box={})", s.id, s.digit, s.label, s.gt_box)
    }
}

/// Samples built from the `train` or `test` MNIST file in `mnist_dir`.
#[pyfunction]
#[pyo3(signature = (mnist_dir, seed, count, split="test", start=0))]
fn synthesize(mnist_dir: PathBuf, seed: u64, count: usize, split: &str, start: usize) -> PyResult<Vec<Sample>> {
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(PyValueError::new_err(format!("split must be 'train' or 'test', got {other:?}"))),
    };
    let set = MnistSet::load(&mnist_dir, split).map_err(py_err)?;
    let samples = dataset::synthesize_range(&set, seed, start, count).map_err(py_err)?;
    Ok(samples.into_iter().map(|inner| Sample { inner }).collect())
}

/// A trained network with its tuned backprojection ratio.
#[pyclass(frozen, module = "spamcam")]
struct Model {
    ckpt: Checkpoint,
}

impl Model {
    fn image(&self, image: &[u8]) -> PyResult<Tensor<f32>> {
        let (c, h, w) = self.ckpt.model.config.input;
        if image.len() != c * h * w {
            return Err(PyValueError::new_err(format!("expected {} bytes ({c}x{h}x{w}), got {}", c * h * w, image.len())));
        }
        Tensor::from_vec(&[c, h, w], image.iter().map(|&b| b as f32 / 255.0).collect()).map_err(py_err)
    }

    fn bp(&self, ratio: Option<f64>) -> PyResult<BackprojectConfig> {
        BackprojectConfig::new(ratio.unwrap_or(self.ckpt.meta.ratio)).map_err(py_err)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { ckpt: Checkpoint::load(&path).map_err(py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ckpt.save(&path).map_err(py_err)
    }

    #[getter]
    fn pooling(&self) -> &'static str {
        self.ckpt.model.config.pooling.name()
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.ckpt.meta.ratio
    }

    /// Pooled value above which an image is called positive.
    #[getter]
    fn threshold(&self) -> PyResult<f64> {
        self.ckpt.model.threshold().map_err(py_err)
    }

    /// CAM of a raw 8-bit image as a list of rows.
    fn cam(&self, image: &[u8]) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.ckpt.model.cam(&self.image(image)?).map_err(py_err)?))
    }

    fn pooled(&self, image: &[u8]) -> PyResult<f64> {
        let cam = self.ckpt.model.cam(&self.image(image)?).map_err(py_err)?;
        Ok(self.ckpt.model.pooled(&cam).map_err(py_err)? as f64)
    }

    /// Input-pixel point of the strongest CAM cell.
    fn pinpoint(&self, image: &[u8]) -> PyResult<(f64, f64)> {
        let m = &self.ckpt.model;
        let cam = m.cam(&self.image(image)?).map_err(py_err)?;
        pinpoint_from_cam(&cam, &m.config.geometries_cam_to_input(), (m.config.input.2, m.config.input.1)).map_err(py_err)
    }

    /// `(x0, y0, x1, y1, score)` per detection; the ratio defaults to the tuned one.
    #[pyo3(signature = (image, ratio=None))]
    fn detect(&self, image: &[u8], ratio: Option<f64>) -> PyResult<Vec<DetectionTuple>> {
        let cam = self.ckpt.model.cam(&self.image(image)?).map_err(py_err)?;
        let dets = detect_on_cam(&self.ckpt.model, &cam, &self.bp(ratio)?).map_err(py_err)?;
        Ok(dets.iter().map(|d| (d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1, d.score)).collect())
    }

    /// AP per task name over the given samples.
    #[pyo3(signature = (samples, ratio=None))]
    fn evaluate(&self, samples: Vec<Sample>, ratio: Option<f64>) -> PyResult<Vec<(String, f64)>> {
        let samples: Vec<CoreSample> = samples.into_iter().map(|s| s.inner).collect();
        let m = core_evaluate(&self.ckpt.model, &samples, &Task::ALL, &self.bp(ratio)?).map_err(py_err)?;
        Ok(m.entries.into_iter().map(|(t, ap)| (t.name().to_string(), ap)).collect())
    }
}

/// Trains from `key = value` config text; returns the model and the report text.
#[pyfunction]
fn train(py: Python<'_>, config: &str) -> PyResult<(Model, String)> {
    let cfg = TrainConfig::from_text(config).map_err(py_err)?;
    let (ckpt, report) = py.detach(|| trainer::train(&cfg)).map_err(py_err)?;
    Ok((Model { ckpt }, report.to_text()))
}

#[pymodule]
fn spamcam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pool_forward, m)?)?;
    m.add_function(wrap_pyfunction!(pool_backward, m)?)?;
    m.add_function(wrap_pyfunction!(mnist128_receptive_field, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx, m)?)?;
    m.add_function(wrap_pyfunction!(encode_idx, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Sample>()?;
    m.add_class::<Model>()?;
    Ok(())
}
