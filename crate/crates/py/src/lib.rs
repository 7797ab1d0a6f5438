//! Python bindings. Tensors cross the boundary as a shape plus a flat list
//! of floats; datasets and checkpoints are passed as directory paths.

use std::path::PathBuf;

use cauzen_core::causality::{self, CausalityMap, Estimator, FeatureStack};
use cauzen_core::config::ExperimentConfig;
use cauzen_core::data::{self, Dataset, SyntheticSpec};
use cauzen_core::heads::{self, HeadConfig};
use cauzen_core::model::{self, TinyConvNet, DEFAULT_K};
use cauzen_core::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for cauzen_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

fn estimator(method: &str, p: Option<f64>) -> PyResult<Estimator> {
    match (method, p) {
        ("max", None) => Ok(Estimator::Max),
        ("lehmer", Some(p)) => Ok(Estimator::Lehmer { p }),
        ("lehmer", None) => Err(PyValueError::new_err("method 'lehmer' requires p")),
        ("max", Some(_)) => Err(PyValueError::new_err("p only applies to method 'lehmer'")),
        _ => Err(PyValueError::new_err(format!("method must be max|lehmer, got {method:?}"))),
    }
}

fn map_rows(c: &CausalityMap) -> Vec<Vec<f32>> {
    c.entries().chunks(c.k()).map(<[f32]>::to_vec).collect()
}

/// Dense float32 tensor.
#[pyclass(name = "Tensor", module = "cauzen")]
struct PyTensor {
    inner: cauzen_core::tensor::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: cauzen_core::tensor::Tensor::new(&shape, data).py()?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    /// Reads a CTEN file.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyTensor {
            inner: data::read_cten(path).py()?,
        })
    }

    /// Writes a CTEN file.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        data::write_cten(&self.inner, path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Trained network loaded from a checkpoint directory.
#[pyclass(module = "cauzen")]
struct Model {
    inner: TinyConvNet,
    config: ExperimentConfig,
    best_epoch: usize,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let ckpt = model::load_checkpoint(dir).py()?;
        Ok(Model {
            inner: ckpt.model,
            config: ckpt.config,
            best_epoch: ckpt.best_epoch,
        })
    }

    #[getter]
    fn head(&self) -> String {
        self.inner.head().head.to_string()
    }

    #[getter]
    fn config(&self) -> String {
        self.config.to_text()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn classifier_inputs(&self) -> usize {
        self.inner.classifier_inputs()
    }

    /// Class logits of one `[c, h, w]` image.
    #[pyo3(signature = (image, draw = 0))]
    fn logits(&self, image: &PyTensor, draw: u64) -> PyResult<Vec<f32>> {
        self.inner.logits(&image.inner, draw).py()
    }

    /// `(accuracy, auroc or None, mean_loss)` on a split directory.
    fn evaluate(&self, py: Python<'_>, data_dir: PathBuf) -> PyResult<(f64, Option<f64>, f64)> {
        let set = Dataset::load(data_dir).py()?;
        let r = py.detach(|| model::evaluate(&self.inner, &set)).py()?;
        Ok((r.accuracy, r.auroc, r.mean_loss))
    }

    /// Grad-CAM heat map `[h, w]` for `target` class.
    fn grad_cam(&self, image: &PyTensor, target: usize) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: model::grad_cam(&self.inner, &image.inner, target).py()?,
        })
    }
}

#[pyfunction]
fn lehmer_mean(x: Vec<f64>, p: f64) -> PyResult<f64> {
    causality::lehmer_mean(&x, p).py()
}

/// Causality map of a `[k, n, n]` stack as `k` rows of `k` values.
#[pyfunction]
#[pyo3(signature = (stack, method = "max", p = None))]
fn causality_map(stack: &PyTensor, method: &str, p: Option<f64>) -> PyResult<Vec<Vec<f32>>> {
    let f = FeatureStack::from_tensor(&stack.inner).py()?;
    let c = causality::causality_map(&f, estimator(method, p)?).py()?;
    Ok(map_rows(&c))
}

#[pyfunction]
#[pyo3(signature = (cmap, direction = "causes", mode = "full"))]
fn extract_factors(cmap: Vec<Vec<f32>>, direction: &str, mode: &str) -> PyResult<Vec<f32>> {
    let c = CausalityMap::from_rows(&cmap).py()?;
    Ok(causality::extract_factors(&c, parse(direction)?, parse(mode)?)
        .weights()
        .to_vec())
}

#[pyfunction]
fn damaged_map(k: usize, seed: u64, draw: u64) -> PyResult<Vec<Vec<f32>>> {
    Ok(map_rows(&causality::damaged_map(k, seed, draw).py()?))
}

#[pyfunction]
fn damaged_factors(k: usize, mode: &str, seed: u64, draw: u64) -> PyResult<Vec<f32>> {
    Ok(causality::damaged_factors(k, parse(mode)?, seed, draw)
        .py()?
        .weights()
        .to_vec())
}

/// Flattened classifier input of a head for a `[k, n, n]` stack.
#[pyfunction]
#[pyo3(signature = (stack, head = "baseline", direction = "causes", mode = "full", method = "max", p = None, seed = 0, draw = 0))]
#[allow(clippy::too_many_arguments)]
fn head_features(
    stack: &PyTensor,
    head: &str,
    direction: &str,
    mode: &str,
    method: &str,
    p: Option<f64>,
    seed: u64,
    draw: u64,
) -> PyResult<Vec<f32>> {
    let cfg = HeadConfig {
        head: parse(head)?,
        estimator: estimator(method, p)?,
        direction: parse(direction)?,
        mode: parse(mode)?,
        detach_cmap: false,
    };
    let f = FeatureStack::from_tensor(&stack.inner).py()?;
    Ok(heads::head_features(&f, &cfg, seed, draw).py()?.into_data())
}

#[pyfunction]
fn lr_factor(epoch: usize, total_epochs: usize) -> PyResult<f64> {
    model::lr_factor(epoch, total_epochs).py()
}

/// Binary AUROC, or None when only one class is present.
#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<usize>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(model::auroc(&scores, &labels))
}

/// Writes train/, val/ and test/ under `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, train = 2000, val = 400, test = 600, side = 32, noise = 0.15, cooccurrence = 1.0, intensity = 1.0))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    out_dir: PathBuf,
    seed: u64,
    train: usize,
    val: usize,
    test: usize,
    side: usize,
    noise: f32,
    cooccurrence: f64,
    intensity: f32,
) -> PyResult<()> {
    let spec = SyntheticSpec {
        side,
        train,
        val,
        test,
        intensity,
        noise_std: noise,
        cooccurrence,
        seed,
    };
    py.detach(|| {
        let d = data::generate_synthetic(&spec)?;
        d.train.save(out_dir.join("train"))?;
        d.val.save(out_dir.join("val"))?;
        d.test.save(out_dir.join("test"))
    })
    .py()
}

/// Trains from config text on `data_dir/{train,val}` and writes the
/// checkpoint to `out_dir`. Returns `(best_epoch, log_csv)`.
#[pyfunction]
#[pyo3(signature = (config, data_dir, out_dir, k = DEFAULT_K))]
fn train(py: Python<'_>, config: &str, data_dir: PathBuf, out_dir: PathBuf, k: usize) -> PyResult<(usize, String)> {
    let cfg = ExperimentConfig::parse(config).py()?;
    py.detach(|| {
        let train_set = Dataset::load(data_dir.join("train"))?;
        let val_set = Dataset::load(data_dir.join("val"))?;
        let out = model::train(&cfg, k, &train_set, &val_set)?;
        model::save_checkpoint(&out_dir, &out.model, &cfg, out.best_epoch)?;
        let log = model::log_to_csv(&out.log);
        let path = out_dir.join("log.csv");
        std::fs::write(&path, &log).map_err(|source| Error::Io { path, source })?;
        Ok((out.best_epoch, log))
    })
    .py()
}

#[pymodule]
fn cauzen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(lehmer_mean, m)?)?;
    m.add_function(wrap_pyfunction!(causality_map, m)?)?;
    m.add_function(wrap_pyfunction!(extract_factors, m)?)?;
    m.add_function(wrap_pyfunction!(damaged_map, m)?)?;
    m.add_function(wrap_pyfunction!(damaged_factors, m)?)?;
    m.add_function(wrap_pyfunction!(head_features, m)?)?;
    m.add_function(wrap_pyfunction!(lr_factor, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
