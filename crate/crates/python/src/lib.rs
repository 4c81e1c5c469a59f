//! Python bindings. Images cross the boundary as flat lists of floats in
//! row-major, channel-interleaved order plus a `(width, height, channels)`
//! shape tuple.

use std::path::PathBuf;

use pixdiff_core::analytics;
use pixdiff_core::forward::empirical_report;
use pixdiff_core::learner::{Checkpoint, ReversePredictor, ScaleEstimator};
use pixdiff_core::{
    build_schedule, convergence_steps, posterior_from_x0, run_sampling_algorithm, simulate_chain, synthetic, Grid,
    Image, NoisePredictor, PixelSchedule, RngStream, ScalePredictor, ScheduleConfig, Shape, SsimConfig,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

type PyShape = (usize, usize, usize);

fn err(e: pixdiff_core::Error) -> PyErr {
    if e.is_rejection() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn shape((w, h, c): PyShape) -> Shape {
    Shape::new(w, h, c)
}

fn grid(data: Vec<f64>, s: PyShape) -> PyResult<Grid> {
    Grid::new(shape(s), data).map_err(err)
}

fn image(data: Vec<f64>, s: PyShape) -> PyResult<Image> {
    Image::new(shape(s), data).map_err(err)
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let items = items.iter().map(|x| value_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, value_to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &value)
}

/// Per-pixel schedule built from a clean image with samples in (0, 1].
#[pyclass(name = "PixelSchedule", frozen)]
struct PySchedule {
    inner: PixelSchedule,
    shape: PyShape,
}

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (x0, shape, gamma, steps))]
    fn new(x0: Vec<f64>, shape: PyShape, gamma: f64, steps: usize) -> PyResult<Self> {
        let x0 = image(x0, shape)?;
        let cfg = ScheduleConfig::new(gamma, steps).map_err(err)?;
        Ok(Self {
            inner: build_schedule(&x0, &cfg).map_err(err)?,
            shape,
        })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn total_steps(&self) -> usize {
        pixdiff_core::NoiseSchedule::total_steps(&self.inner)
    }

    #[getter]
    fn shape(&self) -> PyShape {
        self.shape
    }

    fn scale(&self) -> Vec<f64> {
        self.inner.scale().data().to_vec()
    }

    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha_grid().data().to_vec()
    }

    fn alpha_bar(&self, step: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.alpha_bar(step).map_err(err)?.into_data())
    }

    fn beta_tilde(&self, step: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.beta_tilde(step).map_err(err)?.into_data())
    }
}

/// Samples `x_i` directly from `x0`; returns `(x_i, noise)`.
#[pyfunction]
#[pyo3(signature = (schedule, step, seed, stream = 0))]
fn forward_jump(schedule: &PySchedule, step: usize, seed: u64, stream: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mut rng = RngStream::new(seed, stream);
    let (x, eps) = pixdiff_core::forward_jump(schedule.inner.x0(), &schedule.inner, step, &mut rng).map_err(err)?;
    Ok((x.into_data(), eps.into_data()))
}

/// Runs the Markov chain; returns `[(step, state), ...]` every `stride` steps.
#[pyfunction]
#[pyo3(signature = (schedule, seed, stride = 1, stream = 0))]
fn simulate(schedule: &PySchedule, seed: u64, stride: usize, stream: u64) -> PyResult<Vec<(usize, Vec<f64>)>> {
    let mut rng = RngStream::new(seed, stream);
    let traj = simulate_chain(schedule.inner.x0(), &schedule.inner, &mut rng, stride).map_err(err)?;
    Ok(traj.records.into_iter().map(|r| (r.step, r.state.into_data())).collect())
}

/// First step from which a simulated chain stays isotropic, or `T + 1`.
#[pyfunction]
#[pyo3(signature = (schedule, seed, mean_tol = 0.05, var_tol = 0.05))]
fn convergence_step(schedule: &PySchedule, seed: u64, mean_tol: f64, var_tol: f64) -> PyResult<usize> {
    let mut rng = RngStream::new(seed, 0);
    let traj = simulate_chain(schedule.inner.x0(), &schedule.inner, &mut rng, 1).map_err(err)?;
    let report = empirical_report(&traj, &schedule.inner).map_err(err)?;
    convergence_steps(&report, mean_tol, var_tol).map_err(err)
}

/// Posterior `q(x_{i-1} | x_i, x0)`; returns `(mean, variance)`.
#[pyfunction]
fn posterior(x_i: Vec<f64>, schedule: &PySchedule, step: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let x_i = grid(x_i, schedule.shape)?;
    let p = posterior_from_x0(&x_i, schedule.inner.x0(), &schedule.inner, step).map_err(err)?;
    Ok((p.mu.into_data(), p.beta_tilde.into_data()))
}

#[pyfunction]
fn snr(x0: f64, gamma: f64, t: f64) -> PyResult<f64> {
    analytics::snr(x0, gamma, t).map_err(err)
}

#[pyfunction]
fn snr_rate(x0: f64, gamma: f64, t: f64) -> PyResult<f64> {
    analytics::snr_rate(x0, gamma, t).map_err(err)
}

#[pyfunction]
fn snr_bounds<'py>(py: Python<'py>, x0: f64, gamma: f64, t: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::snr_bounds(x0, gamma, t).map_err(err)?)
}

#[pyfunction]
fn verify_prop1<'py>(py: Python<'py>, x0_small: f64, x0_large: f64, gamma: f64, times: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::verify_prop1(x0_small, x0_large, gamma, &times).map_err(err)?)
}

#[pyfunction]
fn verify_prop2<'py>(py: Python<'py>, pixels: Vec<f64>, gamma: f64, a: f64, times: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analytics::verify_prop2(&pixels, gamma, a, &times).map_err(err)?)
}

#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, shape: PyShape) -> PyResult<f64> {
    let (a, b) = (grid(a, shape)?, grid(b, shape)?);
    pixdiff_core::ssim(&a, &b, &SsimConfig::for_shape(a.shape())).map_err(err)
}

/// Deterministic synthetic test image with samples in (0, 1].
#[pyfunction]
#[pyo3(signature = (size, channels = 1, seed = 1))]
fn portrait_like(size: usize, channels: usize, seed: u64) -> Vec<f64> {
    synthetic::portrait_like(size, channels, seed).into_grid().into_data()
}

/// Trained scale estimator and reverse predictor loaded from a `train`
/// output directory.
#[pyclass(name = "Sampler", frozen)]
struct PySampler {
    estimator: ScaleEstimator,
    predictor: ReversePredictor,
}

#[pymethods]
impl PySampler {
    #[staticmethod]
    fn load(models: PathBuf) -> PyResult<Self> {
        let load = |name: &str| Checkpoint::load(models.join(name)).map_err(err);
        let estimator = ScaleEstimator::from_checkpoint(&load("estimator.ckpt")?).map_err(err)?;
        let predictor = ReversePredictor::from_checkpoint(&load("predictor.ckpt")?).map_err(err)?;
        Ok(Self { estimator, predictor })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.estimator.config().gamma
    }

    #[getter]
    fn total_steps(&self) -> usize {
        self.predictor.config().total_steps
    }

    #[getter]
    fn shape(&self) -> PyShape {
        let s = self.estimator.shape();
        (s.width, s.height, s.channels)
    }

    #[getter]
    fn predictor_invocations(&self) -> usize {
        self.predictor.invocations()
    }

    fn estimate_scale(&self, x_i: Vec<f64>, step: usize) -> PyResult<Vec<f64>> {
        let x_i = grid(x_i, self.shape())?;
        Ok(self.estimator.estimate_scale(&x_i, step).map_err(err)?.into_data())
    }

    /// Reconstructs `x0` from `x_i`; returns a dict with `x0_hat`, `scale`
    /// and `predictor_calls`.
    #[pyo3(signature = (x_i, step, seed, stream = 0))]
    fn sample<'py>(&self, py: Python<'py>, x_i: Vec<f64>, step: usize, seed: u64, stream: u64) -> PyResult<Bound<'py, PyDict>> {
        let x_i = grid(x_i, self.shape())?;
        let before = self.predictor.invocations();
        let mut rng = RngStream::new(seed, stream);
        let out = run_sampling_algorithm(&x_i, step, &self.estimator, &self.predictor, &mut rng).map_err(err)?;
        let dict = PyDict::new(py);
        dict.set_item("x0_hat", out.x0_hat().data().to_vec())?;
        dict.set_item("scale", out.scale.data().to_vec())?;
        dict.set_item("predictor_calls", self.predictor.invocations() - before)?;
        Ok(dict)
    }
}

#[pymodule]
fn pixdiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PySampler>()?;
    m.add_function(wrap_pyfunction!(forward_jump, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_step, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(snr_rate, m)?)?;
    m.add_function(wrap_pyfunction!(snr_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(verify_prop1, m)?)?;
    m.add_function(wrap_pyfunction!(verify_prop2, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(portrait_like, m)?)?;
    Ok(())
}
