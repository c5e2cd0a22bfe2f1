//! Python bindings: transforms, masks, the acquisition operators, data
//! consistency, phantoms, losses, metrics, trained models and the CLI
//! commands. Complex arrays cross the boundary as `complex128` ndarrays.

use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray1, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use cinerecon::harness::{self, Command, RunConfig};
use cinerecon::kspace::{self, CineSlice, KSpaceData, MaskParams, Sampling};
use cinerecon::metrics::SsimOptions;
use cinerecon::phantom::{generate_cine_phantom, PhantomSpec};
use cinerecon::{losses, metrics, model, ReconError, C64};

fn to_py(e: ReconError) -> PyErr {
    match e {
        ReconError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{}: {e}", e.category())),
    }
}

fn slice_from(a: PyReadonlyArray3<'_, C64>) -> PyResult<CineSlice> {
    CineSlice::new(a.as_array().to_owned()).map_err(to_py)
}

#[pyclass(name = "SamplingMask", module = "pycinerecon", frozen)]
struct PyMask {
    inner: kspace::SamplingMask,
}

#[pymethods]
impl PyMask {
    #[new]
    #[pyo3(signature = (width, acceleration, center_lines, seed=0, nonstandard=false))]
    fn new(
        width: usize,
        acceleration: usize,
        center_lines: usize,
        seed: u64,
        nonstandard: bool,
    ) -> PyResult<Self> {
        let inner = kspace::SamplingMask::from_params(MaskParams {
            width,
            acceleration,
            center_lines,
            seed,
            nonstandard,
        })
        .map_err(to_py)?;
        Ok(PyMask { inner })
    }

    #[getter]
    fn lines<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<bool>> {
        self.inner.lines().clone().into_pyarray(py)
    }

    #[getter]
    fn acceleration(&self) -> usize {
        self.inner.acceleration()
    }

    #[getter]
    fn center_lines(&self) -> usize {
        self.inner.center_lines()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    fn sampled_count(&self) -> usize {
        self.inner.sampled_count()
    }

    fn effective_acceleration(&self) -> f64 {
        self.inner.effective_acceleration()
    }

    fn __repr__(&self) -> String {
        format!(
            "SamplingMask(width={}, acceleration={}, center_lines={}, seed={})",
            self.inner.width(),
            self.inner.acceleration(),
            self.inner.center_lines(),
            self.inner.seed()
        )
    }
}

fn kspace_data(k: PyReadonlyArray3<'_, C64>, mask: Option<&PyMask>) -> PyResult<KSpaceData> {
    let sampling = match mask {
        Some(m) => Sampling::Masked(m.inner.clone()),
        None => Sampling::Full,
    };
    KSpaceData::new(k.as_array().to_owned(), sampling).map_err(to_py)
}

/// Centered orthonormal 2-D FFT of every frame of a `(T, H, W)` stack.
#[pyfunction]
fn fft2c<'py>(
    py: Python<'py>,
    x: PyReadonlyArray3<'py, C64>,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    Ok(kspace::fft2c_frames(&x.as_array().to_owned())
        .map_err(to_py)?
        .into_pyarray(py))
}

#[pyfunction]
fn ifft2c<'py>(
    py: Python<'py>,
    k: PyReadonlyArray3<'py, C64>,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    Ok(kspace::ifft2c_frames(&k.as_array().to_owned())
        .map_err(to_py)?
        .into_pyarray(py))
}

/// Masked k-space `M F x`.
#[pyfunction]
fn forward_operator<'py>(
    py: Python<'py>,
    image: PyReadonlyArray3<'py, C64>,
    mask: &PyMask,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    let k = kspace::forward_operator(&slice_from(image)?, &mask.inner).map_err(to_py)?;
    Ok(k.data().clone().into_pyarray(py))
}

/// Zero-filled image `F^H M k`; `mask=None` means fully sampled.
#[pyfunction]
#[pyo3(signature = (kspace_data, mask=None))]
fn adjoint_operator<'py>(
    py: Python<'py>,
    kspace_data: PyReadonlyArray3<'py, C64>,
    mask: Option<&PyMask>,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    let k = self::kspace_data(kspace_data, mask)?;
    Ok(kspace::adjoint_operator(&k).into_data().into_pyarray(py))
}

#[pyfunction]
fn data_consistency<'py>(
    py: Python<'py>,
    prediction: PyReadonlyArray3<'py, C64>,
    measured: PyReadonlyArray3<'py, C64>,
    mask: &PyMask,
    log_lambda: f64,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    let y = kspace_data(measured, Some(mask))?;
    let out = model::data_consistency(&slice_from(prediction)?, &y, log_lambda).map_err(to_py)?;
    Ok(out.into_data().into_pyarray(py))
}

#[pyfunction]
#[pyo3(signature = (frames=6, height=32, width=48, seed=0, contraction_amplitude=0.2))]
fn phantom<'py>(
    py: Python<'py>,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
    contraction_amplitude: f64,
) -> PyResult<Bound<'py, PyArray3<C64>>> {
    let spec = PhantomSpec {
        frames,
        height,
        width,
        seed,
        contraction_amplitude,
        ..Default::default()
    };
    Ok(generate_cine_phantom(&spec)
        .map_err(to_py)?
        .into_data()
        .into_pyarray(py))
}

#[pyfunction]
fn perp_loss(pred: PyReadonlyArray3<'_, C64>, target: PyReadonlyArray3<'_, C64>) -> PyResult<f64> {
    losses::perp_loss(&pred.as_array().to_owned(), &target.as_array().to_owned()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, target, cutoff=0.25, ratio=2.0))]
fn l1_split_loss(
    pred: PyReadonlyArray3<'_, C64>,
    target: PyReadonlyArray3<'_, C64>,
    cutoff: f64,
    ratio: f64,
) -> PyResult<f64> {
    let cfg = losses::LossConfig {
        highpass_cutoff: cutoff,
        highpass_weight_ratio: ratio,
        ..losses::LossConfig::single(losses::LossKind::L1Split)
    };
    cfg.validate().map_err(to_py)?;
    losses::l1_split_loss(
        &pred.as_array().to_owned(),
        &target.as_array().to_owned(),
        &cfg,
    )
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, target, window=7))]
fn ssim_loss(
    pred: PyReadonlyArray3<'_, f64>,
    target: PyReadonlyArray3<'_, f64>,
    window: usize,
) -> PyResult<f64> {
    losses::ssim_loss(pred.as_array(), target.as_array(), window).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, reference, data_range=None))]
fn ssim(
    pred: PyReadonlyArray2<'_, f64>,
    reference: PyReadonlyArray2<'_, f64>,
    data_range: Option<f64>,
) -> PyResult<f64> {
    metrics::ssim(
        pred.as_array(),
        reference.as_array(),
        data_range,
        &SsimOptions::default(),
    )
    .map_err(to_py)
}

#[pyfunction]
fn nmse(pred: PyReadonlyArray2<'_, f64>, reference: PyReadonlyArray2<'_, f64>) -> PyResult<f64> {
    metrics::nmse(pred.as_array(), reference.as_array()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pred, reference, data_range=None))]
fn psnr(
    pred: PyReadonlyArray2<'_, f64>,
    reference: PyReadonlyArray2<'_, f64>,
    data_range: Option<f64>,
) -> PyResult<f64> {
    metrics::psnr(pred.as_array(), reference.as_array(), data_range).map_err(to_py)
}

/// Full-image and challenge-crop metrics of a complex reconstruction, as
/// a JSON string.
#[pyfunction]
fn challenge_eval(
    pred: PyReadonlyArray3<'_, C64>,
    reference: PyReadonlyArray3<'_, C64>,
) -> PyResult<String> {
    let e = metrics::challenge_eval(&slice_from(pred)?, &slice_from(reference)?).map_err(to_py)?;
    serde_json::to_string(&e).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A trained CRNN or U-Net loaded from a checkpoint.
#[pyclass(name = "Model", module = "pycinerecon", frozen)]
struct PyModel {
    inner: model::ReconModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: harness::eval::load_model(&path).map_err(to_py)?,
        })
    }

    /// Build an untrained CRNN from a JSON model configuration.
    #[staticmethod]
    #[pyo3(signature = (config_json="{}", seed=0))]
    fn crnn(config_json: &str, seed: u64) -> PyResult<Self> {
        let cfg: model::ReconModelConfig =
            serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyModel {
            inner: model::ReconModel::crnn(cfg, seed).map_err(to_py)?,
        })
    }

    #[getter]
    fn label(&self) -> String {
        harness::eval::model_label(self.inner.config())
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Reconstruct from measured k-space and its mask.
    fn reconstruct<'py>(
        &self,
        py: Python<'py>,
        measured: PyReadonlyArray3<'py, C64>,
        mask: &PyMask,
    ) -> PyResult<Bound<'py, PyArray3<C64>>> {
        let y = kspace_data(measured, Some(mask))?;
        let zf = kspace::adjoint_operator(&y);
        let out = py
            .detach(|| self.inner.reconstruct(&zf, &y))
            .map_err(to_py)?;
        Ok(out.into_data().into_pyarray(py))
    }
}

/// Run a CLI command (`gen-data`, `train`, `eval`, `reconstruct`) and
/// return its JSON summary.
#[pyfunction]
#[pyo3(signature = (command, config=None, overrides=Vec::new()))]
fn run(
    py: Python<'_>,
    command: &str,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let command = match command {
        "gen-data" => Command::GenData,
        "train" => Command::Train,
        "eval" => Command::Eval,
        "reconstruct" => Command::Reconstruct,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let summary = py
        .detach(|| {
            RunConfig::load(config.as_deref(), &overrides)
                .and_then(|cfg| harness::run(command, &cfg))
        })
        .map_err(to_py)?;
    Ok(summary.to_string())
}

#[pymodule]
fn pycinerecon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fft2c, m)?)?;
    m.add_function(wrap_pyfunction!(ifft2c, m)?)?;
    m.add_function(wrap_pyfunction!(forward_operator, m)?)?;
    m.add_function(wrap_pyfunction!(adjoint_operator, m)?)?;
    m.add_function(wrap_pyfunction!(data_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(perp_loss, m)?)?;
    m.add_function(wrap_pyfunction!(l1_split_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ssim_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(challenge_eval, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
