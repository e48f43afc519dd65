//! Python bindings: rasters, preprocessing, the two proposal models, label
//! selection, RCAP and the experiment runners.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use labelqa::baseline::{fit_baseline, predict_baseline, BaselineModel, RegionalProposals};
use labelqa::dataset::{generate_synthetic_stack, AnnotatorBias, SynthConfig};
use labelqa::harness::{run_rcap_eval, run_segmentation_eval, run_selection, ExperimentConfig};
use labelqa::metrics;
use labelqa::paresn::{fit_paresn, predict_paresn, read_model, write_model, EsnHyperParams, ParEsnModel};
use labelqa::preprocess::{
    preprocess_with, BottomHatParams, PreprocessConfig, PreprocessedPlanes, DEFAULT_SD, PLANE_SIZE,
};
use labelqa::raster::{BinaryMask, GrayImage};
use labelqa::rcap::RcapConfig;
use labelqa::tlsa::{TlsaConfig, TlsaDecision};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: labelqa::Error) -> PyErr {
    match e {
        labelqa::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Grayscale raster with values in [0, 1], row-major.
#[pyclass(name = "GrayImage", module = "labelqa", skip_from_py_object)]
#[derive(Clone)]
struct PyGrayImage(GrayImage);

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<f64>) -> PyResult<Self> {
        GrayImage::new(width, height, pixels).map(Self).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn pixels(&self) -> Vec<f64> {
        self.0.pixels().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        self.0.get(row, col)
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.0.width(), self.0.height())
    }
}

/// Boolean raster, row-major.
#[pyclass(name = "BinaryMask", module = "labelqa", skip_from_py_object)]
#[derive(Clone)]
struct PyBinaryMask(BinaryMask);

#[pymethods]
impl PyBinaryMask {
    #[new]
    fn new(width: usize, height: usize, bits: Vec<bool>) -> PyResult<Self> {
        BinaryMask::new(width, height, bits).map(Self).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn bits(&self) -> Vec<bool> {
        self.0.bits().to_vec()
    }

    fn count(&self) -> usize {
        self.0.count()
    }

    fn get(&self, row: usize, col: usize) -> bool {
        self.0.get(row, col)
    }

    fn __eq__(&self, other: PyRef<'_, PyBinaryMask>) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("BinaryMask({}x{}, {} set)", self.0.width(), self.0.height(), self.0.count())
    }
}

/// Input planes and ROI of one image.
#[pyclass(name = "Planes", module = "labelqa", skip_from_py_object)]
#[derive(Clone)]
struct PyPlanes(PreprocessedPlanes);

#[pymethods]
impl PyPlanes {
    #[getter]
    fn base(&self) -> PyGrayImage {
        PyGrayImage(self.0.base.clone())
    }

    #[getter]
    fn bottom_hat(&self) -> PyGrayImage {
        PyGrayImage(self.0.bottom_hat.clone())
    }

    #[getter]
    fn grad_mag(&self) -> PyGrayImage {
        PyGrayImage(self.0.grad_mag.clone())
    }

    #[getter]
    fn grad_dir(&self) -> PyGrayImage {
        PyGrayImage(self.0.grad_dir.clone())
    }

    #[getter]
    fn roi(&self) -> PyBinaryMask {
        PyBinaryMask(self.0.roi.clone())
    }
}

/// Three proposals for one image.
#[pyclass(name = "RegionalProposals", module = "labelqa", skip_from_py_object)]
#[derive(Clone)]
struct PyProposals(RegionalProposals);

#[pymethods]
impl PyProposals {
    #[new]
    fn new(p1: PyRef<'_, PyBinaryMask>, p2: PyRef<'_, PyBinaryMask>, p3: PyRef<'_, PyBinaryMask>) -> PyResult<Self> {
        RegionalProposals::new(p1.0.clone(), p2.0.clone(), p3.0.clone())
            .map(Self)
            .map_err(err)
    }

    fn masks(&self) -> (PyBinaryMask, PyBinaryMask, PyBinaryMask) {
        (
            PyBinaryMask(self.0.p1.clone()),
            PyBinaryMask(self.0.p2.clone()),
            PyBinaryMask(self.0.p3.clone()),
        )
    }
}

/// One synthetic image with both labels and the ground truth.
#[pyclass(name = "ImageRecord", module = "labelqa", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyRecord {
    id: String,
    index_in_stack: usize,
    image: PyGrayImage,
    g1: PyBinaryMask,
    g2: PyBinaryMask,
    ground_truth: Option<PyBinaryMask>,
}

#[pyclass(name = "TlsaDecision", module = "labelqa")]
struct PyDecision(TlsaDecision);

#[pymethods]
impl PyDecision {
    /// "Manual", "G1" or "G2".
    #[getter]
    fn tau(&self) -> String {
        format!("{:?}", self.0.tau)
    }

    #[getter]
    fn ratio_mu(&self) -> f64 {
        self.0.ratio_mu
    }

    #[getter]
    fn ratio_v(&self) -> f64 {
        self.0.ratio_v
    }

    #[getter]
    fn eta(&self) -> u8 {
        self.0.eta
    }

    #[getter]
    fn phi_pi(&self) -> f64 {
        self.0.report.phi_pi
    }

    #[getter]
    fn psi_star(&self) -> (usize, usize) {
        (self.0.report.psi_star[0], self.0.report.psi_star[1])
    }

    #[getter]
    fn branch_taken(&self) -> PyResult<String> {
        let v = serde_json::to_value(self.0.branch_taken).map_err(json_err)?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!("TlsaDecision(tau={:?}, branch={:?})", self.0.tau, self.0.branch_taken)
    }
}

#[pyclass(name = "BaselineModel", module = "labelqa")]
struct PyBaseline(BaselineModel);

#[pymethods]
impl PyBaseline {
    #[getter]
    fn s_d(&self) -> usize {
        self.0.s_d
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.0.theta
    }

    #[getter]
    fn auc(&self) -> f64 {
        self.0.auc
    }

    fn predict(&self, planes: PyRef<'_, PyPlanes>) -> PyResult<PyProposals> {
        predict_baseline(&self.0, &planes.0).map(PyProposals).map_err(err)
    }
}

#[pyclass(name = "ParEsnModel", module = "labelqa")]
struct PyParEsn(ParEsnModel);

#[pymethods]
impl PyParEsn {
    #[getter]
    fn images_consumed(&self) -> usize {
        self.0.images_consumed
    }

    #[getter]
    fn ssim_history(&self) -> Vec<f64> {
        self.0.ssim_history.clone()
    }

    fn predict(&self, planes: PyRef<'_, PyPlanes>) -> PyResult<PyProposals> {
        predict_paresn(&self.0, &planes.0).map(PyProposals).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write_model(&mut out, &self.0).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut input = BufReader::new(File::open(path)?);
        read_model(&mut input).map(Self).map_err(err)
    }
}

fn training_pairs(train: Vec<(PyRef<'_, PyPlanes>, PyRef<'_, PyBinaryMask>)>) -> Vec<(PreprocessedPlanes, BinaryMask)> {
    train.into_iter().map(|(p, t)| (p.0.clone(), t.0.clone())).collect()
}

/// Input planes at `size x size`; masks must be resized to match.
#[pyfunction]
#[pyo3(signature = (img, size=PLANE_SIZE, s_d=DEFAULT_SD))]
fn preprocess(img: PyRef<'_, PyGrayImage>, size: usize, s_d: usize) -> PyResult<PyPlanes> {
    let cfg = PreprocessConfig {
        size,
        bottom_hat: BottomHatParams { s_d },
    };
    preprocess_with(&img.0, &cfg).map(PyPlanes).map_err(err)
}

#[pyfunction]
fn iou(a: PyRef<'_, PyBinaryMask>, b: PyRef<'_, PyBinaryMask>) -> PyResult<f64> {
    metrics::iou(&a.0, &b.0).map_err(err)
}

/// Dict of dc, iou, sen, spec and acc computed inside `roi`.
#[pyfunction]
fn segmentation_scores<'py>(
    py: Python<'py>,
    pred: PyRef<'_, PyBinaryMask>,
    target: PyRef<'_, PyBinaryMask>,
    roi: PyRef<'_, PyBinaryMask>,
) -> PyResult<Bound<'py, PyDict>> {
    let s = metrics::confusion(&pred.0, &target.0, &roi.0).map_err(err)?.scores();
    let d = PyDict::new(py);
    d.set_item("dc", s.dc)?;
    d.set_item("iou", s.iou)?;
    d.set_item("sen", s.sen)?;
    d.set_item("spec", s.spec)?;
    d.set_item("acc", s.acc)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (num_images=40, image_size=300, seed=0, g2_dilate_px=0, g2_miss_small_below_px=0))]
fn synthetic_stack(
    num_images: usize,
    image_size: usize,
    seed: u64,
    g2_dilate_px: usize,
    g2_miss_small_below_px: usize,
) -> PyResult<Vec<PyRecord>> {
    let cfg = SynthConfig {
        num_images,
        image_size,
        rng_seed: seed,
        annotator_bias: [
            AnnotatorBias::default(),
            AnnotatorBias {
                dilate_px: g2_dilate_px,
                miss_small_below_px: g2_miss_small_below_px,
            },
        ],
        ..SynthConfig::default()
    };
    let records = generate_synthetic_stack(&cfg).map_err(err)?;
    Ok(records
        .into_iter()
        .map(|r| PyRecord {
            id: r.id,
            index_in_stack: r.index_in_stack,
            image: PyGrayImage(r.image),
            g1: PyBinaryMask(r.g1),
            g2: PyBinaryMask(r.g2),
            ground_truth: r.ground_truth.map(PyBinaryMask),
        })
        .collect())
}

/// Fits the global-threshold baseline on `[(planes, target), ...]`.
#[pyfunction]
fn fit_baseline_model(train: Vec<(PyRef<'_, PyPlanes>, PyRef<'_, PyBinaryMask>)>) -> PyResult<PyBaseline> {
    fit_baseline(&training_pairs(train)).map(PyBaseline).map_err(err)
}

/// Fits a ParESN on `[(planes, target), ...]` in order.
#[pyfunction]
#[pyo3(signature = (train, m=100, w_m=100, alpha=0.95, lam=1e-5, branches=3, seed=0))]
fn fit_paresn_model(
    train: Vec<(PyRef<'_, PyPlanes>, PyRef<'_, PyBinaryMask>)>,
    m: usize,
    w_m: usize,
    alpha: f64,
    lam: f64,
    branches: usize,
    seed: u64,
) -> PyResult<PyParEsn> {
    let hp = EsnHyperParams {
        m,
        w_m,
        alpha,
        lambda: lam,
        branches,
        rng_seed: seed,
        ..EsnHyperParams::default()
    };
    fit_paresn(&hp, &training_pairs(train)).map(PyParEsn).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (rps, t1, t2, img, delta1=0.4, delta2=1.1, delta3=1.02, w=100))]
#[allow(clippy::too_many_arguments)]
fn tlsa(
    rps: PyRef<'_, PyProposals>,
    t1: PyRef<'_, PyBinaryMask>,
    t2: PyRef<'_, PyBinaryMask>,
    img: PyRef<'_, PyGrayImage>,
    delta1: f64,
    delta2: f64,
    delta3: f64,
    w: usize,
) -> PyResult<PyDecision> {
    let cfg = TlsaConfig {
        delta1,
        delta2,
        delta3,
        w,
    };
    cfg.validate().map_err(err)?;
    labelqa::tlsa::tlsa(&rps.0, &t1.0, &t2.0, &img.0, &cfg)
        .map(PyDecision)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (mask, w=40, kappa=1, seed=0, offset_paste=false))]
fn rcap(mask: PyRef<'_, PyBinaryMask>, w: usize, kappa: usize, seed: u64, offset_paste: bool) -> PyResult<PyBinaryMask> {
    let cfg = RcapConfig {
        w,
        kappa,
        rng_seed: seed,
        offset_paste,
    };
    labelqa::rcap::rcap(&mask.0, &cfg).map(PyBinaryMask).map_err(err)
}

fn config_from_text(text: &str) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(text).map_err(err)?;
    Ok(cfg)
}

/// Runs label selection from `key = value` config text; returns the summary as JSON.
#[pyfunction]
fn run_selection_json(config: &str) -> PyResult<String> {
    let report = run_selection(&config_from_text(config)?).map_err(err)?;
    serde_json::to_string(&report.summary).map_err(json_err)
}

#[pyfunction]
fn run_segmentation_eval_json(config: &str) -> PyResult<String> {
    let report = run_segmentation_eval(&config_from_text(config)?).map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pyfunction]
fn run_rcap_eval_json(config: &str) -> PyResult<String> {
    let report = run_rcap_eval(&config_from_text(config)?).map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pymodule(name = "labelqa")]
fn labelqa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyBinaryMask>()?;
    m.add_class::<PyPlanes>()?;
    m.add_class::<PyProposals>()?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyDecision>()?;
    m.add_class::<PyBaseline>()?;
    m.add_class::<PyParEsn>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(segmentation_scores, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_stack, m)?)?;
    m.add_function(wrap_pyfunction!(fit_baseline_model, m)?)?;
    m.add_function(wrap_pyfunction!(fit_paresn_model, m)?)?;
    m.add_function(wrap_pyfunction!(tlsa, m)?)?;
    m.add_function(wrap_pyfunction!(rcap, m)?)?;
    m.add_function(wrap_pyfunction!(run_selection_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_segmentation_eval_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_rcap_eval_json, m)?)?;
    Ok(())
}
