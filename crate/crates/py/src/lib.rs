//! Python bindings: correlation models, precoder design, PEP bounds and the
//! Monte Carlo link engine.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use stfbc_core::channel::{self, CorrelationModel};
use stfbc_core::link::{self, Scheme};
use stfbc_core::precoder::{self, CodewordDistance, EffectiveSinr, EigenSpectrum, PowerRule};
use stfbc_core::{cli, Error};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.class()))
}

fn rule_from(name: &str) -> PyResult<PowerRule> {
    match name {
        "waterfill" | "water-filling" => Ok(PowerRule::WaterFilling),
        "equal" => Ok(PowerRule::EqualPower),
        "single-beam" => Ok(PowerRule::SingleBeam),
        _ => Err(PyValueError::new_err(format!(
            "unknown power rule `{name}` (waterfill, equal, single-beam)"
        ))),
    }
}

fn scheme_from(label: &str) -> PyResult<Scheme> {
    Scheme::from_label(label).ok_or_else(|| PyValueError::new_err(format!("unknown scheme `{label}`")))
}

fn rows(m: &stfbc_core::CMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Link configuration; every field is a keyword argument.
#[pyclass(name = "SystemConfig", from_py_object)]
#[derive(Clone)]
struct PySystemConfig {
    inner: link::SystemConfig,
}

#[pymethods]
impl PySystemConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut pairs = Vec::new();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                pairs.push((k.extract::<String>()?, v.str()?.to_string()));
            }
        }
        let spec = cli::parse_config("", &pairs).map_err(py_err)?;
        Ok(Self { inner: spec.config })
    }

    #[getter]
    fn n_c(&self) -> usize {
        self.inner.n_c
    }
    #[getter]
    fn n_v(&self) -> usize {
        self.inner.n_v
    }
    #[getter]
    fn n_t(&self) -> usize {
        self.inner.n_t
    }
    #[getter]
    fn n_u(&self) -> usize {
        self.inner.n_u
    }
    #[getter]
    fn l_taps(&self) -> usize {
        self.inner.l_taps
    }
    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }
    #[getter]
    fn noise_var(&self) -> f64 {
        self.inner.noise_var
    }
    #[getter]
    fn kappa(&self) -> f64 {
        self.inner.kappa
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn trials(&self) -> u64 {
        self.inner.trials
    }

    fn snr_db(&self) -> f64 {
        self.inner.snr_db()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// `R_0(m, n) = κ^|m-n|` as nested lists.
#[pyfunction]
fn correlation_matrix(kappa: f64, n_t: usize) -> PyResult<Vec<Vec<Complex64>>> {
    channel::exponential_correlation(kappa, n_t).map(|m| rows(&m)).map_err(py_err)
}

/// Eigenvalues of `R_0`, descending.
#[pyfunction]
fn correlation_eigenvalues(kappa: f64, n_t: usize) -> PyResult<Vec<f64>> {
    CorrelationModel::exponential(kappa, n_t, 1)
        .map(|m| m.eigenvalues().to_vec())
        .map_err(py_err)
}

/// Water-filling over gains `a_i`; returns `(powers, level)`.
#[pyfunction]
fn waterfill(gains: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    precoder::waterfill_gains(&gains).map(|w| (w.powers, w.level)).map_err(py_err)
}

struct Design {
    model: CorrelationModel,
    dist: CodewordDistance,
    sinr: EffectiveSinr,
    prec: precoder::Precoder,
}

#[allow(clippy::too_many_arguments)]
fn design(kappa: f64, n_t: usize, taps: usize, n_v: usize, eta: f64, m: usize, mu0: f64, rule: &str) -> PyResult<Design> {
    let model = CorrelationModel::exponential(kappa, n_t, taps).map_err(py_err)?;
    let dist = CodewordDistance::ostbc(mu0, m).map_err(py_err)?;
    let sinr = EffectiveSinr::from_eta(eta, taps, n_v).map_err(py_err)?;
    let prec = precoder::statistical_precoder(&model, &dist, &sinr, n_v, rule_from(rule)?).map_err(py_err)?;
    Ok(Design { model, dist, sinr, prec })
}

/// Statistical precoder; returns `(powers, F)` with `F` as nested lists.
#[pyfunction]
#[pyo3(signature = (kappa, n_t, eta, taps=1, n_v=8, m=2, mu0=0.4, rule="waterfill"))]
#[allow(clippy::too_many_arguments)]
fn statistical_precoder(
    kappa: f64,
    n_t: usize,
    eta: f64,
    taps: usize,
    n_v: usize,
    m: usize,
    mu0: f64,
    rule: &str,
) -> PyResult<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let d = design(kappa, n_t, taps, n_v, eta, m, mu0, rule)?;
    Ok((d.prec.powers(), rows(&d.prec.matrix())))
}

/// Closed-form average PEP bound of the statistical precoder.
#[pyfunction]
#[pyo3(signature = (kappa, n_t, eta, taps=1, n_v=8, m=2, mu0=0.4, rule="waterfill"))]
#[allow(clippy::too_many_arguments)]
fn pep_bound(kappa: f64, n_t: usize, eta: f64, taps: usize, n_v: usize, m: usize, mu0: f64, rule: &str) -> PyResult<f64> {
    let d = design(kappa, n_t, taps, n_v, eta, m, mu0, rule)?;
    precoder::pep_bound(&d.prec, &d.dist, &d.model, &d.sinr, n_v).map_err(py_err)
}

/// High-SNR coding gain of the statistical precoder.
#[pyfunction]
#[pyo3(signature = (kappa, n_t, eta, taps=1, n_v=8, m=2, mu0=0.4, rule="waterfill"))]
#[allow(clippy::too_many_arguments)]
fn coding_gain(kappa: f64, n_t: usize, eta: f64, taps: usize, n_v: usize, m: usize, mu0: f64, rule: &str) -> PyResult<f64> {
    let d = design(kappa, n_t, taps, n_v, eta, m, mu0, rule)?;
    let spectrum = EigenSpectrum::from_model(&d.model, m).map_err(py_err)?;
    precoder::coding_gain(&d.prec.powers(), &d.dist, &spectrum, taps, n_v).map_err(py_err)
}

/// Least-squares slope of `-ln P` against `ln η` over `(η, P)` pairs.
#[pyfunction]
fn diversity_slope(points: Vec<(f64, f64)>) -> PyResult<f64> {
    precoder::diversity_slope(&points).map_err(py_err)
}

/// Despread MUI variance for a scheme label.
#[pyfunction]
fn estimate_mui_variance(config: &PySystemConfig, scheme: &str) -> PyResult<f64> {
    link::estimate_mui_variance(&config.inner, scheme_from(scheme)?)
        .map(|m| m.variance)
        .map_err(py_err)
}

/// SER sweep; one dict per (scheme, SNR) point.
#[pyfunction]
#[pyo3(signature = (config, schemes, snr_grid_db, min_errors=300))]
fn run_ser_sweep<'py>(
    py: Python<'py>,
    config: &PySystemConfig,
    schemes: Vec<String>,
    snr_grid_db: Vec<f64>,
    min_errors: u64,
) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
    let schemes: Vec<Scheme> = schemes.iter().map(|s| scheme_from(s)).collect::<PyResult<_>>()?;
    let cfg = config.inner.clone();
    let curves = py
        .detach(|| link::run_ser_sweep(&cfg, &schemes, &snr_grid_db, min_errors))
        .map_err(py_err)?;
    let mut out = Vec::new();
    for c in &curves {
        for p in &c.points {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("scheme", c.scheme.label())?;
            d.set_item("kappa", c.kappa)?;
            d.set_item("snr_db", p.snr_db)?;
            d.set_item("ser", p.ser)?;
            d.set_item("ci_half_width", p.ci_half_width)?;
            d.set_item("symbol_errors", p.symbol_errors)?;
            d.set_item("symbols", p.symbols_sent)?;
            d.set_item("trials", p.frames)?;
            out.push(d);
        }
    }
    Ok(out)
}

/// Run an experiment from config text (same format as the CLI) and return
/// the CSV output with its provenance header.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_text: &str) -> PyResult<String> {
    let spec = cli::parse_config(config_text, &[]).map_err(py_err)?;
    py.detach(|| cli::render(&spec)).map_err(py_err)
}

#[pymodule]
fn stfbc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystemConfig>()?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(waterfill, m)?)?;
    m.add_function(wrap_pyfunction!(statistical_precoder, m)?)?;
    m.add_function(wrap_pyfunction!(pep_bound, m)?)?;
    m.add_function(wrap_pyfunction!(coding_gain, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_slope, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mui_variance, m)?)?;
    m.add_function(wrap_pyfunction!(run_ser_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
