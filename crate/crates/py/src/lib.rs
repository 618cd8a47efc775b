//! Python bindings: configuration, pipeline commands, traces, fixation
//! detection, sequence metrics, spectra and model rollouts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gazegraph::data::prepare_synthetic;
use gazegraph::error::Error;
use gazegraph::metrics::{self, WelchConfig};
use gazegraph::model::Model;
use gazegraph::pipeline::{self, config::to_toml, Command, PipelineConfig, RunOptions, RunStatus};
use gazegraph::post::{self, EYEMMV_T0, EYEMMV_T1, MIN_FIXATION};
use gazegraph::simulate::{multi_run, RolloutConfig};
use gazegraph::synth::read_sequence;
use gazegraph::trace::{GazeTrace, Provenance};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(m) => PyValueError::new_err(m),
        e @ Error::Prerequisite { .. } => PyFileNotFoundError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Pipeline configuration.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: PipelineConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::parse_config_str(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pipeline::parse_config(&path).map_err(py_err)?,
        })
    }

    /// A copy with dotted `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_overrides(&overrides).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        to_toml(&self.inner)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window
    }

    #[getter]
    fn t_d(&self) -> Vec<usize> {
        self.inner.t_d.clone()
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.inner.rate
    }
}

/// Run one pipeline command; returns the written artifact paths.
#[pyfunction]
#[pyo3(signature = (command, config, out, force = false))]
fn run(py: Python<'_>, command: &str, config: &PyConfig, out: PathBuf, force: bool) -> PyResult<Vec<String>> {
    let cmd: Command = command.parse().map_err(py_err)?;
    let opts = RunOptions { out, force };
    let cfg = config.inner.clone();
    let o = py
        .detach(move || pipeline::run_pipeline(cmd, &cfg, &opts))
        .map_err(py_err)?;
    if let RunStatus::Aborted(why) = o.status {
        return Err(PyRuntimeError::new_err(format!("{command} aborted: {why}")));
    }
    Ok(o.outputs.iter().map(|p| o.dir.join(p).display().to_string()).collect())
}

/// Uniformly sampled gaze trace in normalised coordinates.
#[pyclass(name = "Trace", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: GazeTrace,
}

#[pymethods]
impl PyTrace {
    #[new]
    #[pyo3(signature = (points, rate, t_start = 0.0))]
    fn new(points: Vec<(f64, f64)>, rate: f64, t_start: f64) -> PyResult<Self> {
        if !(rate > 0.0) {
            return Err(PyValueError::new_err("rate must be positive"));
        }
        Ok(Self {
            inner: GazeTrace::from_points(&points, rate, t_start, Provenance::Human),
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: gazegraph::graph::io::read_gaze_csv(&path).map_err(py_err)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        gazegraph::graph::io::write_gaze_csv(&path, &self.inner).map_err(py_err)
    }

    /// Blink-filled trace resampled to `rate`.
    fn preprocess(&self, rate: f64) -> PyResult<Self> {
        Ok(Self {
            inner: post::preprocess_gaze(&self.inner, rate).map_err(py_err)?,
        })
    }

    fn points(&self) -> Vec<(f64, f64)> {
        self.inner.points()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.t).collect()
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.inner.rate
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Trace(n={}, rate={})", self.inner.len(), self.inner.rate)
    }
}

#[pyclass(name = "Fixation", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyFixation {
    onset: f64,
    duration: f64,
    x: f64,
    y: f64,
    first: usize,
    last: usize,
}

#[pymethods]
impl PyFixation {
    fn __repr__(&self) -> String {
        format!(
            "Fixation(onset={:.3}, duration={:.3}, x={:.4}, y={:.4})",
            self.onset, self.duration, self.x, self.y
        )
    }
}

#[pyfunction]
#[pyo3(signature = (trace, t0 = EYEMMV_T0, t1 = EYEMMV_T1, min_duration = MIN_FIXATION))]
fn detect_fixations(trace: &PyTrace, t0: f64, t1: f64, min_duration: f64) -> PyResult<Vec<PyFixation>> {
    Ok(post::detect_fixations(&trace.inner, t0, t1, min_duration)
        .map_err(py_err)?
        .into_iter()
        .map(|f| PyFixation {
            onset: f.onset,
            duration: f.duration,
            x: f.x,
            y: f.y,
            first: f.first,
            last: f.last,
        })
        .collect())
}

/// DTW in pixels of a `dims` frame, or in normalised units without `dims`.
#[pyfunction]
#[pyo3(signature = (a, b, dims = None))]
fn dtw(a: &PyTrace, b: &PyTrace, dims: Option<(f64, f64)>) -> PyResult<f64> {
    match dims {
        Some(d) => metrics::dtw_pixels(&a.inner, &b.inner, d),
        None => metrics::dtw(&a.inner, &b.inner),
    }
    .map_err(py_err)
}

#[pyfunction]
fn temporal_correlation(a: &PyTrace, b: &PyTrace) -> PyResult<f64> {
    metrics::temporal_correlation(&a.inner, &b.inner).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (a, b, grid = metrics::LEV_GRID))]
fn levenshtein(a: &PyTrace, b: &PyTrace, grid: (usize, usize)) -> usize {
    metrics::levenshtein_scanpath(&a.inner, &b.inner, grid)
}

/// Group-residual PSD as `(freqs, psd)`.
#[pyfunction]
fn residual_psd(traces: Vec<PyTrace>, rate: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let group: Vec<GazeTrace> = traces.into_iter().map(|t| t.inner).collect();
    let p = metrics::residual_psd(&group, rate, &WelchConfig::default()).map_err(py_err)?;
    Ok((p.freqs, p.psd))
}

/// Trained model checkpoint.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut inner = Model::load(&path).map_err(py_err)?;
        inner.register_all_edge_types().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Roll out `runs` traces over a generated sequence directory, warmed up
    /// on the recorded gaze of its first `window` steps.
    #[pyo3(signature = (sequence_dir, horizon, runs = 1, seed = 0, window = 10, offsets = vec![1, 2, 4, 8], rate = 20.0))]
    #[allow(clippy::too_many_arguments)]
    fn simulate(
        &self,
        py: Python<'_>,
        sequence_dir: PathBuf,
        horizon: usize,
        runs: usize,
        seed: u64,
        window: usize,
        offsets: Vec<usize>,
        rate: f64,
    ) -> PyResult<Vec<PyTrace>> {
        let cfg = RolloutConfig {
            horizon,
            runs,
            seed,
            window,
            offsets,
            rate,
            ..RolloutConfig::default()
        };
        let out = py
            .detach(|| {
                let seq = read_sequence(&sequence_dir)?;
                let p = prepare_synthetic(&seq, rate)?;
                multi_run(
                    &self.inner,
                    &p.frames,
                    &cfg,
                    &gazegraph::graph::GridAppearance::default(),
                )
            })
            .map_err(py_err)?;
        Ok(out.into_iter().map(|r| PyTrace { inner: r.trace }).collect())
    }
}

#[pymodule]
fn gazegraph_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyFixation>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(detect_fixations, m)?)?;
    m.add_function(wrap_pyfunction!(dtw, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(residual_psd, m)?)?;
    Ok(())
}
