//! Python bindings for the memslice simulator.

use memslice::config::{knee_intensity, roofline_attainable};
use memslice::oracle::Matrix;
use memslice::sim::{run_workload, SimOptions, SimOutput, SimStats};
use memslice::workloads::{preset, ConvSpec, MatmulSpec, TranslatorSpec, Workload, WorkloadSpec};
use memslice::{Error, MemoryKind, SystemConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::ConfigParse { .. } | Error::InvalidConfig(_) | Error::Workload(_) | Error::Shape(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Matrix::from_vec(r, c, rows.concat()).map_err(to_py)
}

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|r| m.data()[r * m.cols()..(r + 1) * m.cols()].to_vec())
        .collect()
}

/// System configuration: slice count, memory preset and compute scale.
#[pyclass(name = "System", from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: SystemConfig,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (slices=16, memory="hmc2", compute_scale=1.0, seed=0))]
    fn new(slices: usize, memory: &str, compute_scale: f64, seed: u64) -> PyResult<Self> {
        let mut inner = SystemConfig::default();
        inner.set_slices(slices);
        inner
            .slice
            .apply_memory_preset(memory.parse::<MemoryKind>().map_err(to_py)?);
        inner.slice.compute_scale = compute_scale;
        inner.seed = seed;
        inner.validate().map_err(to_py)?;
        Ok(PySystem { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = SystemConfig::from_toml_str(text).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(PySystem { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn slices(&self) -> usize {
        self.inner.num_slices
    }

    #[getter]
    fn peak_flops(&self) -> f64 {
        self.inner.peak_flops()
    }

    /// Intensity in FLOP/byte where one slice turns compute-bound.
    #[getter]
    fn knee(&self) -> f64 {
        knee_intensity(&self.inner.slice)
    }

    /// Whole-system roofline bound at `intensity`.
    fn attainable(&self, intensity: f64) -> f64 {
        self.inner.num_slices as f64 * roofline_attainable(&self.inner.slice, intensity)
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "System(slices={}, memory='{}', compute_scale={})",
            s.num_slices,
            s.slice.memory.name(),
            s.slice.compute_scale
        )
    }
}

/// A workload description.
#[pyclass(name = "Workload", from_py_object)]
#[derive(Clone)]
struct PyWorkload {
    spec: WorkloadSpec,
}

#[pymethods]
impl PyWorkload {
    #[staticmethod]
    fn matmul(m: usize, k: usize, n: usize) -> PyResult<Self> {
        let spec = WorkloadSpec::Matmul(MatmulSpec { m, k, n });
        spec.validate().map_err(to_py)?;
        Ok(PyWorkload { spec })
    }

    #[staticmethod]
    #[pyo3(signature = (hidden, layers=1, batch=4, bucket=(2, 2), time_steps=1, eta=0.01, training=false))]
    fn translator(
        hidden: usize,
        layers: usize,
        batch: usize,
        bucket: (usize, usize),
        time_steps: usize,
        eta: f64,
        training: bool,
    ) -> PyResult<Self> {
        let spec = WorkloadSpec::Translator(TranslatorSpec {
            hidden,
            layers,
            batch,
            bucket,
            time_steps,
            eta,
            training,
        });
        spec.validate().map_err(to_py)?;
        Ok(PyWorkload { spec })
    }

    #[staticmethod]
    #[pyo3(signature = (batch, channels, height, width, kernels, kh, kw, stride=1, padding=0))]
    #[allow(clippy::too_many_arguments)]
    fn conv(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        kernels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    ) -> PyResult<Self> {
        let spec = WorkloadSpec::Conv(ConvSpec {
            batch,
            channels,
            height,
            width,
            kernels,
            kh,
            kw,
            stride,
            padding,
        });
        spec.validate().map_err(to_py)?;
        Ok(PyWorkload { spec })
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        preset(name)
            .map(|spec| PyWorkload { spec })
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset `{name}`")))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.spec.name()
    }
}

/// Result of one simulation.
#[pyclass(name = "RunResult")]
struct PyRunResult {
    workload: Workload,
    out: SimOutput,
}

fn stats_dict<'py>(py: Python<'py>, s: &SimStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("workload", &s.workload)?;
    d.set_item("slices", s.slices)?;
    d.set_item("memory", &s.memory)?;
    d.set_item("total_cycles", s.total_cycles)?;
    d.set_item("seconds", s.seconds())?;
    d.set_item("flops", s.activity.flops)?;
    d.set_item("flops_per_s", s.flops_per_second())?;
    d.set_item("flops_per_j", s.flops_per_joule())?;
    d.set_item("intensity", s.intensity())?;
    d.set_item("attainable_flops_per_s", s.attainable_flops)?;
    d.set_item("mem_read_bits", s.activity.mem_read_bits)?;
    d.set_item("mem_write_bits", s.activity.mem_write_bits)?;
    d.set_item("packets", s.packets)?;
    d.set_item("load_iterations", s.load_iterations())?;
    d.set_item("utilization", s.utilization())?;
    d.set_item("energy_memory_j", s.energy.memory)?;
    d.set_item("energy_compute_j", s.energy.compute)?;
    d.set_item("energy_network_j", s.energy.network)?;
    d.set_item("energy_total_j", s.energy.total())?;
    d.set_item("index_mismatches", s.index_mismatches)?;
    Ok(d)
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        stats_dict(py, &self.out.stats)
    }

    fn csv_row(&self) -> String {
        self.out.stats.csv_row()
    }

    #[getter]
    fn trace(&self) -> Option<String> {
        self.out.trace.as_ref().map(|t| t.to_text())
    }

    fn outputs(&self) -> Vec<String> {
        self.workload.outputs.keys().cloned().collect()
    }

    /// Simulated value of a named output as nested lists.
    fn output(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        self.out
            .output(&self.workload, name)
            .map(|m| nested(&m))
            .ok_or_else(|| PyValueError::new_err(format!("no output `{name}`")))
    }

    /// Largest relative error of any output against the reference.
    fn max_error(&self) -> PyResult<f64> {
        let refs = self.workload.reference().map_err(to_py)?;
        Ok(refs
            .iter()
            .filter_map(|(name, r)| self.out.output(&self.workload, name).map(|s| s.rel_error(r)))
            .fold(0.0, f64::max))
    }
}

/// Simulate `workload` on `system`.
#[pyfunction]
#[pyo3(signature = (workload, system, trace=false, functional=true))]
fn run(py: Python<'_>, workload: PyWorkload, system: PySystem, trace: bool, functional: bool) -> PyResult<PyRunResult> {
    let opts = SimOptions { trace, functional };
    let (workload, _, out) = py
        .detach(|| run_workload(&workload.spec, &system.inner, &opts))
        .map_err(to_py)?;
    Ok(PyRunResult { workload, out })
}

/// Reference matrix product in double precision.
#[pyfunction]
fn matmul(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let c = memslice::oracle::matmul(&matrix(a)?, &matrix(b)?).map_err(to_py)?;
    Ok(nested(&c))
}

#[pymodule]
fn pymemslice(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyWorkload>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(matmul, m)?)?;
    Ok(())
}
