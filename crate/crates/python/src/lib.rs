//! Python module `apmm`: matrices, conversions, the GEMM engine, the
//! reference product, kernel configs and tuning tables.

use apmm_core::bench::demo_quant_layer;
use apmm_core::bipolar;
use apmm_core::engine::{default_workers, Engine, GemmProblem};
use apmm_core::format;
use apmm_core::oracle;
use apmm_core::tuner::{self, Limits, DEFAULT_SCRATCH_BUDGET};
use apmm_core::{Encoding, Error, IntMatrix, KernelConfig, OutputMatrix, ProblemKey, QuantParams, TuningTable};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_encoding(name: &str) -> PyResult<Encoding> {
    match name {
        "signed" => Ok(Encoding::SignedInt),
        "bipolar" => Ok(Encoding::BipolarInt),
        _ => Err(PyValueError::new_err(format!(
            "encoding must be 'signed' or 'bipolar', got '{name}'"
        ))),
    }
}

fn rows_of(y: &OutputMatrix<i64>) -> Vec<Vec<i64>> {
    (0..y.rows).map(|r| y.row(r).to_vec()).collect()
}

#[pyclass(name = "IntMatrix", module = "apmm")]
struct PyIntMatrix {
    inner: IntMatrix,
}

#[pymethods]
impl PyIntMatrix {
    /// `data` is row-major element values.
    #[new]
    fn new(rows: usize, cols: usize, bits: u32, encoding: &str, data: Vec<i16>) -> PyResult<Self> {
        let inner = IntMatrix::new(rows, cols, bits, parse_encoding(encoding)?, data).map_err(to_py)?;
        Ok(PyIntMatrix { inner })
    }

    #[staticmethod]
    fn random(rows: usize, cols: usize, bits: u32, encoding: &str, seed: u64) -> PyResult<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inner = IntMatrix::random(&mut rng, rows, cols, bits, parse_encoding(encoding)?)
            .map_err(to_py)?;
        Ok(PyIntMatrix { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyIntMatrix {
            inner: format::read_matrix(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        format::write_matrix(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    #[getter]
    fn bits(&self) -> u32 {
        self.inner.bits()
    }

    #[getter]
    fn encoding(&self) -> String {
        self.inner.encoding().to_string()
    }

    fn to_list(&self) -> Vec<Vec<i16>> {
        (0..self.inner.rows()).map(|r| self.inner.row(r).to_vec()).collect()
    }

    fn to_bipolar(&self) -> PyResult<Self> {
        Ok(PyIntMatrix {
            inner: bipolar::signed_to_bipolar(&self.inner).map_err(to_py)?,
        })
    }

    fn to_signed(&self) -> PyResult<Self> {
        Ok(PyIntMatrix {
            inner: bipolar::bipolar_to_signed(&self.inner).map_err(to_py)?,
        })
    }

    fn __eq__(&self, other: PyRef<'_, PyIntMatrix>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "IntMatrix({}x{}, bits={}, {})",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.bits(),
            self.inner.encoding()
        )
    }
}

#[pyclass(name = "KernelConfig", module = "apmm")]
struct PyKernelConfig {
    inner: KernelConfig,
}

#[pymethods]
impl PyKernelConfig {
    /// Parses `b_m=..,b_n=..,...`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyKernelConfig {
            inner: text.parse().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn default(p: u32, q: u32) -> Self {
        PyKernelConfig {
            inner: KernelConfig::default_for(p, q, DEFAULT_SCRATCH_BUDGET),
        }
    }

    fn validate(&self, p: u32, q: u32) -> PyResult<()> {
        self.inner.validate(p, q).map_err(to_py)
    }

    fn scratch_bytes(&self, p: u32, q: u32) -> usize {
        self.inner.scratch_bytes(p, q)
    }

    /// Field name to value.
    fn fields<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.inner;
        let d = PyDict::new(py);
        let values = [c.b_m, c.b_n, c.b_k, c.t_r, c.t_c, c.w_b, c.w_m, c.w_n, c.w_k];
        for (name, v) in KernelConfig::FIELD_NAMES.iter().zip(values) {
            d.set_item(name, v)?;
        }
        Ok(d)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("KernelConfig('{}')", self.inner)
    }

    fn __eq__(&self, other: PyRef<'_, PyKernelConfig>) -> bool {
        self.inner == other.inner
    }
}

#[pyclass(name = "TuningTable", module = "apmm")]
struct PyTuningTable {
    inner: TuningTable,
}

#[pymethods]
impl PyTuningTable {
    #[new]
    fn new() -> Self {
        PyTuningTable {
            inner: TuningTable::new(),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTuningTable {
            inner: format::read_table(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        format::write_table(path, &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Returns `((m, n, k, p, q), config, throughput)` for the stored key
    /// or the nearest one.
    fn lookup(
        &self,
        m: usize,
        n: usize,
        k: usize,
        p: u32,
        q: u32,
    ) -> PyResult<((usize, usize, usize, u32, u32), PyKernelConfig, f64)> {
        let (hit, entry) = tuner::lookup(&ProblemKey { m, n, k, p, q }, &self.inner).map_err(to_py)?;
        Ok((
            (hit.m, hit.n, hit.k, hit.p, hit.q),
            PyKernelConfig {
                inner: entry.config,
            },
            entry.throughput,
        ))
    }
}

/// `x` (M x K) times `w` (N x K) transposed on the bit-plane engine.
#[pyfunction]
#[pyo3(signature = (x, w, config=None, workers=None))]
fn gemm(
    x: PyRef<'_, PyIntMatrix>,
    w: PyRef<'_, PyIntMatrix>,
    config: Option<PyRef<'_, PyKernelConfig>>,
    workers: Option<usize>,
) -> PyResult<Vec<Vec<i64>>> {
    let (x, w) = (&x.inner, &w.inner);
    let cfg = match config {
        Some(c) => c.inner,
        None => KernelConfig::default_for(x.bits(), w.bits(), DEFAULT_SCRATCH_BUDGET),
    };
    let problem = GemmProblem::new(x, w, cfg).map_err(to_py)?;
    let engine = Engine::new(workers.unwrap_or_else(default_workers));
    Ok(rows_of(&engine.gemm_wide(&problem).map_err(to_py)?))
}

/// Reference product by the plain triple loop.
#[pyfunction]
fn oracle_matmul(x: PyRef<'_, PyIntMatrix>, w: PyRef<'_, PyIntMatrix>) -> PyResult<Vec<Vec<i64>>> {
    Ok(rows_of(&oracle::oracle_matmul(&x.inner, &w.inner).map_err(to_py)?))
}

/// Times every candidate config for the shape, stores the best in
/// `table` and returns it.
#[pyfunction]
#[pyo3(signature = (m, n, k, p, q, table, trials=3, workers=None))]
#[allow(clippy::too_many_arguments)]
fn tune(
    m: usize,
    n: usize,
    k: usize,
    p: u32,
    q: u32,
    mut table: PyRefMut<'_, PyTuningTable>,
    trials: usize,
    workers: Option<usize>,
) -> PyResult<PyKernelConfig> {
    let limits = Limits {
        scratch_budget: DEFAULT_SCRATCH_BUDGET,
        max_workers: workers.unwrap_or_else(default_workers),
    };
    let outcome = tuner::tune(ProblemKey { m, n, k, p, q }, trials, &limits, &mut table.inner)
        .map_err(to_py)?;
    Ok(PyKernelConfig {
        inner: outcome.best.config,
    })
}

#[pyfunction]
fn bipolar_value(code: u8, bits: u32) -> PyResult<i32> {
    if !(1..=8).contains(&bits) {
        return Err(to_py(Error::InvalidBitWidth(bits)));
    }
    Ok(bipolar::bipolar_value(code, bits))
}

/// Rewrites per-tensor signed parameters for bipolar codes. Returns
/// `(scale, zero, zero_lo)`; the new zero is exactly `zero + zero_lo`.
#[pyfunction]
fn rewrite_quant_params(scale: f64, zero: f64) -> PyResult<(f64, f64, f64)> {
    let rewritten = bipolar::rewrite_quant_params(&QuantParams::per_tensor(scale, zero).map_err(to_py)?);
    let (hi, lo) = rewritten.zero_parts(0);
    Ok((rewritten.scale(0), hi, lo))
}

/// Correctly rounded `scale * code + (zero + zero_lo)`.
#[pyfunction]
#[pyo3(signature = (scale, zero, code, zero_lo=0.0))]
fn dequantize(scale: f64, zero: f64, code: i64, zero_lo: f64) -> PyResult<f64> {
    let params = QuantParams::with_exact_zeros(
        apmm_core::Granularity::PerTensor,
        vec![scale],
        vec![zero],
        vec![zero_lo],
    )
    .map_err(to_py)?;
    Ok(params.dequantize(code, 0))
}

/// Runs the quantized-layer demo; returns a summary dict.
#[pyfunction]
fn demo<'py>(
    py: Python<'py>,
    rows: usize,
    cols: usize,
    p: u32,
    q: u32,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = demo_quant_layer(rows, cols, p, q, seed).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("max_abs_error", report.max_abs_error)?;
    d.set_item("paths_identical", report.paths_identical())?;
    d.set_item("bipolar", report.bipolar.data.clone())?;
    d.set_item("reference", report.reference.data.clone())?;
    Ok(d)
}

#[pymodule]
fn apmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntMatrix>()?;
    m.add_class::<PyKernelConfig>()?;
    m.add_class::<PyTuningTable>()?;
    m.add_function(wrap_pyfunction!(gemm, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(bipolar_value, m)?)?;
    m.add_function(wrap_pyfunction!(rewrite_quant_params, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(demo, m)?)?;
    Ok(())
}
