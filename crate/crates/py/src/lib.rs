//! Python bindings: specs, testcases, backends, campaigns and code generation.
//!
//! ```python
//! import stitch
//! spec = stitch.Spec.load("xml40.json")
//! result = stitch.fuzz(spec, seed=1, execs=20000)
//! for key, t in result.crashes:
//!     print(key, len(t))
//! ```

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use stitch_core::codegen::{self, NativeBackend, NativeConfig};
use stitch_core::engine::{minimize as minimize_crash, CampaignError};
use stitch_core::outcome::Outcome as CoreOutcome;
use stitch_core::{
    load_spec, parse_spec, run_campaign, wire, Backend, BackendError, BlockId, BlockInstance,
    Budget, CampaignConfig, DedupKey, OutcomeKind, ParamKind, ParamValue,
    Specification, Testcase as CoreTestcase, VirtualBackend as CoreVirtual,
};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn backend_err(e: BackendError) -> PyErr {
    match e {
        BackendError::IllFormed(_) => value_err(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(module = "stitch", frozen)]
pub struct Spec {
    pub inner: Arc<Specification>,
}

#[pymethods]
impl Spec {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Spec> {
        let inner = load_spec(&path).map_err(value_err)?;
        Ok(Spec { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Spec> {
        let inner = parse_spec(text).map_err(value_err)?;
        Ok(Spec { inner: Arc::new(inner) })
    }

    #[getter]
    fn revision(&self) -> u64 {
        self.inner.revision
    }

    #[getter]
    fn blocks(&self) -> Vec<String> {
        self.inner.blocks.iter().map(|b| b.name.clone()).collect()
    }

    #[getter]
    fn types(&self) -> Vec<String> {
        self.inner.types.iter().map(|t| t.name.clone()).collect()
    }

    /// Type name to whether some block sequence can construct it.
    fn constructability(&self) -> Vec<(String, bool)> {
        self.inner.constructability_report().into_iter().collect()
    }

    /// Violations of the well-formedness rules; empty when `t` is well formed.
    fn violations(&self, t: &Testcase) -> Vec<String> {
        match t.inner.validate(&self.inner) {
            Ok(()) => Vec::new(),
            Err(e) if e.violations().is_empty() => vec![e.to_string()],
            Err(e) => e.violations().iter().map(|v| v.to_string()).collect(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Spec({} types, {} blocks, revision {})",
            self.inner.types.len(),
            self.inner.blocks.len(),
            self.inner.revision
        )
    }
}

fn kind_of(name: &str, data: &[u8]) -> PyResult<ParamKind> {
    match name {
        "fixed" => Ok(ParamKind::Fixed(data.len() as u32)),
        "str" => Ok(ParamKind::Str),
        "file" => Ok(ParamKind::File),
        other => Err(value_err(format!("unknown parameter kind {other:?}"))),
    }
}

fn kind_name(k: ParamKind) -> &'static str {
    match k {
        ParamKind::Fixed(_) => "fixed",
        ParamKind::Str => "str",
        ParamKind::File => "file",
    }
}

type InstanceTuple = (u32, Vec<u32>, Vec<(String, Vec<u8>)>);

#[pyclass(module = "stitch", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct Testcase {
    pub inner: CoreTestcase,
}

#[pymethods]
impl Testcase {
    /// `instances` holds `(block, refs, params)` tuples where each parameter
    /// is `(kind, data)` and kind is "fixed", "str" or "file".
    #[new]
    #[pyo3(signature = (instances = Vec::new()))]
    fn new(instances: Vec<InstanceTuple>) -> PyResult<Testcase> {
        let mut out = Vec::with_capacity(instances.len());
        for (block, refs, params) in instances {
            let values = params
                .into_iter()
                .map(|(k, data)| {
                    Ok(ParamValue {
                        kind: kind_of(&k, &data)?,
                        bytes: data,
                    })
                })
                .collect::<PyResult<Vec<_>>>()?;
            out.push(BlockInstance::new(BlockId(block), refs).with_params(values));
        }
        Ok(Testcase {
            inner: CoreTestcase::new(out),
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Testcase> {
        let inner = wire::deserialize_unchecked(data).map_err(value_err)?;
        Ok(Testcase { inner })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &wire::serialize(&self.inner))
    }

    fn instances(&self) -> Vec<InstanceTuple> {
        self.inner
            .instances
            .iter()
            .map(|i| {
                let params = i
                    .params
                    .values
                    .iter()
                    .map(|v| (kind_name(v.kind).to_string(), v.bytes.clone()))
                    .collect();
                (i.block.0, i.refs.clone(), params)
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Testcase({} instances)", self.inner.len())
    }
}

#[pyclass(module = "stitch", frozen, get_all)]
pub struct Outcome {
    /// "completed", "bail", "crash" or "hang".
    pub kind: String,
    pub index: Option<usize>,
    pub crash_id: Option<String>,
    pub coverage: Vec<u32>,
}

#[pymethods]
impl Outcome {
    #[getter]
    fn edges(&self) -> usize {
        self.coverage.len()
    }

    fn __repr__(&self) -> String {
        match (&self.index, &self.crash_id) {
            (Some(i), Some(id)) => format!("Outcome(crash@{i} {id}, {} edges)", self.coverage.len()),
            (Some(i), None) => format!("Outcome(bail@{i}, {} edges)", self.coverage.len()),
            _ => format!("Outcome({}, {} edges)", self.kind, self.coverage.len()),
        }
    }
}

impl From<CoreOutcome> for Outcome {
    fn from(o: CoreOutcome) -> Self {
        let (kind, index, crash_id) = match o.kind {
            OutcomeKind::Completed => ("completed", None, None),
            OutcomeKind::Bail { index } => ("bail", Some(index), None),
            OutcomeKind::Crash { index, crash_id } => ("crash", Some(index), Some(crash_id.to_string())),
            OutcomeKind::Hang => ("hang", None, None),
        };
        Outcome {
            kind: kind.to_string(),
            index,
            crash_id,
            coverage: o.coverage.edges().to_vec(),
        }
    }
}

fn execute_checked(spec: &Specification, b: &dyn Backend, t: &Testcase) -> PyResult<Outcome> {
    t.inner.validate(spec).map_err(value_err)?;
    b.execute(&t.inner).map(Outcome::from).map_err(backend_err)
}

#[pyclass(module = "stitch", frozen)]
pub struct VirtualBackend {
    spec: Arc<Specification>,
    inner: CoreVirtual,
}

#[pymethods]
impl VirtualBackend {
    #[new]
    fn new(spec: &Spec) -> PyResult<VirtualBackend> {
        Ok(VirtualBackend {
            spec: spec.inner.clone(),
            inner: CoreVirtual::new(&spec.inner).map_err(value_err)?,
        })
    }

    fn execute(&self, py: Python<'_>, t: &Testcase) -> PyResult<Outcome> {
        py.detach(|| execute_checked(&self.spec, &self.inner, t))
    }
}

#[pyclass(module = "stitch", frozen)]
pub struct NativeHarness {
    spec: Arc<Specification>,
    inner: NativeBackend,
}

#[pymethods]
impl NativeHarness {
    #[new]
    #[pyo3(signature = (spec, harness, timeout_secs = 5.0))]
    fn new(spec: &Spec, harness: PathBuf, timeout_secs: f64) -> PyResult<NativeHarness> {
        let mut config = NativeConfig::new(harness);
        config.timeout = Duration::try_from_secs_f64(timeout_secs).map_err(value_err)?;
        Ok(NativeHarness {
            spec: spec.inner.clone(),
            inner: NativeBackend::new(config).map_err(backend_err)?,
        })
    }

    fn execute(&self, py: Python<'_>, t: &Testcase) -> PyResult<Outcome> {
        py.detach(|| execute_checked(&self.spec, &self.inner, t))
    }
}

#[pyclass(module = "stitch", frozen, get_all)]
pub struct CampaignResult {
    pub stats_json: String,
    pub executions: u64,
    pub edges: usize,
    pub corpus: Vec<Testcase>,
    /// `(dedup key, minimized testcase)` per unique crash.
    pub crashes: Vec<(String, Testcase)>,
}

#[pymethods]
impl CampaignResult {
    fn __repr__(&self) -> String {
        format!(
            "CampaignResult({} execs, {} edges, {} corpus entries, {} crashes)",
            self.executions,
            self.edges,
            self.corpus.len(),
            self.crashes.len()
        )
    }
}

fn campaign_err(e: CampaignError) -> PyErr {
    match e {
        CampaignError::Backend(b) => backend_err(b),
        other => value_err(other),
    }
}

/// Runs a campaign on the virtual backend, or on `harness` when given.
/// `execs` and `secs` are mutually exclusive; the default is 10^5 executions.
#[pyfunction]
#[pyo3(signature = (spec, seed = 0, execs = None, secs = None, corpus = None, workers = 1, p_hint = None, harness = None))]
#[allow(clippy::too_many_arguments)]
pub fn fuzz(
    py: Python<'_>,
    spec: &Spec,
    seed: u64,
    execs: Option<u64>,
    secs: Option<f64>,
    corpus: Option<PathBuf>,
    workers: usize,
    p_hint: Option<f64>,
    harness: Option<PathBuf>,
) -> PyResult<CampaignResult> {
    let budget = match (execs, secs) {
        (Some(_), Some(_)) => return Err(value_err("give execs or secs, not both")),
        (Some(0), None) => return Err(value_err("execs must be positive")),
        (Some(n), None) => Budget::Executions(n),
        (None, Some(s)) => Budget::Duration(Duration::try_from_secs_f64(s).map_err(value_err)?),
        (None, None) => Budget::Executions(100_000),
    };
    let mut config = CampaignConfig::new(seed, budget);
    config.workers = workers;
    config.corpus_dir = corpus;
    if let Some(p) = p_hint {
        if !(0.0..=1.0).contains(&p) {
            return Err(value_err(format!("p_hint must be within [0, 1], got {p}")));
        }
        config.engine.mutation.p_hint = p;
    }
    let backend: Box<dyn Backend> = match harness {
        Some(h) => Box::new(NativeBackend::new(NativeConfig::new(h)).map_err(backend_err)?),
        None => Box::new(CoreVirtual::new(&spec.inner).map_err(value_err)?),
    };
    let spec = spec.inner.clone();
    let r = py
        .detach(|| run_campaign(spec, backend.as_ref(), &config))
        .map_err(campaign_err)?;
    Ok(CampaignResult {
        stats_json: r.stats.to_json(),
        executions: r.stats.executions,
        edges: r.stats.edges,
        corpus: r
            .corpus
            .into_iter()
            .map(|e| Testcase { inner: e.testcase })
            .collect(),
        crashes: r
            .crashes
            .into_iter()
            .map(|c| (c.key.to_string(), Testcase { inner: c.minimized }))
            .collect(),
    })
}

/// Shrinks a crashing testcase on the virtual backend. Returns the dedup key
/// and the minimized testcase.
#[pyfunction]
#[pyo3(signature = (spec, testcase, max_execs = 10_000))]
pub fn minimize(py: Python<'_>, spec: &Spec, testcase: &Testcase, max_execs: u64) -> PyResult<(String, Testcase)> {
    let vm = CoreVirtual::new(&spec.inner).map_err(value_err)?;
    let first = execute_checked(&spec.inner, &vm, testcase)?;
    let kind = match (first.index, first.crash_id) {
        (Some(index), Some(id)) => OutcomeKind::Crash {
            index,
            crash_id: id.into(),
        },
        _ => return Err(value_err("testcase does not crash")),
    };
    let key = DedupKey::of(&spec.inner, &testcase.inner, &kind).expect("crash has a key");
    let m = py
        .detach(|| minimize_crash(&spec.inner, &vm, &testcase.inner, &key, max_execs))
        .map_err(backend_err)?;
    Ok((key.to_string(), Testcase { inner: m.testcase }))
}

/// Source of the native harness for a spec with C++ code blocks.
#[pyfunction]
pub fn emit_harness(spec: &Spec) -> PyResult<String> {
    codegen::emit_harness(&spec.inner).map(|h| h.text).map_err(value_err)
}

/// `(file name, source)` of a standalone reproducer.
#[pyfunction]
pub fn emit_reproducer(spec: &Spec, testcase: &Testcase) -> PyResult<(String, String)> {
    codegen::emit_reproducer(&spec.inner, &testcase.inner, None)
        .map(|r| (r.file_name, r.text))
        .map_err(value_err)
}

#[pymodule]
pub fn stitch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Spec>()?;
    m.add_class::<Testcase>()?;
    m.add_class::<Outcome>()?;
    m.add_class::<VirtualBackend>()?;
    m.add_class::<NativeHarness>()?;
    m.add_class::<CampaignResult>()?;
    m.add_function(wrap_pyfunction!(fuzz, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(emit_harness, m)?)?;
    m.add_function(wrap_pyfunction!(emit_reproducer, m)?)?;
    m.add("RUNTIME_HEADER", codegen::RUNTIME_HEADER)?;
    Ok(())
}
