//! Python bindings: load or build scenarios, run them, and read back
//! metrics, energy and traces.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};

use uwbsim::energy::EnergyReport;
use uwbsim::phy::{self, FrameTiming, PulseArrival, SlotState};
use uwbsim::scenario::{apply_overrides, ScenarioError};
use uwbsim::trace::{read_trace, TraceWriter};
use uwbsim::{metrics, reference, BerTable as CoreBerTable, SimTime, TraceRecord, TraceSink};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, json: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (json,))
}

fn ticks(seconds: f64) -> PyResult<SimTime> {
    SimTime::from_secs_rounded(seconds).ok_or_else(|| value_error(format!("{seconds} s is not a valid time")))
}

/// Override values arrive as Python objects; they are handed to the TOML
/// override parser as text.
fn override_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = v.cast::<PyBool>() {
        return Ok(if b.is_true() { "true" } else { "false" }.into());
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(s);
    }
    Ok(v.repr()?.to_string())
}

fn overrides(map: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let Some(map) = map else { return Ok(Vec::new()) };
    map.iter().map(|(k, v)| Ok((k.extract::<String>()?, override_text(&v)?))).collect()
}

/// SNR (dB) to bit error probability table, interpolated in the log domain.
#[pyclass(name = "BerTable", module = "pyuwbsim", from_py_object)]
#[derive(Clone)]
struct BerTable(CoreBerTable);

#[pymethods]
impl BerTable {
    #[new]
    fn new(rows: Vec<(f64, f64)>) -> PyResult<Self> {
        CoreBerTable::from_rows(rows).map(BerTable).map_err(value_error)
    }

    /// Parse `snr_db,ber` CSV text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreBerTable::parse(text).map(BerTable).map_err(value_error)
    }

    fn lookup(&self, snr_db: f64) -> f64 {
        self.0.lookup(snr_db)
    }

    #[getter]
    fn rows(&self) -> Vec<(f64, f64)> {
        self.0.rows().to_vec()
    }

    fn to_csv(&self) -> String {
        self.0.to_text()
    }

    fn __repr__(&self) -> String {
        format!("BerTable({} rows)", self.0.rows().len())
    }
}

/// A scenario and the BER table it runs against.
#[pyclass(module = "pyuwbsim", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: uwbsim::Scenario,
    ber: CoreBerTable,
}

#[pymethods]
impl Scenario {
    /// Read a scenario file; its BER table is resolved relative to it.
    #[staticmethod]
    #[pyo3(signature = (path, overrides=None))]
    fn load(path: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let loaded = uwbsim::load(&path, &self::overrides(overrides)?).map_err(value_error)?;
        Ok(Scenario { inner: loaded.scenario, ber: loaded.ber_table })
    }

    #[staticmethod]
    fn from_toml(text: &str, ber_table: &BerTable) -> PyResult<Self> {
        let inner = uwbsim::Scenario::parse(text).map_err(value_error)?;
        Ok(Scenario { inner, ber: ber_table.0.clone() })
    }

    /// One of the built-in reference scenarios, see `reference_names()`.
    #[staticmethod]
    fn reference(name: &str) -> PyResult<Self> {
        let r = reference::by_name()
            .remove(name)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown reference scenario `{name}`")))?;
        Ok(Scenario { inner: r.scenario, ber: r.ber_table })
    }

    /// Copy with dotted-key overrides applied, e.g. `{"mac.retransmission_limit": 5}`.
    fn with_overrides(&self, overrides: &Bound<'_, PyDict>) -> PyResult<Self> {
        let mut doc = toml::Value::try_from(&self.inner).map_err(value_error)?;
        apply_overrides(&mut doc, &self::overrides(Some(overrides))?).map_err(value_error)?;
        let inner: uwbsim::Scenario = doc.try_into().map_err(value_error)?;
        Ok(Scenario { inner, ber: self.ber.clone() })
    }

    /// All validation findings; empty when the scenario is runnable.
    fn validate(&self) -> Vec<String> {
        match self.inner.resolve() {
            Ok(_) => Vec::new(),
            Err(ScenarioError::Invalid(errors)) => errors.iter().map(ToString::to_string).collect(),
            Err(e) => vec![e.to_string()],
        }
    }

    /// TOML with every default spelled out.
    fn to_toml(&self) -> String {
        self.inner.normalized().render()
    }

    #[getter]
    fn ber_table(&self) -> BerTable {
        BerTable(self.ber.clone())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.simulation.seed
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.simulation.duration
    }

    #[getter]
    fn node_ids(&self) -> Vec<u32> {
        self.inner.nodes.iter().map(|n| n.id).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario({} nodes, {} flows, {} s, protocol {})",
            self.inner.nodes.len(),
            self.inner.flows.len(),
            self.inner.simulation.duration,
            self.inner.mac.protocol.as_str()
        )
    }
}

/// Outcome of one run.
#[pyclass(module = "pyuwbsim")]
struct RunResult {
    summary: metrics::MetricsSummary,
    energy: Vec<EnergyReport>,
    records: Vec<TraceRecord>,
    stats: uwbsim::RunStats,
}

#[pymethods]
impl RunResult {
    /// Metrics as nested dicts (same content as `metrics.json`).
    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.summary.to_json())
    }

    #[getter]
    fn metrics_json(&self) -> String {
        self.summary.to_json()
    }

    #[getter]
    fn table(&self) -> String {
        self.summary.to_table()
    }

    /// Per-node ledgers: pulse counts, seconds per slot state and joules.
    #[getter]
    fn energy<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let out = PyList::empty(py);
        for e in &self.energy {
            let d = PyDict::new(py);
            d.set_item("node", e.node)?;
            d.set_item("pulses_tx", e.pulses_tx)?;
            d.set_item("pulses_rx", e.pulses_rx)?;
            let states = PyDict::new(py);
            for s in SlotState::ALL {
                states.set_item(s.as_str(), e.time(s).as_secs_f64())?;
            }
            d.set_item("state_time_s", states)?;
            d.set_item("total_joules", e.total_joules)?;
            out.append(d)?;
        }
        Ok(out)
    }

    #[getter]
    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("events", self.stats.events)?;
        d.set_item("pulse_arrivals", self.stats.pulse_arrivals)?;
        d.set_item("transmissions", self.stats.transmissions)?;
        Ok(d)
    }

    /// The trace as CSV text; empty if the run was made with `trace=False`.
    fn trace_csv(&self) -> PyResult<String> {
        if self.records.is_empty() {
            return Ok(String::new());
        }
        let mut w = TraceWriter::new(Vec::new()).map_err(value_error)?;
        for r in &self.records {
            w.write(r).map_err(value_error)?;
        }
        let bytes = w.finish().map_err(value_error)?;
        String::from_utf8(bytes).map_err(value_error)
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }
}

/// Run a scenario. The GIL is released while the simulation executes.
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, trace=true))]
fn run(py: Python<'_>, scenario: &Scenario, seed: Option<u64>, trace: bool) -> PyResult<RunResult> {
    let mut model = scenario.inner.resolve().map_err(value_error)?;
    if let Some(seed) = seed {
        model.seed = seed;
    }
    let ber = &scenario.ber;
    let sink = if trace { TraceSink::Memory(Vec::new()) } else { TraceSink::Off };
    let out = py
        .detach(|| uwbsim::run(&model, ber, sink))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(RunResult { summary: out.summary, energy: out.energy, records: out.records, stats: out.stats })
}

/// Metrics recomputed from trace CSV text.
#[pyfunction]
fn summarize_trace<'py>(py: Python<'py>, csv: &str) -> PyResult<Bound<'py, PyAny>> {
    let records = read_trace(csv.as_bytes()).map_err(value_error)?;
    json_to_py(py, &metrics::summarize(&records).to_json())
}

#[pyfunction]
fn reference_names() -> Vec<String> {
    reference::catalog().into_iter().map(|r| r.name).collect()
}

/// Frame-relative slot index of time `t` (seconds).
#[pyfunction]
fn current_slot(t: f64, slot_duration: f64, slots_per_frame: u32) -> PyResult<u32> {
    let timing = FrameTiming::new(ticks(slot_duration)?, slots_per_frame).map_err(value_error)?;
    Ok(phy::current_slot(ticks(t)?, &timing))
}

/// Whether pulses arriving at `a` and `b` (seconds) interfere at one receiver.
#[pyfunction]
#[pyo3(signature = (a, b, slot_duration, slots_per_frame, delay_spread=0.0))]
fn pulses_overlap(a: f64, b: f64, slot_duration: f64, slots_per_frame: u32, delay_spread: f64) -> PyResult<bool> {
    let timing = FrameTiming::new(ticks(slot_duration)?, slots_per_frame).map_err(value_error)?;
    let pulse = |t: SimTime, source| PulseArrival { arrival: t, power: 1.0, source, packet: source as u64, bit_index: 0 };
    Ok(phy::pulses_overlap(&pulse(ticks(a)?, 0), &pulse(ticks(b)?, 1), &timing, ticks(delay_spread)?))
}

#[pymodule]
fn pyuwbsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<BerTable>()?;
    m.add_class::<Scenario>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_trace, m)?)?;
    m.add_function(wrap_pyfunction!(reference_names, m)?)?;
    m.add_function(wrap_pyfunction!(current_slot, m)?)?;
    m.add_function(wrap_pyfunction!(pulses_overlap, m)?)?;
    Ok(())
}
