//! Python bindings. Quantities are SI throughout (V, Ω, F, s, A).

use memneuron::boundary::{all_boundaries, compare_boundaries, BoundaryParams};
use memneuron::circuit::{self, NeuronParams, NeuronState, SimControl, Source};
use memneuron::device::{quasistatic_iv_sweep, DeviceModel, PiecewiseParams, SweepSpec, ThermalImtParams};
use memneuron::network::{self, ChainConfig, Pattern, SynapseBank};
use memneuron::spikes::{classify, BurstProfile, DetectorConfig, GapRule};
use memneuron::sweep::{self, Cell, PhaseGrid, SweepSettings};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn device(model: &str) -> PyResult<DeviceModel> {
    match model {
        "thermal" => Ok(DeviceModel::Thermal(ThermalImtParams::table_s2())),
        "piecewise" => Ok(DeviceModel::Piecewise(PiecewiseParams::table_s1())),
        other => Err(PyValueError::new_err(format!("unknown model '{other}', expected 'thermal' or 'piecewise'"))),
    }
}

/// One neuron: two capacitors, two memristors and a DC input branch.
#[pyclass(name = "Neuron", module = "memneuron", skip_from_py_object)]
#[derive(Clone)]
struct PyNeuron {
    #[pyo3(get, set)]
    c1: f64,
    #[pyo3(get, set)]
    c2: f64,
    #[pyo3(get, set)]
    v_in: f64,
    #[pyo3(get, set)]
    r_in: f64,
    #[pyo3(get, set)]
    r2: f64,
    #[pyo3(get, set)]
    v1: f64,
    #[pyo3(get, set)]
    v2: f64,
    #[pyo3(get)]
    model: String,
}

impl PyNeuron {
    fn params(&self) -> PyResult<NeuronParams> {
        let d = device(&self.model)?;
        let p = NeuronParams {
            c1: self.c1,
            c2: self.c2,
            r_in: self.r_in,
            r2: self.r2,
            v1: self.v1,
            v2: self.v2,
            v_in: Source::Dc(self.v_in),
            device1: d,
            device2: d,
        };
        p.validate().map_err(value_err)?;
        Ok(p)
    }
}

#[pymethods]
impl PyNeuron {
    #[new]
    #[pyo3(signature = (v_in=0.4, r_in=10e3, c1=5e-9, c2=0.5e-9, model="thermal"))]
    fn new(v_in: f64, r_in: f64, c1: f64, c2: f64, model: &str) -> PyResult<Self> {
        device(model)?;
        let t = NeuronParams::table_s1(v_in, r_in);
        let n = Self { c1, c2, v_in, r_in, r2: t.r2, v1: t.v1, v2: t.v2, model: model.to_string() };
        n.params()?;
        Ok(n)
    }

    fn __repr__(&self) -> String {
        format!(
            "Neuron(v_in={}, r_in={}, c1={:e}, c2={:e}, model='{}')",
            self.v_in, self.r_in, self.c1, self.c2, self.model
        )
    }

    /// Transient from a cold start; `rtol` and `sample_dt` override the
    /// reference step control.
    #[pyo3(signature = (duration, rtol=None, sample_dt=None))]
    fn simulate(&self, py: Python<'_>, duration: f64, rtol: Option<f64>, sample_dt: Option<f64>) -> PyResult<PyTrace> {
        let p = self.params()?;
        let mut ctl = SimControl::default();
        if let Some(r) = rtol {
            ctl.step.rtol = r;
        }
        if let Some(dt) = sample_dt {
            ctl.sample_dt = dt;
        }
        let trace = py.detach(|| circuit::integrate(&p, &NeuronState::cold(&p), duration, &ctl)).map_err(runtime_err)?;
        Ok(PyTrace { inner: trace })
    }

    /// Simulate until the classifier settles, as one phase-diagram cell.
    fn classify_point<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = self.params()?;
        let cell = py.detach(|| sweep::simulate_point(&p, &SweepSettings::default()).cell);
        cell_dict(py, &cell)
    }

    /// Rest node voltages (V_Na, V_K) with both devices frozen.
    fn fixed_point(&self, r_x1: f64, r_x2: f64) -> PyResult<(f64, f64)> {
        circuit::fixed_point(&self.params()?, r_x1, r_x2).map_err(value_err)
    }
}

/// Uniformly sampled node voltages and device states.
#[pyclass(name = "Trace", module = "memneuron")]
struct PyTrace {
    inner: circuit::Trace,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn t(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|k| self.inner.time(k)).collect()
    }

    #[getter]
    fn v_na(&self) -> Vec<f64> {
        self.inner.v_na.clone()
    }

    #[getter]
    fn v_k(&self) -> Vec<f64> {
        self.inner.v_k.clone()
    }

    #[getter]
    fn r_x1(&self) -> Vec<f64> {
        self.inner.r_x1.clone()
    }

    #[getter]
    fn r_x2(&self) -> Vec<f64> {
        self.inner.r_x2.clone()
    }

    #[getter]
    fn u1(&self) -> Vec<f64> {
        self.inner.u1.clone()
    }

    #[getter]
    fn u2(&self) -> Vec<f64> {
        self.inner.u2.clone()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Spike detection and burst grouping on V_K.
    fn classify<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = classify(&self.inner, &DetectorConfig::default(), &GapRule::default()).map_err(runtime_err)?;
        profile_dict(py, &p)
    }
}

fn profile_dict<'py>(py: Python<'py>, p: &BurstProfile) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("regime", p.regime.as_str())?;
    d.set_item("spikes_per_burst", p.spikes_per_burst)?;
    d.set_item("burst_counts", p.burst_counts.clone())?;
    d.set_item("duty_cycle", p.duty_cycle)?;
    d.set_item("inter_burst_frequency_hz", p.inter_burst_frequency)?;
    d.set_item("mean_isi", p.mean_isi)?;
    d.set_item("n_bursts", p.burst_counts.len())?;
    d.set_item("stationary", p.stationary)?;
    Ok(d)
}

fn cell_dict<'py>(py: Python<'py>, c: &Cell) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("v_in", c.v_in)?;
    d.set_item("r_in", c.r_in)?;
    d.set_item("regime", c.regime.as_str())?;
    d.set_item("spikes_per_burst", c.spikes_per_burst)?;
    d.set_item("spikes_per_period", c.spikes_per_period())?;
    d.set_item("duty_cycle", c.duty_cycle)?;
    d.set_item("inter_burst_freq_hz", c.inter_burst_freq_hz)?;
    d.set_item("duration", c.duration)?;
    d.set_item("error", c.error.clone())?;
    Ok(d)
}

/// Classified R_in × V_in grid.
#[pyclass(name = "PhaseDiagram", module = "memneuron")]
struct PyPhaseDiagram {
    inner: sweep::PhaseDiagram,
}

#[pymethods]
impl PyPhaseDiagram {
    #[getter]
    fn v_in(&self) -> Vec<f64> {
        self.inner.v_in.clone()
    }

    #[getter]
    fn r_in(&self) -> Vec<f64> {
        self.inner.r_in.clone()
    }

    /// Regime names, one list per V_in value ordered by R_in.
    fn regimes(&self) -> Vec<Vec<&'static str>> {
        (0..self.inner.v_in.len()).map(|i| self.inner.column(i).iter().map(|c| c.regime.as_str()).collect()).collect()
    }

    /// Spikes per burst, one list per V_in value (0 unless bursting).
    fn counts(&self) -> Vec<Vec<u32>> {
        (0..self.inner.v_in.len()).map(|i| self.inner.column(i).iter().map(|c| c.spikes_per_burst).collect()).collect()
    }

    fn burst_counts(&self) -> Vec<u32> {
        self.inner.burst_counts().into_iter().collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Deviation of simulated transitions from A′, B′ and C′.
    #[pyo3(signature = (rel_tolerance=0.05))]
    fn boundary_report<'py>(&self, py: Python<'py>, rel_tolerance: f64) -> PyResult<Bound<'py, PyDict>> {
        let lines = all_boundaries(&BoundaryParams::table_s1()).map_err(runtime_err)?;
        let report = compare_boundaries(&self.inner, &lines[..3], rel_tolerance);
        let d = PyDict::new(py);
        for l in &report.lines {
            let e = PyDict::new(py);
            e.set_item("columns", l.columns.len())?;
            e.set_item("max_rel", l.max_rel)?;
            e.set_item("mean_rel", l.mean_rel)?;
            e.set_item("all_within", l.all_within)?;
            d.set_item(l.label.as_str(), e)?;
        }
        Ok(d)
    }
}

/// Quasi-static triangular voltage sweep of one device.
#[pyfunction]
#[pyo3(signature = (model="thermal", v_max=2.0))]
fn iv_sweep<'py>(py: Python<'py>, model: &str, v_max: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = device(model)?;
    let spec = SweepSpec { v_max, ..SweepSpec::default() };
    let curve = py.detach(|| quasistatic_iv_sweep(&m, &spec)).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("v", curve.points.iter().map(|p| p.v).collect::<Vec<_>>())?;
    d.set_item("i", curve.points.iter().map(|p| p.i).collect::<Vec<_>>())?;
    d.set_item("state", curve.points.iter().map(|p| p.state).collect::<Vec<_>>())?;
    d.set_item("dir", curve.points.iter().map(|p| p.dir.as_str()).collect::<Vec<_>>())?;
    if let Some(a) = curve.anchors {
        let anchors = PyDict::new(py);
        anchors.set_item("v_th", a.v_th)?;
        anchors.set_item("v_h", a.v_h)?;
        anchors.set_item("r_th", a.r_th)?;
        anchors.set_item("r_h", a.r_h)?;
        d.set_item("anchors", anchors)?;
    } else {
        d.set_item("anchors", py.None())?;
    }
    Ok(d)
}

/// Analytic boundaries A′, B′, C′, A, B for the calculation parameters.
#[pyfunction]
fn boundaries<'py>(py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let lines = all_boundaries(&BoundaryParams::table_s1()).map_err(runtime_err)?;
    lines
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("label", l.label.as_str())?;
            d.set_item("slope_ohm_per_volt", l.slope)?;
            d.set_item("v_intercept_volts", l.intercept_voltage)?;
            Ok(d)
        })
        .collect()
}

/// Simulate and classify every (V_in, R_in) pair of the given axes.
#[pyfunction]
#[pyo3(signature = (neuron, v_in, r_in, threads=None))]
fn phase_diagram(
    py: Python<'_>,
    neuron: PyRef<'_, PyNeuron>,
    v_in: Vec<f64>,
    r_in: Vec<f64>,
    threads: Option<usize>,
) -> PyResult<PyPhaseDiagram> {
    let p = neuron.params()?;
    let s = SweepSettings { threads, ..SweepSettings::default() };
    let grid = PhaseGrid { v_in, r_in };
    let d = py.detach(|| sweep::phase_diagram(&grid, &p, &s)).map_err(value_err)?;
    Ok(PyPhaseDiagram { inner: d })
}

/// Spikes per period versus input current, with the exponential-unit fit.
#[pyfunction]
fn activation_curve<'py>(py: Python<'py>, neuron: PyRef<'_, PyNeuron>, amplitudes: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let p = neuron.params()?;
    let curve = py.detach(|| sweep::activation_curve(&amplitudes, &p, &SweepSettings::default())).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("amplitudes", curve.amplitudes)?;
    d.set_item("counts", curve.counts)?;
    match curve.fit {
        Some(f) => {
            let fit = PyDict::new(py);
            fit.set_item("m", f.m)?;
            fit.set_item("a", f.a)?;
            fit.set_item("b", f.b)?;
            fit.set_item("k", f.k)?;
            fit.set_item("rms", f.rms)?;
            d.set_item("fit", fit)?;
        }
        None => d.set_item("fit", py.None())?,
    }
    Ok(d)
}

/// Spikes per period of the perceptron output for the letters n, z, v.
/// `synapses` are the nine input resistances; the calibrated bank by default.
#[pyfunction]
#[pyo3(signature = (synapses=None))]
fn perceptron<'py>(py: Python<'py>, synapses: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let bank = match synapses {
        Some(v) => SynapseBank {
            resistances: v.try_into().map_err(|v: Vec<f64>| PyValueError::new_err(format!("need 9 synapses, got {}", v.len())))?,
        },
        None => SynapseBank::calibrated(),
    };
    bank.validate().map_err(value_err)?;
    let p = network::perceptron_neuron();
    let s = SweepSettings::default();
    let cells = py
        .detach(|| Pattern::letters().iter().map(|pat| network::perceptron_forward(pat, &bank, &p, &s)).collect::<Result<Vec<_>, _>>())
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    for (pat, c) in Pattern::letters().iter().zip(&cells) {
        d.set_item(&pat.label, c.spikes_per_period())?;
    }
    Ok(d)
}

/// Three neurons in series; `kind` is "burst" or "single".
#[pyfunction]
#[pyo3(signature = (kind="burst", duration=1e-3))]
fn chain<'py>(py: Python<'py>, kind: &str, duration: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = match kind {
        "burst" => ChainConfig::burst(),
        "single" => ChainConfig::single_spike(),
        other => return Err(PyValueError::new_err(format!("unknown chain '{other}', expected 'burst' or 'single'"))),
    };
    let out = py
        .detach(|| network::chain_simulate(&cfg, duration, &SimControl::default(), &DetectorConfig::default(), &GapRule::default()))
        .map_err(runtime_err)?;
    out.iter()
        .map(|n| {
            let d = match &n.profile {
                Some(p) => profile_dict(py, p)?,
                None => PyDict::new(py),
            };
            d.set_item("spikes_per_period", n.spikes_per_period())?;
            d.set_item("trace", PyTrace { inner: n.trace.clone() })?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "memneuron")]
fn memneuron_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNeuron>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyPhaseDiagram>()?;
    m.add_function(wrap_pyfunction!(iv_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(boundaries, m)?)?;
    m.add_function(wrap_pyfunction!(phase_diagram, m)?)?;
    m.add_function(wrap_pyfunction!(activation_curve, m)?)?;
    m.add_function(wrap_pyfunction!(perceptron, m)?)?;
    m.add_function(wrap_pyfunction!(chain, m)?)?;
    Ok(())
}
