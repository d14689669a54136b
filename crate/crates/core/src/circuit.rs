//! The two-channel memristive neuron: a slow Na-like node (V_Na on C1,
//! pulled toward V1 through X1) coupled by R2 to a fast K-like node (V_K on
//! C2, pulled toward V2 through X2). V_K is the neuron output.
//!
//! Several neurons can be wired into one [`NeuronNetwork`] where a neuron's
//! input branch is driven by an upstream neuron's V_K node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{Branch, DeviceError, DeviceModel, PiecewiseParams, ThermalImtParams};
use crate::integrator::{self, IntegrationError, IntegrationStats, OdeSystem, StepControl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid circuit parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("singular operating-point system: {0}")]
    Singular(String),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// Time-dependent voltage source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Dc(f64),
    /// Piecewise-linear (time s, voltage V) table, held constant outside.
    Pwl(Vec<(f64, f64)>),
}

impl From<f64> for Source {
    fn from(v: f64) -> Self {
        Source::Dc(v)
    }
}

impl Source {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Source::Dc(v) => *v,
            Source::Pwl(pts) => {
                let Some(first) = pts.first() else { return 0.0 };
                if t <= first.0 {
                    return first.1;
                }
                for w in pts.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        if t1 == t0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                pts.last().map_or(0.0, |p| p.1)
            }
        }
    }

    pub fn slope(&self, t: f64) -> f64 {
        match self {
            Source::Dc(_) => 0.0,
            Source::Pwl(pts) => {
                for w in pts.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t >= t0 && t < t1 && t1 > t0 {
                        return (v1 - v0) / (t1 - t0);
                    }
                }
                0.0
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Source::Dc(v) => v.abs(),
            Source::Pwl(pts) => pts.iter().map(|p| p.1.abs()).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub c1: f64,
    pub c2: f64,
    pub r_in: f64,
    pub r2: f64,
    pub v1: f64,
    pub v2: f64,
    pub v_in: Source,
    pub device1: DeviceModel,
    pub device2: DeviceModel,
}

impl NeuronParams {
    /// Circuit constants of the calculation table with thermal devices.
    pub fn table_s1(v_in: f64, r_in: f64) -> Self {
        Self {
            c1: 5e-9,
            c2: 0.5e-9,
            r_in,
            r2: 6e3,
            v1: -1.4,
            v2: 1.4,
            v_in: Source::Dc(v_in),
            device1: DeviceModel::Thermal(ThermalImtParams::table_s2()),
            device2: DeviceModel::Thermal(ThermalImtParams::table_s2()),
        }
    }

    pub fn with_piecewise_devices(mut self, p: PiecewiseParams) -> Self {
        self.device1 = DeviceModel::Piecewise(p);
        self.device2 = DeviceModel::Piecewise(p);
        self
    }

    pub fn with_capacitances(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("r_in", self.r_in), ("r2", self.r2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CircuitError::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.v1.is_finite() && self.v2.is_finite()) {
            return Err(CircuitError::InvalidParams("supply voltages must be finite".into()));
        }
        self.device1.validate()?;
        self.device2.validate()?;
        Ok(())
    }

    pub fn circuit(&self) -> NeuronCircuit {
        NeuronCircuit {
            c1: self.c1,
            c2: self.c2,
            r2: self.r2,
            v1: self.v1,
            v2: self.v2,
            device1: self.device1,
            device2: self.device2,
            drives: vec![Drive::Voltage { source: self.v_in.clone(), r: self.r_in }],
        }
    }
}

/// One input branch into a neuron's V_Na node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Drive {
    /// Voltage source behind a series resistor.
    Voltage { source: Source, r: f64 },
    /// Ideal current source (A) into the node.
    Current(f64),
    /// Output node (V_K) of another neuron in the same network, through `r`.
    Upstream { neuron: usize, r: f64 },
}

/// A neuron with an arbitrary set of input branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronCircuit {
    pub c1: f64,
    pub c2: f64,
    pub r2: f64,
    pub v1: f64,
    pub v2: f64,
    pub device1: DeviceModel,
    pub device2: DeviceModel,
    pub drives: Vec<Drive>,
}

impl NeuronCircuit {
    pub fn validate(&self) -> Result<(), CircuitError> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("r2", self.r2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CircuitError::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for d in &self.drives {
            match d {
                Drive::Voltage { r, .. } | Drive::Upstream { r, .. } if !(*r > 0.0) => {
                    return Err(CircuitError::InvalidParams(format!("input resistance must be positive, got {r}")));
                }
                _ => {}
            }
        }
        self.device1.validate()?;
        self.device2.validate()?;
        Ok(())
    }

    fn source_envelope(&self) -> f64 {
        self.drives
            .iter()
            .map(|d| match d {
                Drive::Voltage { source, .. } => source.max_abs(),
                _ => 0.0,
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub u: f64,
    pub branch: Branch,
}

impl DeviceState {
    pub fn cold(model: &DeviceModel) -> Self {
        Self { u: model.initial_u(), branch: Branch::Insulating }
    }

    pub fn resistance(&self, model: &DeviceModel) -> f64 {
        match model {
            DeviceModel::Piecewise(p) => p.resistance(self.branch),
            DeviceModel::Thermal(p) => 1.0 / p.conductance(p.clamp(self.u)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v_na: f64,
    pub v_k: f64,
    pub x1: DeviceState,
    pub x2: DeviceState,
}

impl NeuronState {
    /// Both nodes at 0 V, devices insulating.
    pub fn cold(p: &NeuronParams) -> Self {
        Self::cold_for(&p.device1, &p.device2)
    }

    pub fn cold_for(d1: &DeviceModel, d2: &DeviceModel) -> Self {
        Self { v_na: 0.0, v_k: 0.0, x1: DeviceState::cold(d1), x2: DeviceState::cold(d2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub dv_na: f64,
    pub dv_k: f64,
    pub du1: f64,
    pub du2: f64,
}

fn device_current(model: &DeviceModel, st: &DeviceState, v: f64) -> f64 {
    v / st.resistance(model)
}

fn device_rate(model: &DeviceModel, u: f64, v: f64) -> f64 {
    match model {
        DeviceModel::Piecewise(_) => 0.0,
        DeviceModel::Thermal(p) => p.rate_from_voltage(u, v),
    }
}

fn area_rate(model: &DeviceModel, w: f64, v: f64) -> f64 {
    match model {
        DeviceModel::Piecewise(_) => 0.0,
        DeviceModel::Thermal(p) => p.area_rate(w, v),
    }
}

/// Right-hand side of the node equations with device resistances taken from
/// the current device states.
pub fn neuron_derivatives(s: &NeuronState, p: &NeuronParams, t: f64) -> Derivatives {
    let v_in = p.v_in.value(t);
    let vd1 = s.v_na - p.v1;
    let vd2 = p.v2 - s.v_k;
    let i1 = device_current(&p.device1, &s.x1, vd1);
    let i2 = device_current(&p.device2, &s.x2, vd2);
    Derivatives {
        dv_na: ((v_in - s.v_na) / p.r_in + (s.v_k - s.v_na) / p.r2 - i1) / p.c1,
        dv_k: ((s.v_na - s.v_k) / p.r2 + i2) / p.c2,
        du1: device_rate(&p.device1, s.x1.u, vd1),
        du2: device_rate(&p.device2, s.x2.u, vd2),
    }
}

/// Operating point with both device resistances frozen.
pub fn fixed_point(p: &NeuronParams, r_x1: f64, r_x2: f64) -> Result<(f64, f64), CircuitError> {
    fixed_point_with_input(p, p.v_in.value(0.0), r_x1, r_x2)
}

pub fn fixed_point_with_input(p: &NeuronParams, v_in: f64, r_x1: f64, r_x2: f64) -> Result<(f64, f64), CircuitError> {
    for (name, r) in [("r_in", p.r_in), ("r2", p.r2), ("r_x1", r_x1), ("r_x2", r_x2)] {
        if !(r > 0.0) || r.is_nan() {
            return Err(CircuitError::Singular(format!("{name} = {r} is not a positive resistance")));
        }
    }
    let g_in = 1.0 / p.r_in;
    let g2 = 1.0 / p.r2;
    let g1 = 1.0 / r_x1;
    let gx2 = 1.0 / r_x2;
    let a11 = g_in + g2 + g1;
    let a12 = -g2;
    let a22 = g2 + gx2;
    let b1 = v_in * g_in + p.v1 * g1;
    let b2 = p.v2 * gx2;
    let det = a11 * a22 - a12 * a12;
    if !(det > 0.0) || !det.is_finite() {
        return Err(CircuitError::Singular(format!("determinant {det}")));
    }
    let v_na = (b1 * a22 - a12 * b2) / det;
    let v_k = (a11 * b2 - a12 * b1) / det;
    Ok((v_na, v_k))
}

/// Several neurons integrated as one coupled system. `N` must equal four
/// times the number of neurons (V_Na, V_K, u1, u2 per neuron).
#[derive(Debug, Clone)]
pub struct NeuronNetwork<const N: usize> {
    neurons: Vec<NeuronCircuit>,
    branches: Vec<[Branch; 2]>,
    /// (downstream neuron, upstream neuron, resistance)
    links: Vec<(usize, usize, f64)>,
}

impl<const N: usize> NeuronNetwork<N> {
    pub fn new(neurons: Vec<NeuronCircuit>) -> Result<Self, CircuitError> {
        if N != 4 * neurons.len() {
            return Err(CircuitError::InvalidParams(format!(
                "state size {N} does not match {} neurons",
                neurons.len()
            )));
        }
        let mut links = Vec::new();
        for (j, n) in neurons.iter().enumerate() {
            n.validate()?;
            for d in &n.drives {
                if let Drive::Upstream { neuron, r } = d {
                    if *neuron >= neurons.len() || *neuron == j {
                        return Err(CircuitError::InvalidParams(format!("neuron {j} has invalid upstream {neuron}")));
                    }
                    links.push((j, *neuron, *r));
                }
            }
        }
        let branches = vec![[Branch::Insulating; 2]; neurons.len()];
        Ok(Self { neurons, branches, links })
    }

    pub fn neurons(&self) -> &[NeuronCircuit] {
        &self.neurons
    }

    pub fn state_vector(&mut self, states: &[NeuronState]) -> [f64; N] {
        let mut y = [0.0; N];
        for (j, s) in states.iter().enumerate().take(self.neurons.len()) {
            y[4 * j] = s.v_na;
            y[4 * j + 1] = s.v_k;
            // thermal devices are integrated in the area fraction w = u^2
            y[4 * j + 2] = s.x1.u * s.x1.u;
            y[4 * j + 3] = s.x2.u * s.x2.u;
            self.branches[j] = [s.x1.branch, s.x2.branch];
        }
        y
    }

    pub fn neuron_state(&self, y: &[f64; N], j: usize) -> NeuronState {
        NeuronState {
            v_na: y[4 * j],
            v_k: y[4 * j + 1],
            x1: DeviceState { u: y[4 * j + 2].max(0.0).sqrt(), branch: self.branches[j][0] },
            x2: DeviceState { u: y[4 * j + 3].max(0.0).sqrt(), branch: self.branches[j][1] },
        }
    }

    fn conductance(&self, j: usize, which: usize, w: f64) -> f64 {
        let n = &self.neurons[j];
        let model = if which == 0 { &n.device1 } else { &n.device2 };
        match model {
            DeviceModel::Piecewise(p) => 1.0 / p.resistance(self.branches[j][which]),
            DeviceModel::Thermal(p) => p.conductance_area(p.clamp_area(w)),
        }
    }

    /// Largest |voltage| any node can reach plus a 1 V margin.
    pub fn voltage_envelope(&self) -> f64 {
        self.neurons
            .iter()
            .map(|n| n.source_envelope() + n.v1.abs() + n.v2.abs() + 1.0)
            .fold(0.0, f64::max)
    }
}

impl<const N: usize> OdeSystem<N> for NeuronNetwork<N> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
        let mut f = [0.0; N];
        for (j, n) in self.neurons.iter().enumerate() {
            let (v_na, v_k, u1, u2) = (y[4 * j], y[4 * j + 1], y[4 * j + 2], y[4 * j + 3]);
            let mut i_in = 0.0;
            for d in &n.drives {
                i_in += match d {
                    Drive::Voltage { source, r } => (source.value(t) - v_na) / r,
                    Drive::Current(i) => *i,
                    Drive::Upstream { neuron, r } => (y[4 * neuron + 1] - v_na) / r,
                };
            }
            let vd1 = v_na - n.v1;
            let vd2 = n.v2 - v_k;
            let i1 = vd1 * self.conductance(j, 0, u1);
            let i2 = vd2 * self.conductance(j, 1, u2);
            f[4 * j] = (i_in + (v_k - v_na) / n.r2 - i1) / n.c1;
            f[4 * j + 1] = ((v_na - v_k) / n.r2 + i2) / n.c2;
            f[4 * j + 2] = area_rate(&n.device1, u1, vd1);
            f[4 * j + 3] = area_rate(&n.device2, u2, vd2);
        }
        for &(down, up, r) in &self.links {
            let i = (y[4 * up + 1] - y[4 * down]) / r;
            f[4 * up + 1] -= i / self.neurons[up].c2;
        }
        f
    }

    fn jacobian(&self, _t: f64, y: &[f64; N]) -> [[f64; N]; N] {
        let mut jac = [[0.0; N]; N];
        for (j, n) in self.neurons.iter().enumerate() {
            let (a, k, p, q) = (4 * j, 4 * j + 1, 4 * j + 2, 4 * j + 3);
            let (v_na, v_k, u1, u2) = (y[a], y[k], y[p], y[q]);
            let vd1 = v_na - n.v1;
            let vd2 = n.v2 - v_k;
            let g1 = self.conductance(j, 0, u1);
            let g2 = self.conductance(j, 1, u2);
            let mut g_in = 0.0;
            for d in &n.drives {
                match d {
                    Drive::Voltage { r, .. } => g_in += 1.0 / r,
                    Drive::Current(_) => {}
                    Drive::Upstream { neuron, r } => {
                        g_in += 1.0 / r;
                        jac[a][4 * neuron + 1] += 1.0 / (r * n.c1);
                    }
                }
            }
            jac[a][a] = -(g_in + 1.0 / n.r2 + g1) / n.c1;
            jac[a][k] = 1.0 / (n.r2 * n.c1);
            jac[k][a] = 1.0 / (n.r2 * n.c2);
            jac[k][k] = -(1.0 / n.r2 + g2) / n.c2;
            if let DeviceModel::Thermal(d) = &n.device1 {
                jac[a][p] = -vd1 * d.conductance_area_dw() / n.c1;
                let (r_w, r_v) = d.area_rate_partials(u1, vd1);
                jac[p][p] = r_w;
                jac[p][a] = r_v;
            }
            if let DeviceModel::Thermal(d) = &n.device2 {
                jac[k][q] = vd2 * d.conductance_area_dw() / n.c2;
                let (r_w, r_v) = d.area_rate_partials(u2, vd2);
                jac[q][q] = r_w;
                jac[q][k] = -r_v;
            }
        }
        for &(down, up, r) in &self.links {
            let c2 = self.neurons[up].c2;
            jac[4 * up + 1][4 * up + 1] -= 1.0 / (r * c2);
            jac[4 * up + 1][4 * down] += 1.0 / (r * c2);
        }
        jac
    }

    fn time_derivative(&self, t: f64, _y: &[f64; N]) -> [f64; N] {
        let mut f = [0.0; N];
        for (j, n) in self.neurons.iter().enumerate() {
            for d in &n.drives {
                if let Drive::Voltage { source, r } = d {
                    f[4 * j] += source.slope(t) / (r * n.c1);
                }
            }
        }
        f
    }

    fn project(&self, y: &mut [f64; N]) {
        for (j, n) in self.neurons.iter().enumerate() {
            if let DeviceModel::Thermal(p) = &n.device1 {
                y[4 * j + 2] = p.clamp_area(y[4 * j + 2]);
            }
            if let DeviceModel::Thermal(p) = &n.device2 {
                y[4 * j + 3] = p.clamp_area(y[4 * j + 3]);
            }
        }
    }

    fn num_events(&self) -> usize {
        2 * self.neurons.len()
    }

    fn event_values(&self, _t: f64, y: &[f64; N], out: &mut [f64]) {
        for (j, n) in self.neurons.iter().enumerate() {
            let vd = [y[4 * j] - n.v1, n.v2 - y[4 * j + 1]];
            for (w, model) in [&n.device1, &n.device2].into_iter().enumerate() {
                out[2 * j + w] = match model {
                    DeviceModel::Piecewise(p) => p.switch_indicator(self.branches[j][w], vd[w]),
                    DeviceModel::Thermal(_) => -1.0,
                };
            }
        }
    }

    fn apply_event(&mut self, index: usize, _t: f64, _y: &[f64; N]) {
        let b = &mut self.branches[index / 2][index % 2];
        *b = match *b {
            Branch::Insulating => Branch::Metallic,
            Branch::Metallic => Branch::Insulating,
        };
    }
}

/// Integration settings: step control plus the uniform output grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimControl {
    pub step: StepControl,
    /// Output resampling interval, s.
    pub sample_dt: f64,
}

impl Default for SimControl {
    fn default() -> Self {
        Self {
            step: StepControl {
                rtol: 2.5e-7,
                atol: 2.5e-9,
                max_step: 2e-8,
                initial_step: 1e-12,
                min_step: 1e-20,
                max_steps: 200_000_000,
            },
            sample_dt: 1e-8,
        }
    }
}

impl SimControl {
    /// Looser settings for large sweeps, where only the classification of
    /// each cell is kept.
    pub fn sweep() -> Self {
        let d = Self::default();
        Self { step: StepControl { rtol: 1e-4, atol: 1e-6, max_step: 2e-7, ..d.step }, sample_dt: 2e-8 }
    }

    pub fn tightened(&self, factor: f64) -> Self {
        Self { step: self.step.tightened(factor), ..*self }
    }
}

/// Uniformly sampled node voltages and device resistances of one neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub t0: f64,
    pub dt: f64,
    pub v_na: Vec<f64>,
    pub v_k: Vec<f64>,
    pub r_x1: Vec<f64>,
    pub r_x2: Vec<f64>,
    /// Thermal state samples; empty for piecewise devices.
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub params: Option<NeuronParams>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.v_k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_k.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.len().saturating_sub(1)) as f64
    }

    /// The output node, V_K.
    pub fn output(&self) -> &[f64] {
        &self.v_k
    }

    /// CSV with a header row; u columns are empty for piecewise devices.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * self.len() + 64);
        s.push_str("t_s,v_na_V,v_k_V,r_x1_ohm,r_x2_ohm,u1,u2\n");
        let opt = |v: &[f64], k: usize| v.get(k).map(|x| x.to_string()).unwrap_or_default();
        for k in 0..self.len() {
            s += &format!(
                "{},{},{},{},{},{},{}\n",
                self.time(k),
                self.v_na[k],
                self.v_k[k],
                self.r_x1[k],
                self.r_x2[k],
                opt(&self.u1, k),
                opt(&self.u2, k)
            );
        }
        s
    }

    /// Append a segment that starts where this trace ends (same sampling
    /// interval); the segment's first sample is dropped as a duplicate.
    pub fn append(&mut self, seg: &Trace) {
        self.v_na.extend_from_slice(seg.v_na.get(1..).unwrap_or(&[]));
        self.v_k.extend_from_slice(seg.v_k.get(1..).unwrap_or(&[]));
        self.r_x1.extend_from_slice(seg.r_x1.get(1..).unwrap_or(&[]));
        self.r_x2.extend_from_slice(seg.r_x2.get(1..).unwrap_or(&[]));
        self.u1.extend_from_slice(seg.u1.get(1..).unwrap_or(&[]));
        self.u2.extend_from_slice(seg.u2.get(1..).unwrap_or(&[]));
    }

    fn with_capacity(t0: f64, dt: f64, n: usize, thermal: [bool; 2]) -> Self {
        Self {
            t0,
            dt,
            v_na: Vec::with_capacity(n),
            v_k: Vec::with_capacity(n),
            r_x1: Vec::with_capacity(n),
            r_x2: Vec::with_capacity(n),
            u1: if thermal[0] { Vec::with_capacity(n) } else { Vec::new() },
            u2: if thermal[1] { Vec::with_capacity(n) } else { Vec::new() },
            params: None,
        }
    }

    fn push(&mut self, s: &NeuronState, n: &NeuronCircuit) {
        self.v_na.push(s.v_na);
        self.v_k.push(s.v_k);
        self.r_x1.push(s.x1.resistance(&n.device1));
        self.r_x2.push(s.x2.resistance(&n.device2));
        if n.device1.is_thermal() {
            self.u1.push(s.x1.u);
        }
        if n.device2.is_thermal() {
            self.u2.push(s.x2.u);
        }
    }
}

fn sample_grid(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end - t0) / dt + 1e-6).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| t0 + dt * k as f64).collect();
    if times.len() < 2 {
        times.push(t_end);
    }
    times
}

/// Integrate a network and return one uniformly sampled trace per neuron,
/// the final states, and step statistics.
pub fn integrate_network<const N: usize>(
    net: &mut NeuronNetwork<N>,
    s0: &[NeuronState],
    t_end: f64,
    ctl: &SimControl,
) -> Result<(Vec<Trace>, Vec<NeuronState>, IntegrationStats), CircuitError> {
    if !(t_end > 0.0) {
        return Err(CircuitError::InvalidParams(format!("t_end must be positive, got {t_end}")));
    }
    if !(ctl.sample_dt > 0.0) {
        return Err(CircuitError::InvalidParams("sample_dt must be positive".into()));
    }
    let m = net.neurons().len();
    if s0.len() != m {
        return Err(CircuitError::InvalidParams(format!("{} initial states for {m} neurons", s0.len())));
    }
    let times = sample_grid(0.0, t_end, ctl.sample_dt);
    let y0 = net.state_vector(s0);
    let envelope = net.voltage_envelope();
    let mut traces: Vec<Trace> = net
        .neurons()
        .iter()
        .map(|n| Trace::with_capacity(0.0, ctl.sample_dt, times.len(), [n.device1.is_thermal(), n.device2.is_thermal()]))
        .collect();

    let mut overflow = None;
    let (y_end, stats) = integrator::integrate_with_events(net, 0.0, y0, &times, &ctl.step, |_, t, y, sys| {
        for (j, tr) in traces.iter_mut().enumerate() {
            let s = sys.neuron_state(y, j);
            if overflow.is_none() && (s.v_na.abs() > envelope || s.v_k.abs() > envelope) {
                overflow = Some(t);
            }
            tr.push(&s, &sys.neurons()[j]);
        }
    })?;
    if let Some(t) = overflow {
        return Err(CircuitError::Integration(IntegrationError::NonFinite { t }));
    }
    let finals = (0..m).map(|j| net.neuron_state(&y_end, j)).collect();
    Ok((traces, finals, stats))
}

/// Simulate one neuron from `s0` for `t_end` seconds.
pub fn integrate(p: &NeuronParams, s0: &NeuronState, t_end: f64, ctl: &SimControl) -> Result<Trace, CircuitError> {
    integrate_with_final(p, s0, t_end, ctl).map(|(tr, _)| tr)
}

/// As [`integrate`], also returning the state at `t_end`.
pub fn integrate_with_final(
    p: &NeuronParams,
    s0: &NeuronState,
    t_end: f64,
    ctl: &SimControl,
) -> Result<(Trace, NeuronState), CircuitError> {
    p.validate()?;
    let (mut tr, fin) = integrate_circuit(&p.circuit(), s0, t_end, ctl)?;
    tr.params = Some(p.clone());
    Ok((tr, fin))
}

/// Simulate a single neuron with arbitrary (non-upstream) drives.
pub fn integrate_circuit(
    c: &NeuronCircuit,
    s0: &NeuronState,
    t_end: f64,
    ctl: &SimControl,
) -> Result<(Trace, NeuronState), CircuitError> {
    let mut net = NeuronNetwork::<4>::new(vec![c.clone()])?;
    let (mut traces, finals, _) = integrate_network(&mut net, std::slice::from_ref(s0), t_end, ctl)?;
    Ok((traces.pop().expect("one neuron"), finals[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frozen_params(v_in: f64, r_in: f64) -> NeuronParams {
        NeuronParams::table_s1(v_in, r_in).with_piecewise_devices(PiecewiseParams::table_s1())
    }

    #[test]
    fn derivative_hand_evaluation() {
        let mut p = frozen_params(0.4, 6e3);
        p.r2 = 6e3;
        let s = NeuronState::cold(&p);
        let d = neuron_derivatives(&s, &p, 0.0);
        // (0.4/6k - 1.4/49k)/5n and (1.4/49k)/0.5n
        assert_relative_eq!(d.dv_na, (0.4 / 6e3 - 1.4 / 49e3) / 5e-9, max_relative = 1e-12);
        assert_relative_eq!(d.dv_na, 7.619e3, max_relative = 1e-3);
        assert_relative_eq!(d.dv_k, 5.714e4, max_relative = 1e-3);
    }

    #[test]
    fn quiescent_circuit_has_zero_derivatives() {
        let mut p = frozen_params(0.0, 6e3);
        p.v1 = 0.0;
        p.v2 = 0.0;
        let d = neuron_derivatives(&NeuronState::cold(&p), &p, 0.0);
        assert_eq!((d.dv_na, d.dv_k), (0.0, 0.0));
    }

    #[test]
    fn fixed_point_zeroes_derivatives() {
        let p = frozen_params(0.4, 6e3);
        let (v_na, v_k) = fixed_point(&p, 49e3, 49e3).unwrap();
        let s = NeuronState { v_na, v_k, ..NeuronState::cold(&p) };
        let d = neuron_derivatives(&s, &p, 0.0);
        // residual currents relative to the largest branch current
        let scale = 1.4 / 49e3 + 0.4 / 6e3;
        assert!((d.dv_na * p.c1).abs() < 1e-12 * scale);
        assert!((d.dv_k * p.c2).abs() < 1e-12 * scale);
    }

    #[test]
    fn fixed_point_limits() {
        let mut p = frozen_params(0.0, 6e3);
        p.v1 = 0.0;
        p.v2 = 0.0;
        assert_eq!(fixed_point(&p, 49e3, 49e3).unwrap(), (0.0, 0.0));

        let mut p = frozen_params(0.4, 6e3);
        p.r2 = 1e12;
        let (v_na, v_k) = fixed_point(&p, 49e3, 49e3).unwrap();
        let divider = (0.4 / 6e3 - 1.4 / 49e3) / (1.0 / 6e3 + 1.0 / 49e3);
        assert_relative_eq!(v_na, divider, max_relative = 1e-6);
        assert_relative_eq!(v_k, 1.4, max_relative = 1e-6);
    }

    #[test]
    fn fixed_point_rejects_nonphysical() {
        let p = frozen_params(0.4, 6e3);
        assert!(matches!(fixed_point(&p, 0.0, 49e3), Err(CircuitError::Singular(_))));
        assert!(matches!(fixed_point(&p, 49e3, -1.0), Err(CircuitError::Singular(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = NeuronParams::table_s1(0.4, 10e3);
        let mut up = p.circuit();
        up.c1 = 10e-9;
        let mut down = p.circuit();
        down.drives = vec![Drive::Upstream { neuron: 0, r: 10e3 }, Drive::Current(1e-6)];
        let net = NeuronNetwork::<8>::new(vec![up, down]).unwrap();
        let y = [0.3, 0.5, 0.08, 0.4, -0.2, 0.1, 0.6, 0.2];
        let jac = net.jacobian(0.0, &y);
        for col in 0..8 {
            let h = 1e-7 * y[col].abs().max(1e-3);
            let mut yp = y;
            let mut ym = y;
            yp[col] += h;
            ym[col] -= h;
            let fp = net.rhs(0.0, &yp);
            let fm = net.rhs(0.0, &ym);
            for row in 0..8 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let scale = fd.abs().max(jac[row][col].abs()).max(1.0);
                assert!(
                    (fd - jac[row][col]).abs() / scale < 1e-4,
                    "J[{row}][{col}] = {} vs fd {fd}",
                    jac[row][col]
                );
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = NeuronParams::table_s1(0.4, 6e3);
        p.c1 = 0.0;
        assert!(p.validate().is_err());
        let ctl = SimControl::default();
        assert!(integrate(&p, &NeuronState::cold(&p), 1e-6, &ctl).is_err());
        let p = NeuronParams::table_s1(0.4, 6e3);
        assert!(integrate(&p, &NeuronState::cold(&p), 0.0, &ctl).is_err());
    }

    #[test]
    fn pwl_source_interpolates() {
        let s = Source::Pwl(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)]);
        assert_eq!(s.value(-1.0), 0.0);
        assert_eq!(s.value(0.5), 1.0);
        assert_eq!(s.value(3.0), 2.0);
        assert_eq!(s.slope(0.5), 2.0);
        assert_eq!(s.slope(1.5), 0.0);
    }
}
