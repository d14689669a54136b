//! Lumped NbO2 threshold-switch models.
//!
//! Two models are provided. [`PiecewiseParams`] is a hysteretic two-resistance
//! switch (R_off while insulating, R_on while metallic). [`ThermalImtParams`]
//! is a core-shell thermal model: a metallic filament of radius `u * r_ch`
//! inside an insulating shell, grown by Joule heating and shrunk by radial
//! heat loss, with latent heat setting the boundary speed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{self, OdeSystem, StepControl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
    #[error("state u = {u} outside [{min}, {max}]")]
    Domain { u: f64, min: f64, max: f64 },
    #[error("quasi-static sweep did not converge at v = {v} V (last u = {u}): {reason}")]
    NotConverged { v: f64, u: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    #[default]
    Insulating,
    Metallic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseParams {
    pub r_on: f64,
    pub r_off: f64,
    pub v_th: f64,
    pub v_h: f64,
}

impl PiecewiseParams {
    /// Hard-switching values used for the operating-window calculation.
    pub fn table_s1() -> Self {
        Self {
            r_on: 850.0,
            r_off: 49e3,
            v_th: 1.448,
            v_h: 0.746,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.r_on > 0.0 && self.r_on < self.r_off) {
            return Err(DeviceError::InvalidParams(format!(
                "need 0 < r_on < r_off (r_on = {}, r_off = {})",
                self.r_on, self.r_off
            )));
        }
        if !(self.v_h > 0.0 && self.v_h < self.v_th) {
            return Err(DeviceError::InvalidParams(format!(
                "need 0 < v_h < v_th (v_h = {}, v_th = {})",
                self.v_h, self.v_th
            )));
        }
        Ok(())
    }

    pub fn resistance(&self, branch: Branch) -> f64 {
        match branch {
            Branch::Insulating => self.r_off,
            Branch::Metallic => self.r_on,
        }
    }

    /// Event function for the branch switch: crosses zero from below exactly
    /// when the hysteresis rule flips the branch.
    pub fn switch_indicator(&self, branch: Branch, v: f64) -> f64 {
        match branch {
            Branch::Insulating => v.abs() - self.v_th,
            Branch::Metallic => self.v_h - v.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PiecewiseState {
    pub branch: Branch,
}

/// Resistance seen at voltage `v` and the branch after applying the
/// hysteresis rule. Switching is inclusive at both thresholds.
pub fn piecewise_eval(state: PiecewiseState, v: f64, p: &PiecewiseParams) -> (f64, PiecewiseState) {
    let next = match state.branch {
        Branch::Insulating if v.abs() >= p.v_th => Branch::Metallic,
        Branch::Metallic if v.abs() <= p.v_h => Branch::Insulating,
        b => b,
    };
    (p.resistance(next), PiecewiseState { branch: next })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalImtParams {
    /// Transition temperature, K.
    pub t_imt: f64,
    /// Ambient temperature, K.
    pub t_amb: f64,
    /// Thermal conductivity, W/(m K).
    pub kappa: f64,
    /// Volumetric heat capacity, J/(m^3 K).
    pub c_v: f64,
    pub rho_met: f64,
    pub rho_ins: f64,
    /// Channel radius, m.
    pub r_ch: f64,
    /// Channel length, m.
    pub l_ch: f64,
    /// Volumetric transformation enthalpy, J/m^3.
    pub dh_tx: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ThermalImtParams {
    fn default() -> Self {
        Self::table_s2()
    }
}

impl ThermalImtParams {
    pub fn table_s2() -> Self {
        Self {
            t_imt: 1080.0,
            t_amb: 296.0,
            kappa: 1.5,
            c_v: 2.6e6,
            rho_met: 1e-4,
            rho_ins: 7e-3,
            r_ch: 30e-9,
            l_ch: 20e-9,
            dh_tx: 1.6e8,
            u_min: 0.01,
            u_max: 0.9999,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let positive = [
            ("kappa", self.kappa),
            ("c_v", self.c_v),
            ("rho_met", self.rho_met),
            ("r_ch", self.r_ch),
            ("l_ch", self.l_ch),
            ("dh_tx", self.dh_tx),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DeviceError::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.rho_met < self.rho_ins) {
            return Err(DeviceError::InvalidParams("need rho_met < rho_ins".into()));
        }
        if !(self.t_amb < self.t_imt) {
            return Err(DeviceError::InvalidParams("need t_amb < t_imt".into()));
        }
        if !(0.0 < self.u_min && self.u_min < self.u_max && self.u_max < 1.0) {
            return Err(DeviceError::InvalidParams("need 0 < u_min < u_max < 1".into()));
        }
        Ok(())
    }

    /// l / (pi r^2), the geometric factor turning resistivity into resistance.
    fn shape_factor(&self) -> f64 {
        self.l_ch / (PI * self.r_ch * self.r_ch)
    }

    /// Resistance with a fully insulating channel (u -> 0).
    pub fn r_insulating_limit(&self) -> f64 {
        self.shape_factor() * self.rho_ins
    }

    /// Resistance with a fully metallic channel (u -> 1).
    pub fn r_metallic_limit(&self) -> f64 {
        self.shape_factor() * self.rho_met
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    /// Conductance of the parallel core/shell channel. No range check.
    pub fn conductance(&self, u: f64) -> f64 {
        let u2 = u * u;
        (u2 / self.rho_met + (1.0 - u2) / self.rho_ins) / self.shape_factor()
    }

    fn conductance_du(&self, u: f64) -> f64 {
        2.0 * u * (1.0 / self.rho_met - 1.0 / self.rho_ins) / self.shape_factor()
    }

    /// Radial thermal conductance from the filament edge to the channel wall.
    pub fn thermal_conductance(&self, u: f64) -> f64 {
        2.0 * PI * self.l_ch * self.kappa / self.log_ratio(u)
    }

    fn log_ratio(&self, u: f64) -> f64 {
        (1.0 / u).ln().max((1.0 / self.u_max).ln())
    }

    fn thermal_conductance_du(&self, u: f64) -> f64 {
        let lr = (1.0 / u).ln();
        if lr <= (1.0 / self.u_max).ln() {
            0.0
        } else {
            2.0 * PI * self.l_ch * self.kappa / (lr * lr * u)
        }
    }

    /// Latent heat absorbed per unit change of u, J.
    fn latent_factor(&self, u: f64) -> f64 {
        self.dh_tx * 2.0 * PI * self.r_ch * self.r_ch * self.l_ch * u
    }

    fn delta_t(&self) -> f64 {
        self.t_imt - self.t_amb
    }

    /// Rough thermal time constant c_v * volume / Gamma at the insulating clamp.
    pub fn thermal_time_constant(&self) -> f64 {
        let volume = PI * self.r_ch * self.r_ch * self.l_ch;
        self.c_v * volume / self.thermal_conductance(self.u_min)
    }

    /// du/dt driven by a device voltage `v`, with the boundary clamp applied.
    pub fn rate_from_voltage(&self, u: f64, v: f64) -> f64 {
        let u = self.clamp(u);
        let net = v * v * self.conductance(u) - self.thermal_conductance(u) * self.delta_t();
        self.clamp_rate(u, net / self.latent_factor(u))
    }

    fn clamp_rate(&self, u: f64, rate: f64) -> f64 {
        if (u <= self.u_min && rate < 0.0) || (u >= self.u_max && rate > 0.0) {
            0.0
        } else {
            rate
        }
    }

    /// Partial derivatives (d rate / du, d rate / dv) of [`Self::rate_from_voltage`].
    pub fn rate_partials(&self, u: f64, v: f64) -> (f64, f64) {
        let u = self.clamp(u);
        let k = self.latent_factor(u);
        let g = self.conductance(u);
        let net = v * v * g - self.thermal_conductance(u) * self.delta_t();
        if self.clamp_rate(u, net / k) == 0.0 && net != 0.0 {
            return (0.0, 0.0);
        }
        let dnet_du = v * v * self.conductance_du(u) - self.thermal_conductance_du(u) * self.delta_t();
        let d_du = dnet_du / k - net / (k * u);
        let d_dv = 2.0 * v * g / k;
        (d_du, d_dv)
    }

    // The time integrators work with the filament area fraction w = u^2:
    // latent heat times d(core volume)/dt equals the net power, so dw/dt has
    // no 1/u factor and the conductance is linear in w.

    pub fn area_bounds(&self) -> (f64, f64) {
        (self.u_min * self.u_min, self.u_max * self.u_max)
    }

    pub fn clamp_area(&self, w: f64) -> f64 {
        let (lo, hi) = self.area_bounds();
        w.clamp(lo, hi)
    }

    pub fn conductance_area(&self, w: f64) -> f64 {
        (w / self.rho_met + (1.0 - w) / self.rho_ins) / self.shape_factor()
    }

    /// d(conductance)/dw, a constant.
    pub fn conductance_area_dw(&self) -> f64 {
        (1.0 / self.rho_met - 1.0 / self.rho_ins) / self.shape_factor()
    }

    fn area_latent_factor(&self) -> f64 {
        self.dh_tx * PI * self.r_ch * self.r_ch * self.l_ch
    }

    /// dw/dt at device voltage `v`, zero when it would leave the bounds.
    pub fn area_rate(&self, w: f64, v: f64) -> f64 {
        let w = self.clamp_area(w);
        let net = v * v * self.conductance_area(w) - self.thermal_conductance(w.sqrt()) * self.delta_t();
        let rate = net / self.area_latent_factor();
        let (lo, hi) = self.area_bounds();
        if (w <= lo && rate < 0.0) || (w >= hi && rate > 0.0) {
            0.0
        } else {
            rate
        }
    }

    /// (d rate / dw, d rate / dv) of [`Self::area_rate`].
    pub fn area_rate_partials(&self, w: f64, v: f64) -> (f64, f64) {
        let w = self.clamp_area(w);
        if self.area_rate(w, v) == 0.0 {
            let (lo, hi) = self.area_bounds();
            if w <= lo || w >= hi {
                return (0.0, 0.0);
            }
        }
        let u = w.sqrt();
        let k = self.area_latent_factor();
        let dnet_dw = v * v * self.conductance_area_dw() - self.thermal_conductance_du(u) * self.delta_t() / (2.0 * u);
        (dnet_dw / k, 2.0 * v * self.conductance_area(w) / k)
    }

    /// Voltage at which heating balances cooling for a static state `u`.
    pub fn balance_voltage(&self, u: f64) -> f64 {
        (self.thermal_conductance(u) * self.delta_t() / self.conductance(u)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ThermalImtState {
    pub u: f64,
}

/// Static resistance of the thermal model at state `u`.
pub fn thermal_memristance(u: f64, p: &ThermalImtParams) -> Result<f64, DeviceError> {
    if !(u >= p.u_min && u <= p.u_max) {
        return Err(DeviceError::Domain { u, min: p.u_min, max: p.u_max });
    }
    Ok(1.0 / p.conductance(u))
}

/// du/dt for device current `i`; zero when it would leave `[u_min, u_max]`.
pub fn thermal_state_derivative(u: f64, i: f64, p: &ThermalImtParams) -> Result<f64, DeviceError> {
    let r = thermal_memristance(u, p)?;
    let net = i * i * r - p.thermal_conductance(u) * p.delta_t();
    Ok(p.clamp_rate(u, net / p.latent_factor(u)))
}

/// A device bound to one channel of the neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceModel {
    Piecewise(PiecewiseParams),
    Thermal(ThermalImtParams),
}

impl DeviceModel {
    pub fn validate(&self) -> Result<(), DeviceError> {
        match self {
            DeviceModel::Piecewise(p) => p.validate(),
            DeviceModel::Thermal(p) => p.validate(),
        }
    }

    pub fn is_thermal(&self) -> bool {
        matches!(self, DeviceModel::Thermal(_))
    }

    /// Cold-start continuous state (u_min for the thermal model, 0 otherwise).
    pub fn initial_u(&self) -> f64 {
        match self {
            DeviceModel::Piecewise(_) => 0.0,
            DeviceModel::Thermal(p) => p.u_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepDir {
    Up,
    Down,
}

impl SweepDir {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepDir::Up => "up",
            SweepDir::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvPoint {
    pub v: f64,
    pub i: f64,
    /// u for the thermal model, 0/1 (insulating/metallic) for the piecewise model.
    pub state: f64,
    pub dir: SweepDir,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvAnchors {
    pub v_th: f64,
    pub v_h: f64,
    pub r_th: f64,
    pub r_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvCurve {
    pub points: Vec<IvPoint>,
    pub anchors: Option<IvAnchors>,
    pub thermal: bool,
}

impl IvCurve {
    /// CSV with a header row; `state_u` holds 0/1 for piecewise devices.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("v_volts,i_amps,state_u,sweep_dir\n");
        for p in &self.points {
            s += &format!("{},{},{},{}\n", p.v, p.i, p.state, p.dir.as_str());
        }
        s
    }

    pub fn no_switching(&self) -> bool {
        self.anchors.is_none()
    }
}

/// Triangular 0 -> v_max -> 0 voltage ramp applied directly across the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub v_max: f64,
    /// Duration of each leg, s. `None` picks `leg_factor` thermal time constants.
    pub leg_time: Option<f64>,
    pub leg_factor: f64,
    /// Number of recorded points per leg.
    pub points_per_leg: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            leg_time: None,
            leg_factor: 1e5,
            points_per_leg: 20_000,
        }
    }
}

impl SweepSpec {
    pub fn leg_time_for(&self, p: &ThermalImtParams) -> f64 {
        self.leg_time.unwrap_or(self.leg_factor * p.thermal_time_constant())
    }
}

/// Quasi-static I-V sweep. The thermal model is integrated in time along a
/// slow ramp; the piecewise model is evaluated with exact switching events.
pub fn quasistatic_iv_sweep(model: &DeviceModel, sweep: &SweepSpec) -> Result<IvCurve, DeviceError> {
    model.validate()?;
    if sweep.points_per_leg < 2 {
        return Err(DeviceError::InvalidParams("points_per_leg must be >= 2".into()));
    }
    match model {
        DeviceModel::Piecewise(p) => Ok(piecewise_sweep(p, sweep)),
        DeviceModel::Thermal(p) => thermal_sweep(p, sweep),
    }
}

fn ramp_voltages(sweep: &SweepSpec) -> impl Iterator<Item = (f64, SweepDir)> + '_ {
    let n = sweep.points_per_leg;
    let up = (0..n).map(move |k| (sweep.v_max * k as f64 / (n - 1) as f64, SweepDir::Up));
    let down = (0..n).map(move |k| (sweep.v_max * (1.0 - k as f64 / (n - 1) as f64), SweepDir::Down));
    up.chain(down)
}

fn piecewise_sweep(p: &PiecewiseParams, sweep: &SweepSpec) -> IvCurve {
    let mut state = PiecewiseState::default();
    let mut points = Vec::with_capacity(2 * sweep.points_per_leg + 2);
    let mut th = None;
    let mut hold = None;
    let mut prev_v = 0.0;
    for (v, dir) in ramp_voltages(sweep) {
        // Insert the exact crossing before the first grid point past it.
        let before = state.branch;
        let crossing = match (before, dir) {
            (Branch::Insulating, SweepDir::Up) if v >= p.v_th && prev_v < p.v_th => Some(p.v_th),
            (Branch::Metallic, SweepDir::Down) if v <= p.v_h && prev_v > p.v_h => Some(p.v_h),
            _ => None,
        };
        if let Some(vc) = crossing {
            let r_before = p.resistance(before);
            points.push(IvPoint { v: vc, i: vc / r_before, state: branch_code(before), dir });
            let (_, next) = piecewise_eval(state, vc, p);
            state = next;
            points.push(IvPoint { v: vc, i: vc / p.resistance(state.branch), state: branch_code(state.branch), dir });
            match dir {
                SweepDir::Up => th = Some((vc, r_before)),
                SweepDir::Down => hold = Some((vc, r_before)),
            }
        }
        let (r, next) = piecewise_eval(state, v, p);
        state = next;
        points.push(IvPoint { v, i: v / r, state: branch_code(state.branch), dir });
        prev_v = v;
    }
    let anchors = match (th, hold) {
        (Some((v_th, r_th)), Some((v_h, r_h))) => Some(IvAnchors { v_th, v_h, r_th, r_h }),
        _ => None,
    };
    IvCurve { points, anchors, thermal: false }
}

fn branch_code(b: Branch) -> f64 {
    match b {
        Branch::Insulating => 0.0,
        Branch::Metallic => 1.0,
    }
}

struct RampedDevice {
    p: ThermalImtParams,
    leg_time: f64,
    v_max: f64,
}

impl RampedDevice {
    fn voltage(&self, t: f64) -> f64 {
        let slope = self.v_max / self.leg_time;
        if t <= self.leg_time {
            slope * t
        } else {
            (self.v_max - slope * (t - self.leg_time)).max(0.0)
        }
    }

    fn voltage_rate(&self, t: f64) -> f64 {
        let slope = self.v_max / self.leg_time;
        if t < self.leg_time {
            slope
        } else {
            -slope
        }
    }
}

// state: area fraction w = u^2
impl OdeSystem<1> for RampedDevice {
    fn rhs(&self, t: f64, y: &[f64; 1]) -> [f64; 1] {
        [self.p.area_rate(y[0], self.voltage(t))]
    }

    fn jacobian(&self, t: f64, y: &[f64; 1]) -> [[f64; 1]; 1] {
        [[self.p.area_rate_partials(y[0], self.voltage(t)).0]]
    }

    fn time_derivative(&self, t: f64, y: &[f64; 1]) -> [f64; 1] {
        let (_, d_dv) = self.p.area_rate_partials(y[0], self.voltage(t));
        [d_dv * self.voltage_rate(t)]
    }

    fn project(&self, y: &mut [f64; 1]) {
        y[0] = self.p.clamp_area(y[0]);
    }
}

fn thermal_sweep(p: &ThermalImtParams, sweep: &SweepSpec) -> Result<IvCurve, DeviceError> {
    let leg_time = sweep.leg_time_for(p);
    if sweep.v_max == 0.0 {
        let points = ramp_voltages(sweep)
            .map(|(v, dir)| IvPoint { v, i: 0.0, state: p.u_min, dir })
            .collect();
        return Ok(IvCurve { points, anchors: None, thermal: true });
    }
    let sys = RampedDevice { p: *p, leg_time, v_max: sweep.v_max };
    let n = sweep.points_per_leg;
    let times: Vec<f64> = (0..2 * n)
        .map(|k| {
            if k < n {
                leg_time * k as f64 / (n - 1) as f64
            } else {
                leg_time + leg_time * (k - n) as f64 / (n - 1) as f64
            }
        })
        .collect();
    let ctl = StepControl {
        rtol: 1e-7,
        atol: 1e-9,
        max_step: leg_time / 200.0,
        initial_step: p.thermal_time_constant() * 1e-3,
        min_step: 1e-18,
        max_steps: 50_000_000,
    };
    let mut points = Vec::with_capacity(2 * n);
    let mut last_u = p.u_min;
    integrator::integrate_sampled(&sys, 0.0, [p.u_min * p.u_min], &times, &ctl, |k, t, y| {
        let u = p.clamp_area(y[0]).sqrt();
        last_u = u;
        let v = sys.voltage(t);
        let dir = if k < n { SweepDir::Up } else { SweepDir::Down };
        points.push(IvPoint { v, i: v * p.conductance(u), state: u, dir });
    })
    .map_err(|e| DeviceError::NotConverged {
        v: sys.voltage(e.time()),
        u: last_u,
        reason: e.to_string(),
    })?;
    let anchors = extract_anchors(&points, n);
    Ok(IvCurve { points, anchors, thermal: true })
}

/// Threshold is where the ascent leaves the insulating branch, hold is where
/// the descent leaves the metallic branch. Both sit at a fold of v(u), so the
/// last branch points are refined to the vertex of a local quadratic fit of
/// v and i against the state.
fn extract_anchors(points: &[IvPoint], n: usize) -> Option<IvAnchors> {
    const JUMP: f64 = 1.5;
    let (up, down) = points.split_at(n);
    let jump_up = up
        .windows(2)
        .position(|w| w[0].i > 0.0 && w[1].i / w[0].i > JUMP * w[1].v / w[0].v)?;
    let jump_down = down
        .windows(2)
        .position(|w| w[1].i > 0.0 && w[0].i / w[1].i > JUMP * w[0].v / w[1].v)?;
    let (v_th, i_th) = fold_vertex(&up[..=jump_up], true);
    let (v_h, i_h) = fold_vertex(&down[..=jump_down], false);
    Some(IvAnchors { v_th, v_h, r_th: v_th / i_th, r_h: v_h / i_h })
}

fn fold_vertex(branch: &[IvPoint], maximum: bool) -> (f64, f64) {
    const FIT: usize = 8;
    let last = branch[branch.len() - 1];
    if branch.len() < FIT {
        return (last.v, last.i);
    }
    let pts = &branch[branch.len() - FIT..];
    let u0 = last.state;
    let span = pts.iter().map(|p| (p.state - u0).abs()).fold(0.0, f64::max);
    if span == 0.0 {
        return (last.v, last.i);
    }
    let xs: Vec<f64> = pts.iter().map(|p| (p.state - u0) / span).collect();
    let Some(cv) = quadratic_fit(&xs, &pts.iter().map(|p| p.v).collect::<Vec<_>>()) else {
        return (last.v, last.i);
    };
    let Some(ci) = quadratic_fit(&xs, &pts.iter().map(|p| p.i).collect::<Vec<_>>()) else {
        return (last.v, last.i);
    };
    let curved_right_way = if maximum { cv[2] < 0.0 } else { cv[2] > 0.0 };
    if !curved_right_way {
        return (last.v, last.i);
    }
    // the vertex may lie slightly past the last recorded point, never far
    let x = (-cv[1] / (2.0 * cv[2])).clamp(-1.0, 1.0);
    let eval = |c: &[f64; 3]| c[0] + c[1] * x + c[2] * x * x;
    (eval(&cv), eval(&ci))
}

fn quadratic_fit(x: &[f64], y: &[f64]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let p = [1.0, xi, xi * xi];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += p[r] * p[c];
            }
            b[r] += p[r] * yi;
        }
    }
    // Cramer's rule on the 3x3 normal equations
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        *o = det3(&m) / d;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn piecewise_examples() {
        let p = PiecewiseParams::table_s1();
        let ins = PiecewiseState { branch: Branch::Insulating };
        let met = PiecewiseState { branch: Branch::Metallic };
        assert_eq!(piecewise_eval(ins, 0.0, &p), (49e3, ins));
        assert_eq!(piecewise_eval(ins, 1.448, &p), (850.0, met));
        assert_eq!(piecewise_eval(met, 1.0, &p), (850.0, met));
        assert_eq!(piecewise_eval(met, 0.746, &p), (49e3, ins));
        assert_eq!(piecewise_eval(ins, 1.0, &p), (49e3, ins));
    }

    #[test]
    fn piecewise_rejects_bad_params() {
        let mut p = PiecewiseParams::table_s1();
        p.r_on = 60e3;
        assert!(p.validate().is_err());
        let mut p = PiecewiseParams::table_s1();
        p.v_h = 2.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn memristance_limits() {
        let p = ThermalImtParams::table_s2();
        // closed forms: l*rho/(pi r^2)
        let r_ins = 20e-9 * 7e-3 / (PI * 9e-16);
        let r_met = 20e-9 * 1e-4 / (PI * 9e-16);
        assert_relative_eq!(p.r_insulating_limit(), r_ins, max_relative = 1e-12);
        assert_relative_eq!(p.r_metallic_limit(), r_met, max_relative = 1e-12);
        assert_relative_eq!(r_ins, 49.5e3, max_relative = 1e-3);
        assert_relative_eq!(r_met, 707.0, max_relative = 1e-3);
        assert!((r_ins - 49e3).abs() / 49e3 < 0.02);
        // the formula evaluated at the limits themselves
        assert_relative_eq!(1.0 / p.conductance(0.0), r_ins, max_relative = 1e-9);
        assert_relative_eq!(1.0 / p.conductance(1.0), r_met, max_relative = 1e-9);
    }

    #[test]
    fn memristance_inverse_at_41k() {
        let p = ThermalImtParams::table_s2();
        let u = bisect(p.u_min, 0.5, |u| 1.0 / p.conductance(u) - 41e3);
        assert!((u - 0.0545).abs() < 5e-4, "u = {u}");
        assert_relative_eq!(thermal_memristance(u, &p).unwrap(), 41e3, max_relative = 1e-9);
    }

    #[test]
    fn memristance_domain_error() {
        let p = ThermalImtParams::table_s2();
        assert!(matches!(thermal_memristance(0.0, &p), Err(DeviceError::Domain { .. })));
        assert!(matches!(thermal_memristance(1.0, &p), Err(DeviceError::Domain { .. })));
        assert!(thermal_state_derivative(1.5, 0.0, &p).is_err());
    }

    #[test]
    fn cooling_only_without_current() {
        let p = ThermalImtParams::table_s2();
        for u in [0.02, 0.1, 0.5, 0.9] {
            assert!(thermal_state_derivative(u, 0.0, &p).unwrap() < 0.0);
        }
        // clamped at the lower bound
        assert_eq!(thermal_state_derivative(p.u_min, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn power_balance_near_threshold_and_hold() {
        let p = ThermalImtParams::table_s2();
        let u_th = bisect(p.u_min, 0.5, |u| 1.0 / p.conductance(u) - 41e3);
        let v = p.balance_voltage(u_th);
        assert!((v - 1.448).abs() / 1.448 < 0.005, "v = {v}");
        let i = v / 41e3;
        assert!(thermal_state_derivative(u_th, i, &p).unwrap().abs() < 1e-3);

        let u_h = bisect(0.3, 0.9, |u| 1.0 / p.conductance(u) - 1.98e3);
        assert!((u_h - 0.59).abs() < 0.01, "u_h = {u_h}");
        let v = p.balance_voltage(u_h);
        assert!((v - 0.746).abs() / 0.746 < 0.005, "v = {v}");
        assert!(thermal_state_derivative(u_h, v / 1.98e3, &p).unwrap().abs() < 1e-3);
    }

    #[test]
    fn area_rate_is_consistent_with_radius_rate() {
        let p = ThermalImtParams::table_s2();
        for &(u, v) in &[(0.05, 1.4), (0.3, 1.0), (0.7, 0.9), (0.9, 0.2)] {
            // dw/dt = 2 u du/dt
            assert_relative_eq!(p.area_rate(u * u, v), 2.0 * u * p.rate_from_voltage(u, v), max_relative = 1e-12);
            let w = u * u;
            let (dw, dv) = p.area_rate_partials(w, v);
            let hw = 1e-7 * w;
            let fd_w = (p.area_rate(w + hw, v) - p.area_rate(w - hw, v)) / (2.0 * hw);
            let fd_v = (p.area_rate(w, v + 1e-7) - p.area_rate(w, v - 1e-7)) / 2e-7;
            assert_relative_eq!(dw, fd_w, max_relative = 1e-5);
            assert_relative_eq!(dv, fd_v, max_relative = 1e-5);
        }
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let p = ThermalImtParams::table_s2();
        for &(u, v) in &[(0.05, 1.4), (0.3, 1.0), (0.7, 0.9), (0.9, 0.2)] {
            let (du, dv) = p.rate_partials(u, v);
            let hu = 1e-7 * u;
            let fd_u = (p.rate_from_voltage(u + hu, v) - p.rate_from_voltage(u - hu, v)) / (2.0 * hu);
            let fd_v = (p.rate_from_voltage(u, v + 1e-7) - p.rate_from_voltage(u, v - 1e-7)) / 2e-7;
            assert_relative_eq!(du, fd_u, max_relative = 1e-5);
            assert_relative_eq!(dv, fd_v, max_relative = 1e-5);
        }
    }

    #[test]
    fn piecewise_sweep_anchors_exact() {
        let curve = quasistatic_iv_sweep(&DeviceModel::Piecewise(PiecewiseParams::table_s1()), &SweepSpec::default()).unwrap();
        let a = curve.anchors.unwrap();
        assert_eq!(a.v_th, 1.448);
        assert_eq!(a.v_h, 0.746);
        assert_eq!(a.r_th, 49e3);
        assert_eq!(a.r_h, 850.0);
    }

    #[test]
    fn zero_amplitude_sweep_has_no_switching() {
        let spec = SweepSpec { v_max: 0.0, points_per_leg: 50, ..SweepSpec::default() };
        for model in [
            DeviceModel::Thermal(ThermalImtParams::table_s2()),
            DeviceModel::Piecewise(PiecewiseParams::table_s1()),
        ] {
            let curve = quasistatic_iv_sweep(&model, &spec).unwrap();
            assert!(curve.no_switching());
            assert!(curve.points.iter().all(|p| p.i == 0.0));
        }
    }

    #[test]
    fn sub_threshold_sweep_does_not_switch() {
        let spec = SweepSpec { v_max: 1.0, points_per_leg: 500, ..SweepSpec::default() };
        let curve = quasistatic_iv_sweep(&DeviceModel::Thermal(ThermalImtParams::table_s2()), &spec).unwrap();
        assert!(curve.no_switching());
    }
}
