//! Experiment configuration: TOML with unit-suffixed keys, every field
//! defaulted from the calculation tables, unknown keys rejected.

use memneuron::boundary::BoundaryParams;
use memneuron::circuit::{DeviceState, NeuronParams, NeuronState, SimControl, Source};
use memneuron::device::{Branch, DeviceModel, PiecewiseParams, SweepSpec, ThermalImtParams};
use memneuron::integrator::StepControl;
use memneuron::network::{ChainConfig, Pattern, SynapseBank};
use memneuron::spikes::{DetectorConfig, GapRule};
use memneuron::sweep::{Axis, PhaseGrid, SweepSettings};
use serde::{Deserialize, Serialize};

const PRESETS: &[(&str, &str)] = &[
    ("tableS1", include_str!("../presets/tableS1.toml")),
    ("fig1f", include_str!("../presets/fig1f.toml")),
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig2c", include_str!("../presets/fig2c.toml")),
    ("fig2d", include_str!("../presets/fig2d.toml")),
    ("fig2e", include_str!("../presets/fig2e.toml")),
    ("fig2f", include_str!("../presets/fig2f.toml")),
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig3c", include_str!("../presets/fig3c.toml")),
    ("figS2", include_str!("../presets/figS2.toml")),
    ("figS2b", include_str!("../presets/figS2b.toml")),
    ("figS2c", include_str!("../presets/figS2c.toml")),
    ("figS3", include_str!("../presets/figS3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5b", include_str!("../presets/fig5b.toml")),
    ("fig5c", include_str!("../presets/fig5c.toml")),
];

/// `x · 10^pow10`, computed on the shortest decimal form of `x` so that unit
/// conversions land on the same double as the equivalent literal.
pub fn scaled(x: f64, pow10: i32) -> f64 {
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    format!("{mantissa}e{}", exp + pow10).parse().expect("float")
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Thermal,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub thermal: ThermalConfig,
    pub piecewise: PiecewiseConfig,
    pub neuron: NeuronConfig,
    pub simulate: SimConfig,
    pub sweep: SweepConfig,
    pub detector: DetectorToml,
    pub gap: GapToml,
    pub iv: IvConfig,
    pub activation: ActivationConfig,
    pub perceptron: PerceptronConfig,
    pub chain: ChainToml,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalConfig {
    pub t_imt_k: f64,
    pub t_amb_k: f64,
    pub kappa_w_per_m_k: f64,
    pub c_v_j_per_m3_k: f64,
    pub rho_met_ohm_m: f64,
    pub rho_ins_ohm_m: f64,
    pub r_ch_nm: f64,
    pub l_ch_nm: f64,
    pub dh_tx_j_per_m3: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        let p = ThermalImtParams::table_s2();
        Self {
            t_imt_k: p.t_imt,
            t_amb_k: p.t_amb,
            kappa_w_per_m_k: p.kappa,
            c_v_j_per_m3_k: p.c_v,
            rho_met_ohm_m: p.rho_met,
            rho_ins_ohm_m: p.rho_ins,
            r_ch_nm: scaled(p.r_ch, 9),
            l_ch_nm: scaled(p.l_ch, 9),
            dh_tx_j_per_m3: p.dh_tx,
            u_min: p.u_min,
            u_max: p.u_max,
        }
    }
}

impl ThermalConfig {
    pub fn params(&self) -> ThermalImtParams {
        ThermalImtParams {
            t_imt: self.t_imt_k,
            t_amb: self.t_amb_k,
            kappa: self.kappa_w_per_m_k,
            c_v: self.c_v_j_per_m3_k,
            rho_met: self.rho_met_ohm_m,
            rho_ins: self.rho_ins_ohm_m,
            r_ch: scaled(self.r_ch_nm, -9),
            l_ch: scaled(self.l_ch_nm, -9),
            dh_tx: self.dh_tx_j_per_m3,
            u_min: self.u_min,
            u_max: self.u_max,
        }
    }
}

/// Hard-switching device values and the critical resistances used by the
/// boundary lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiecewiseConfig {
    pub r_on_ohm: f64,
    pub r_off_kohm: f64,
    pub v_th_mv: f64,
    pub v_h_mv: f64,
    pub r_th_kohm: f64,
    pub r_h_kohm: f64,
}

impl Default for PiecewiseConfig {
    fn default() -> Self {
        let p = PiecewiseParams::table_s1();
        let b = BoundaryParams::table_s1();
        Self {
            r_on_ohm: p.r_on,
            r_off_kohm: scaled(p.r_off, -3),
            v_th_mv: scaled(p.v_th, 3),
            v_h_mv: scaled(p.v_h, 3),
            r_th_kohm: scaled(b.r_th, -3),
            r_h_kohm: scaled(b.r_h, -3),
        }
    }
}

impl PiecewiseConfig {
    pub fn params(&self) -> PiecewiseParams {
        PiecewiseParams { r_on: self.r_on_ohm, r_off: scaled(self.r_off_kohm, 3), v_th: scaled(self.v_th_mv, -3), v_h: scaled(self.v_h_mv, -3) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub c1_nf: f64,
    pub c2_nf: f64,
    pub r2_kohm: f64,
    pub v1_mv: f64,
    pub v2_mv: f64,
    pub v_in_mv: f64,
    pub r_in_kohm: f64,
    /// Initial node voltages; devices start insulating at `u_min`.
    pub v_na0_mv: f64,
    pub v_k0_mv: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        let p = NeuronParams::table_s1(0.4, 10e3);
        Self {
            c1_nf: scaled(p.c1, 9),
            c2_nf: scaled(p.c2, 9),
            r2_kohm: scaled(p.r2, -3),
            v1_mv: scaled(p.v1, 3),
            v2_mv: scaled(p.v2, 3),
            v_in_mv: 400.0,
            r_in_kohm: 10.0,
            v_na0_mv: 0.0,
            v_k0_mv: 0.0,
        }
    }
}

/// Step control for single-trace runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration_us: f64,
    pub rtol: f64,
    /// Absolute tolerance, applied to node voltages (V) and device states.
    pub atol: f64,
    pub max_step_ns: f64,
    pub sample_ns: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::from_control(&SimControl::default(), 500.0)
    }
}

impl SimConfig {
    fn from_control(c: &SimControl, duration_us: f64) -> Self {
        Self {
            duration_us,
            rtol: c.step.rtol,
            atol: c.step.atol,
            max_step_ns: scaled(c.step.max_step, 9),
            sample_ns: scaled(c.sample_dt, 9),
        }
    }

    pub fn control(&self) -> SimControl {
        let d = SimControl::default();
        SimControl {
            step: StepControl { rtol: self.rtol, atol: self.atol, max_step: scaled(self.max_step_ns, -9), ..d.step },
            sample_dt: scaled(self.sample_ns, -9),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// R_in × V_in phase diagram.
    #[default]
    RinVin,
    /// C1 × C2 grid at the neuron's operating point.
    Capacitance,
    /// Spikes-per-burst range over the R_in axis at the neuron's V_in, per C1.
    CountRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub v_in_start_mv: f64,
    pub v_in_end_mv: f64,
    pub v_in_points: usize,
    /// Explicit V_in values; replace the linear axis when set.
    pub v_in_mv_values: Option<Vec<f64>>,
    pub r_in_start_kohm: f64,
    pub r_in_end_kohm: f64,
    pub r_in_points: usize,
    pub r_in_kohm_values: Option<Vec<f64>>,
    pub c1_nf_values: Vec<f64>,
    pub c2_nf_values: Vec<f64>,
    pub periods: f64,
    pub duration_us: Option<f64>,
    pub min_duration_us: f64,
    pub max_extension: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step_ns: f64,
    pub sample_ns: f64,
    /// Compare the diagram against the analytic boundary lines.
    pub compare_boundaries: bool,
    pub boundary_rel_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let s = SweepSettings::default();
        let sim = SimConfig::from_control(&s.sim, 0.0);
        Self {
            kind: SweepKind::RinVin,
            v_in_start_mv: 0.0,
            v_in_end_mv: 1000.0,
            v_in_points: 101,
            v_in_mv_values: None,
            r_in_start_kohm: 0.25,
            r_in_end_kohm: 33.0,
            r_in_points: 132,
            r_in_kohm_values: None,
            c1_nf_values: vec![5.0],
            c2_nf_values: vec![0.5],
            periods: s.periods,
            duration_us: s.duration.map(|d| scaled(d, 6)),
            min_duration_us: scaled(s.min_duration, 6),
            max_extension: s.max_extension,
            rtol: sim.rtol,
            atol: sim.atol,
            max_step_ns: sim.max_step_ns,
            sample_ns: sim.sample_ns,
            compare_boundaries: true,
            boundary_rel_tolerance: 0.05,
        }
    }
}

impl SweepConfig {
    pub fn v_in(&self) -> Vec<f64> {
        match &self.v_in_mv_values {
            Some(v) => v.iter().map(|&x| scaled(x, -3)).collect(),
            None => Axis::new(scaled(self.v_in_start_mv, -3), scaled(self.v_in_end_mv, -3), self.v_in_points).values(),
        }
    }

    pub fn r_in(&self) -> Vec<f64> {
        match &self.r_in_kohm_values {
            Some(v) => v.iter().map(|&x| scaled(x, 3)).collect(),
            None => Axis::new(scaled(self.r_in_start_kohm, 3), scaled(self.r_in_end_kohm, 3), self.r_in_points).values(),
        }
    }

    pub fn grid(&self) -> PhaseGrid {
        PhaseGrid { v_in: self.v_in(), r_in: self.r_in() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorToml {
    pub transient_fraction: f64,
    pub prominence: f64,
    pub min_isi_ns: f64,
    pub noise_floor_mv: f64,
    pub threshold_shift: f64,
}

impl Default for DetectorToml {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            transient_fraction: d.transient_fraction,
            prominence: d.prominence,
            min_isi_ns: scaled(d.min_isi, 9),
            noise_floor_mv: scaled(d.noise_floor, 3),
            threshold_shift: d.threshold_shift,
        }
    }
}

impl DetectorToml {
    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            transient_fraction: self.transient_fraction,
            prominence: self.prominence,
            min_isi: scaled(self.min_isi_ns, -9),
            noise_floor: scaled(self.noise_floor_mv, -3),
            threshold_shift: self.threshold_shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapToml {
    pub jump_factor: f64,
    pub factor: f64,
    pub cv_continuous: f64,
    pub stationarity: f64,
    pub min_bursts: usize,
    pub min_isis: usize,
}

impl Default for GapToml {
    fn default() -> Self {
        let g = GapRule::default();
        Self {
            jump_factor: g.jump_factor,
            factor: g.factor,
            cv_continuous: g.cv_continuous,
            stationarity: g.stationarity,
            min_bursts: g.min_bursts,
            min_isis: g.min_isis,
        }
    }
}

impl GapToml {
    pub fn rule(&self) -> GapRule {
        GapRule {
            jump_factor: self.jump_factor,
            factor: self.factor,
            cv_continuous: self.cv_continuous,
            stationarity: self.stationarity,
            min_bursts: self.min_bursts,
            min_isis: self.min_isis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvConfig {
    pub v_max_mv: f64,
    pub leg_time_us: Option<f64>,
    pub leg_factor: f64,
    pub points_per_leg: usize,
}

impl Default for IvConfig {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self { v_max_mv: scaled(s.v_max, 3), leg_time_us: s.leg_time.map(|t| scaled(t, 6)), leg_factor: s.leg_factor, points_per_leg: s.points_per_leg }
    }
}

impl IvConfig {
    pub fn spec(&self) -> SweepSpec {
        SweepSpec {
            v_max: scaled(self.v_max_mv, -3),
            leg_time: self.leg_time_us.map(|t| scaled(t, -6)),
            leg_factor: self.leg_factor,
            points_per_leg: self.points_per_leg,
        }
    }
}

/// Current-driven activation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    pub i_start_ua: f64,
    pub i_end_ua: f64,
    pub points: usize,
    pub i_ua_values: Option<Vec<f64>>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self { i_start_ua: 5.0, i_end_ua: 225.0, points: 23, i_ua_values: None }
    }
}

impl ActivationConfig {
    pub fn amplitudes(&self) -> Vec<f64> {
        match &self.i_ua_values {
            Some(v) => v.iter().map(|&x| scaled(x, -6)).collect(),
            None => Axis::new(scaled(self.i_start_ua, -6), scaled(self.i_end_ua, -6), self.points).values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternToml {
    pub label: String,
    /// 1-based, row-major indices of the high pixels.
    pub high: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptronConfig {
    pub patterns: Vec<PatternToml>,
    pub high_mv: f64,
    pub low_mv: f64,
    pub synapses_kohm: Vec<f64>,
    pub calibrate: bool,
    pub targets: Vec<u32>,
    pub calibration_grid_points: usize,
    pub calibration_sweeps: usize,
}

impl Default for PerceptronConfig {
    fn default() -> Self {
        let high = |p: &Pattern| (1..=9).filter(|&k| p.pixels[k - 1] == memneuron::network::PIXEL_HIGH).collect();
        Self {
            patterns: Pattern::letters().iter().map(|p| PatternToml { label: p.label.clone(), high: high(p) }).collect(),
            high_mv: scaled(memneuron::network::PIXEL_HIGH, 3),
            low_mv: scaled(memneuron::network::PIXEL_LOW, 3),
            synapses_kohm: SynapseBank::calibrated().resistances.iter().map(|&r| scaled(r, -3)).collect(),
            calibrate: false,
            targets: vec![16, 17, 18],
            calibration_grid_points: 8,
            calibration_sweeps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainToml {
    pub c1_nf: [f64; 3],
    pub c2_nf: [f64; 3],
    pub v_source_mv: f64,
    pub r_m_kohm: f64,
    pub r_n_kohm: f64,
    pub r_q_kohm: f64,
    pub duration_us: f64,
}

impl Default for ChainToml {
    fn default() -> Self {
        let c = ChainConfig::burst();
        Self {
            c1_nf: c.neurons.each_ref().map(|n| scaled(n.c1, 9)),
            c2_nf: c.neurons.each_ref().map(|n| scaled(n.c2, 9)),
            v_source_mv: scaled(c.v_source, 3),
            r_m_kohm: scaled(c.r_m, -3),
            r_n_kohm: scaled(c.r_n, -3),
            r_q_kohm: scaled(c.r_q, -3),
            duration_us: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Primary output file; `--out` takes precedence.
    pub path: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_toml(preset_source(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?)
    }

    pub fn from_file(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_string(), source })?;
        Self::from_toml(&text)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.neuron_params().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.device_model().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let sim = self.simulate.control();
        if !(self.simulate.duration_us > 0.0) {
            return bad("simulate.duration_us must be positive".into());
        }
        for (name, c) in [("simulate", sim), ("sweep", self.sweep_settings(None).sim)] {
            if !(c.step.rtol > 0.0 && c.step.atol > 0.0 && c.step.max_step > 0.0 && c.sample_dt > 0.0) {
                return bad(format!("{name}: tolerances, max_step_ns and sample_ns must be positive"));
            }
        }
        if self.sweep.r_in().iter().any(|&r| !(r > 0.0)) {
            return bad("sweep R_in values must be positive".into());
        }
        if self.sweep.c1_nf_values.iter().chain(&self.sweep.c2_nf_values).any(|&c| !(c > 0.0)) {
            return bad("sweep capacitances must be positive".into());
        }
        if !(self.sweep.periods > 0.0 && self.sweep.max_extension >= 1.0) {
            return bad("sweep.periods must be positive and sweep.max_extension at least 1".into());
        }
        let d = &self.detector;
        if !(0.0..1.0).contains(&d.transient_fraction) || !(d.prominence >= 0.0) || !(d.min_isi_ns >= 0.0) {
            return bad("detector: transient_fraction in [0, 1), prominence and min_isi_ns non-negative".into());
        }
        if !(self.gap.factor > 1.0 && self.gap.jump_factor > 1.0) {
            return bad("gap factors must exceed 1".into());
        }
        if self.activation.amplitudes().iter().any(|&i| !(i >= 0.0)) {
            return bad("activation amplitudes must be non-negative".into());
        }
        if self.perceptron.synapses_kohm.len() != 9 {
            return bad(format!("perceptron.synapses_kohm needs 9 values, got {}", self.perceptron.synapses_kohm.len()));
        }
        self.synapses().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.patterns()?;
        if self.perceptron.calibrate && self.perceptron.targets.len() != self.perceptron.patterns.len() {
            return bad("perceptron.targets needs one count per pattern".into());
        }
        self.chain_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.chain.duration_us > 0.0) {
            return bad("chain.duration_us must be positive".into());
        }
        if !(self.iv.v_max_mv > 0.0 && self.iv.points_per_leg >= 2) {
            return bad("iv.v_max_mv must be positive and iv.points_per_leg at least 2".into());
        }
        Ok(())
    }

    pub fn device_model(&self) -> DeviceModel {
        match self.model {
            ModelKind::Thermal => DeviceModel::Thermal(self.thermal.params()),
            ModelKind::Piecewise => DeviceModel::Piecewise(self.piecewise.params()),
        }
    }

    pub fn neuron_params(&self) -> NeuronParams {
        let n = &self.neuron;
        let d = self.device_model();
        NeuronParams {
            c1: scaled(n.c1_nf, -9),
            c2: scaled(n.c2_nf, -9),
            r_in: scaled(n.r_in_kohm, 3),
            r2: scaled(n.r2_kohm, 3),
            v1: scaled(n.v1_mv, -3),
            v2: scaled(n.v2_mv, -3),
            v_in: Source::Dc(scaled(n.v_in_mv, -3)),
            device1: d,
            device2: d,
        }
    }

    pub fn initial_state(&self) -> NeuronState {
        let p = self.neuron_params();
        let cold = NeuronState::cold(&p);
        NeuronState {
            v_na: scaled(self.neuron.v_na0_mv, -3),
            v_k: scaled(self.neuron.v_k0_mv, -3),
            x1: DeviceState { branch: Branch::Insulating, ..cold.x1 },
            x2: DeviceState { branch: Branch::Insulating, ..cold.x2 },
        }
    }

    pub fn boundary_params(&self) -> BoundaryParams {
        let p = self.neuron_params();
        let pw = self.piecewise.params();
        BoundaryParams {
            r_on: pw.r_on,
            r_off: pw.r_off,
            r_th: scaled(self.piecewise.r_th_kohm, 3),
            r_h: scaled(self.piecewise.r_h_kohm, 3),
            v_th: pw.v_th,
            v_h: pw.v_h,
            r2: p.r2,
            v1: p.v1,
            v2: p.v2,
        }
    }

    pub fn sweep_settings(&self, threads: Option<usize>) -> SweepSettings {
        let s = &self.sweep;
        let sim = SimConfig { duration_us: 0.0, rtol: s.rtol, atol: s.atol, max_step_ns: s.max_step_ns, sample_ns: s.sample_ns };
        SweepSettings {
            sim: sim.control(),
            detector: self.detector.config(),
            gap: self.gap.rule(),
            duration: s.duration_us.map(|d| scaled(d, -6)),
            periods: s.periods,
            min_duration: scaled(s.min_duration_us, -6),
            max_extension: s.max_extension,
            threads,
        }
    }

    pub fn patterns(&self) -> Result<Vec<Pattern>, ConfigError> {
        let (hi, lo) = (scaled(self.perceptron.high_mv, -3), scaled(self.perceptron.low_mv, -3));
        self.perceptron
            .patterns
            .iter()
            .map(|p| {
                let base = Pattern::from_high(&p.label, &p.high).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let pixels = base.pixels.map(|v| if v == memneuron::network::PIXEL_HIGH { hi } else { lo });
                Ok(Pattern { label: base.label, pixels })
            })
            .collect()
    }

    pub fn synapses(&self) -> SynapseBank {
        let mut r = [0.0; 9];
        for (dst, src) in r.iter_mut().zip(&self.perceptron.synapses_kohm) {
            *dst = scaled(*src, 3);
        }
        SynapseBank { resistances: r }
    }

    pub fn chain_config(&self) -> ChainConfig {
        let c = &self.chain;
        // Chain drives replace each neuron's own input branch.
        let base = NeuronParams { v_in: Source::Dc(scaled(c.v_source_mv, -3)), r_in: scaled(c.r_m_kohm, 3), ..self.neuron_params() };
        ChainConfig {
            neurons: [0, 1, 2].map(|k| base.clone().with_capacitances(scaled(c.c1_nf[k], -9), scaled(c.c2_nf[k], -9))),
            v_source: scaled(c.v_source_mv, -3),
            r_m: scaled(c.r_m_kohm, 3),
            r_n: scaled(c.r_n_kohm, 3),
            r_q: scaled(c.r_q_kohm, 3),
        }
    }
}
