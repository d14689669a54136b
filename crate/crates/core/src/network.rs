//! Multi-input and multi-neuron circuits: the 9-input burst perceptron and
//! the three-neuron propagation chain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{integrate_network, CircuitError, Drive, NeuronNetwork, NeuronParams, NeuronState, SimControl, Source, Trace};
use crate::spikes::{classify, BurstProfile, DetectorConfig, GapRule, Regime};
use crate::sweep::{simulate_circuit, Cell, SweepSettings};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("chain integration failed: {0}")]
    Circuit(#[from] CircuitError),
}

pub const PIXEL_HIGH: f64 = 0.6;
pub const PIXEL_LOW: f64 = 0.1;

/// A 3x3 binary input image, row-major, as pixel voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub label: String,
    pub pixels: [f64; 9],
}

impl Pattern {
    /// Build from the 1-based indices of the high pixels.
    pub fn from_high(label: &str, high: &[usize]) -> Result<Self, NetworkError> {
        let mut pixels = [PIXEL_LOW; 9];
        for &k in high {
            if !(1..=9).contains(&k) {
                return Err(NetworkError::Invalid(format!("pixel index {k} outside 1..=9")));
            }
            pixels[k - 1] = PIXEL_HIGH;
        }
        Ok(Self { label: label.to_string(), pixels })
    }

    pub fn letter_n() -> Self {
        Self::from_high("n", &[1, 3, 4, 5, 6, 7, 9]).expect("valid indices")
    }

    pub fn letter_z() -> Self {
        Self::from_high("z", &[1, 2, 3, 5, 7, 8, 9]).expect("valid indices")
    }

    pub fn letter_v() -> Self {
        Self::from_high("v", &[1, 3, 4, 6, 8]).expect("valid indices")
    }

    pub fn letters() -> Vec<Self> {
        vec![Self::letter_n(), Self::letter_z(), Self::letter_v()]
    }

    pub fn uniform(label: &str, v: f64) -> Self {
        Self { label: label.to_string(), pixels: [v; 9] }
    }
}

/// Per-pixel synapse resistances, ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseBank {
    pub resistances: [f64; 9],
}

impl SynapseBank {
    pub const MIN: f64 = 5e3;
    pub const MAX: f64 = 50e3;

    /// Weights produced by [`calibrate_synapses`] for the default letters,
    /// started from [`SynapseBank::search_start`]. Counts with the default
    /// sweep settings: n 15, z 16, v 14.
    pub fn calibrated() -> Self {
        Self { resistances: [50e3, 25e3, 50e3, 50e3, 50e3, 50e3, 50e3, 25e3, 50e3] }
    }

    /// Starting point for the calibration search: weakest synapses, with the
    /// two pixels that separate 'z' from 'n' strengthened.
    pub fn search_start() -> Self {
        Self { resistances: [50e3, 25e3, 50e3, 50e3, 50e3, 50e3, 50e3, 25e3, 50e3] }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        match self.resistances.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            Some(r) => Err(NetworkError::Invalid(format!("synapse resistance must be positive, got {r}"))),
            None => Ok(()),
        }
    }

    /// Thevenin equivalent (voltage, resistance) of the nine branches.
    pub fn thevenin(&self, pat: &Pattern) -> (f64, f64) {
        let g: f64 = self.resistances.iter().map(|r| 1.0 / r).sum();
        let i: f64 = self.resistances.iter().zip(&pat.pixels).map(|(r, v)| v / r).sum();
        (i / g, 1.0 / g)
    }
}

/// The perceptron neuron: the calculation-table circuit with C1 = 25 nF.
pub fn perceptron_neuron() -> NeuronParams {
    NeuronParams::table_s1(0.0, 1.0).with_capacitances(25e-9, 0.5e-9)
}

/// Drive one neuron with the nine pixel voltages through their synapses and
/// classify its output.
pub fn perceptron_forward(pat: &Pattern, w: &SynapseBank, p: &NeuronParams, s: &SweepSettings) -> Result<Cell, NetworkError> {
    w.validate()?;
    p.validate()?;
    let mut circ = p.circuit();
    circ.drives = w
        .resistances
        .iter()
        .zip(&pat.pixels)
        .map(|(&r, &v)| Drive::Voltage { source: Source::Dc(v), r })
        .collect();
    let (v_eq, r_eq) = w.thevenin(pat);
    let equivalent = NeuronParams { v_in: Source::Dc(v_eq), r_in: r_eq, ..p.clone() };
    let run = simulate_circuit(&circ, &NeuronState::cold(p), s.initial_duration(&equivalent), s);
    Ok(Cell { v_in: v_eq, r_in: r_eq, ..run.cell })
}

/// Result of a synapse calibration search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bank: SynapseBank,
    pub counts: Vec<u32>,
    pub cost: f64,
    pub evaluations: usize,
}

/// `control` is the count of a negative-control pattern, which must be silent
/// or differ from every pattern count.
fn calibration_cost(counts: &[u32], targets: &[u32], control: Option<u32>) -> f64 {
    let miss: f64 = counts.iter().zip(targets).map(|(&c, &t)| (c as f64 - t as f64).abs()).sum();
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let clashes = counts.len() - sorted.len();
    let silent = counts.iter().filter(|&&c| c < 2).count();
    let control_clash = control.is_some_and(|c| c != 0 && counts.contains(&c));
    miss + 100.0 * (clashes + silent + control_clash as usize) as f64
}

/// Coordinate search over per-pixel resistances on a log grid in
/// [`SynapseBank::MIN`, `SynapseBank::MAX`]: each sweep tries every grid
/// value for every pixel and keeps strict improvements, stopping when a
/// sweep changes nothing or the target counts are met. A `control` pattern,
/// if given, must end up silent or distinct from every pattern.
pub fn calibrate_synapses(
    patterns: &[Pattern],
    targets: &[u32],
    control: Option<&Pattern>,
    start: SynapseBank,
    grid_points: usize,
    max_sweeps: usize,
    p: &NeuronParams,
    s: &SweepSettings,
) -> Result<Calibration, NetworkError> {
    if patterns.len() != targets.len() || patterns.is_empty() {
        return Err(NetworkError::Invalid("one target count per pattern required".into()));
    }
    let grid: Vec<f64> = (0..grid_points.max(2))
        .map(|k| {
            let f = k as f64 / (grid_points.max(2) - 1) as f64;
            (SynapseBank::MIN.ln() + f * (SynapseBank::MAX / SynapseBank::MIN).ln()).exp().round()
        })
        .collect();
    let mut evaluations = 0;
    let all: Vec<&Pattern> = patterns.iter().chain(control).collect();
    let mut eval = |bank: &SynapseBank| -> Result<(Vec<u32>, f64), NetworkError> {
        evaluations += all.len();
        let cells = s.run(|| {
            use rayon::prelude::*;
            all.par_iter().map(|pat| perceptron_forward(pat, bank, p, s)).collect::<Result<Vec<_>, _>>()
        })?;
        let mut counts: Vec<u32> = cells.iter().map(Cell::spikes_per_period).collect();
        let ctl = control.map(|_| counts.pop().expect("control evaluated"));
        let cost = calibration_cost(&counts, targets, ctl);
        Ok((counts, cost))
    };
    let mut bank = start;
    let (mut counts, mut cost) = eval(&bank)?;
    for _ in 0..max_sweeps {
        let mut changed = false;
        for k in 0..9 {
            for &r in &grid {
                if cost == 0.0 {
                    break;
                }
                if r == bank.resistances[k] {
                    continue;
                }
                let mut trial = bank;
                trial.resistances[k] = r;
                let (c, trial_cost) = eval(&trial)?;
                if trial_cost < cost {
                    bank = trial;
                    counts = c;
                    cost = trial_cost;
                    changed = true;
                }
            }
        }
        if !changed || cost == 0.0 {
            break;
        }
    }
    Ok(Calibration { bank, counts, cost, evaluations })
}

/// Three neurons in series: N1 on a DC source through `r_m`, N1's output
/// node into N2 through `r_n`, N2's output into N3 through `r_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub neurons: [NeuronParams; 3],
    pub v_source: f64,
    pub r_m: f64,
    pub r_n: f64,
    pub r_q: f64,
}

impl ChainConfig {
    fn with_caps(caps: [(f64, f64); 3], v_source: f64) -> Self {
        let base = NeuronParams::table_s1(v_source, 10e3);
        Self {
            neurons: caps.map(|(c1, c2)| base.clone().with_capacitances(c1, c2)),
            v_source,
            r_m: 10e3,
            r_n: 10e3,
            r_q: 15e3,
        }
    }

    /// Capacitances that carry multi-spike bursts down the chain.
    pub fn burst() -> Self {
        Self::with_caps([(10e-9, 1e-9), (3e-9, 0.3e-9), (1e-9, 0.08e-9)], 0.5)
    }

    /// Capacitances that carry one spike per period down the chain.
    pub fn single_spike() -> Self {
        Self::with_caps([(8e-9, 4e-9), (3.5e-9, 2e-9), (2e-9, 1e-9)], 1.0)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        for (name, r) in [("r_m", self.r_m), ("r_n", self.r_n), ("r_q", self.r_q)] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(NetworkError::Invalid(format!("{name} must be positive, got {r}")));
            }
        }
        for n in &self.neurons {
            n.validate()?;
        }
        Ok(())
    }
}

/// Output of one neuron in a chain run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainNeuron {
    pub trace: Trace,
    pub profile: Option<BurstProfile>,
    pub error: Option<String>,
}

impl ChainNeuron {
    /// Spikes per period: the burst size, 1 for regular spiking, else 0.
    pub fn spikes_per_period(&self) -> u32 {
        match &self.profile {
            Some(p) if p.regime == Regime::Bursting => p.spikes_per_burst,
            Some(p) if p.regime == Regime::Continuous => 1,
            _ => 0,
        }
    }
}

/// Integrate the coupled three-neuron system for `t_end` seconds and
/// classify every neuron's output.
pub fn chain_simulate(
    cfg: &ChainConfig,
    t_end: f64,
    ctl: &SimControl,
    detector: &DetectorConfig,
    gap: &GapRule,
) -> Result<Vec<ChainNeuron>, NetworkError> {
    cfg.validate()?;
    let mut circuits: Vec<_> = cfg.neurons.iter().map(NeuronParams::circuit).collect();
    circuits[0].drives = vec![Drive::Voltage { source: Source::Dc(cfg.v_source), r: cfg.r_m }];
    circuits[1].drives = vec![Drive::Upstream { neuron: 0, r: cfg.r_n }];
    circuits[2].drives = vec![Drive::Upstream { neuron: 1, r: cfg.r_q }];
    let mut net = NeuronNetwork::<12>::new(circuits)?;
    let s0: Vec<NeuronState> = cfg.neurons.iter().map(NeuronState::cold).collect();
    let (traces, _, _) = integrate_network(&mut net, &s0, t_end, ctl)?;
    Ok(traces
        .into_iter()
        .map(|trace| {
            let (profile, error) = match classify(&trace, detector, gap) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ChainNeuron { trace, profile, error }
        })
        .collect())
}
