//! Parallel parameter sweeps: R_in–V_in phase diagrams, capacitance
//! studies and activation curves.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryExport, BoundaryLine};
use crate::circuit::{integrate_circuit, Drive, NeuronCircuit, NeuronParams, NeuronState, SimControl, Source, Trace};
use crate::spikes::{classify, BurstProfile, DetectorConfig, GapRule, MetricsError, Regime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error("no firing at any amplitude: below threshold everywhere")]
    BelowThreshold,
}

/// Inclusive, evenly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(start: f64, end: f64, n: usize) -> Self {
        Self { start, end, n }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.n {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n).map(|k| self.start + (self.end - self.start) * k as f64 / (n - 1) as f64).collect(),
        }
    }

    pub fn step(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.end - self.start) / (self.n - 1) as f64
        }
    }
}

/// Grid point values, V and ohms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub v_in: Vec<f64>,
    pub r_in: Vec<f64>,
}

impl PhaseGrid {
    pub fn linear(v_in: Axis, r_in: Axis) -> Self {
        Self { v_in: v_in.values(), r_in: r_in.values() }
    }
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self::linear(Axis::new(0.0, 1.0, 101), Axis::new(250.0, 33e3, 132))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub sim: SimControl,
    pub detector: DetectorConfig,
    pub gap: GapRule,
    /// First simulated duration, s; derived from the circuit when `None`.
    pub duration: Option<f64>,
    /// Estimated inter-burst periods covered by the first run.
    pub periods: f64,
    /// Floor on the first duration, s.
    pub min_duration: f64,
    /// Cap on duration growth relative to the first run.
    pub max_extension: f64,
    /// Worker threads; all available when `None`.
    pub threads: Option<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            sim: SimControl::sweep(),
            detector: DetectorConfig::default(),
            gap: GapRule::default(),
            duration: None,
            periods: 10.0,
            min_duration: 1e-4,
            max_extension: 8.0,
            threads: None,
        }
    }
}

impl SweepSettings {
    /// First-run duration for one operating point: `periods` times the
    /// slow-node time constant C1·R_in, which tracks the inter-burst period.
    pub fn initial_duration(&self, p: &NeuronParams) -> f64 {
        let d = self.duration.unwrap_or(self.periods * p.c1 * p.r_in).max(self.min_duration);
        (d / self.sim.sample_dt).ceil() * self.sim.sample_dt
    }

    /// Run `f` on a pool with the configured worker count.
    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map(|pool| pool.install(f))
                .unwrap_or_else(|e| panic!("thread pool: {e}")),
            None => f(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellRegime {
    Classified(Regime),
    /// Still ambiguous at the longest allowed duration.
    Unresolved,
    /// The integrator failed.
    Failed,
}

impl CellRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            CellRegime::Classified(r) => r.as_str(),
            CellRegime::Unresolved => "unresolved",
            CellRegime::Failed => "failed",
        }
    }

    pub fn regime(self) -> Option<Regime> {
        match self {
            CellRegime::Classified(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub v_in: f64,
    pub r_in: f64,
    pub regime: CellRegime,
    pub spikes_per_burst: u32,
    pub duty_cycle: f64,
    pub inter_burst_freq_hz: f64,
    pub stationary: bool,
    /// Simulated duration, s.
    pub duration: f64,
    pub profile: Option<BurstProfile>,
    pub error: Option<String>,
}

impl Cell {
    pub fn is_bursting(&self) -> bool {
        self.regime == CellRegime::Classified(Regime::Bursting)
    }

    /// Spikes per period: bursting count, 1 for continuous, 0 otherwise.
    pub fn spikes_per_period(&self) -> u32 {
        match self.regime {
            CellRegime::Classified(Regime::Bursting) => self.spikes_per_burst,
            CellRegime::Classified(Regime::Continuous) => 1,
            _ => 0,
        }
    }
}

/// One simulated operating point with its trace.
pub struct CellRun {
    pub cell: Cell,
    pub trace: Option<Trace>,
}

/// Simulate one operating point from a cold start, extending the run while
/// the classifier asks for a longer trace.
pub fn simulate_point(p: &NeuronParams, s: &SweepSettings) -> CellRun {
    let mut run = simulate_circuit(&p.circuit(), &NeuronState::cold(p), s.initial_duration(p), s);
    run.cell.v_in = p.v_in.value(0.0);
    run.cell.r_in = p.r_in;
    if let Some(tr) = run.trace.as_mut() {
        tr.params = Some(p.clone());
    }
    run
}

/// Simulate an arbitrary single-neuron circuit for `first` seconds and keep
/// extending it, up to the configured cap, until the classifier is satisfied.
pub fn simulate_circuit(circ: &NeuronCircuit, s0: &NeuronState, first: f64, s: &SweepSettings) -> CellRun {
    let blank = |regime, duration, error| Cell {
        v_in: 0.0,
        r_in: 0.0,
        regime,
        spikes_per_burst: 0,
        duty_cycle: 0.0,
        inter_burst_freq_hz: 0.0,
        stationary: false,
        duration,
        profile: None,
        error,
    };
    let cap = first * s.max_extension;
    let (mut trace, mut state) = match integrate_circuit(circ, s0, first, &s.sim) {
        Ok(v) => v,
        Err(e) => return CellRun { cell: blank(CellRegime::Failed, first, Some(e.to_string())), trace: None },
    };
    loop {
        let duration = trace.duration();
        let want = match classify(&trace, &s.detector, &s.gap) {
            Ok(profile) => {
                let cell = Cell {
                    regime: CellRegime::Classified(profile.regime),
                    spikes_per_burst: profile.spikes_per_burst,
                    duty_cycle: profile.duty_cycle,
                    inter_burst_freq_hz: profile.inter_burst_frequency,
                    stationary: profile.stationary,
                    profile: Some(profile),
                    ..blank(CellRegime::Unresolved, duration, None)
                };
                return CellRun { cell, trace: Some(trace) };
            }
            Err(MetricsError::NeedsLongerTrace { want, .. }) => want / (1.0 - s.detector.transient_fraction),
            Err(MetricsError::TraceTooShort { .. }) => 2.0 * duration,
        };
        if duration >= cap * (1.0 - 1e-6) {
            let msg = "needs a longer trace than the extension cap allows".to_string();
            return CellRun { cell: blank(CellRegime::Unresolved, duration, Some(msg)), trace: Some(trace) };
        }
        let next = want.max(2.0 * duration).min(cap);
        let extra = ((next - duration) / s.sim.sample_dt).round().max(1.0) * s.sim.sample_dt;
        match integrate_circuit(circ, &state, extra, &s.sim) {
            Ok((seg, fin)) => {
                trace.append(&seg);
                state = fin;
            }
            Err(e) => {
                return CellRun { cell: blank(CellRegime::Failed, duration, Some(e.to_string())), trace: Some(trace) }
            }
        }
    }
}

fn with_point(p: &NeuronParams, v_in: f64, r_in: f64) -> NeuronParams {
    NeuronParams { v_in: Source::Dc(v_in), r_in, ..p.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub v_in: Vec<f64>,
    pub r_in: Vec<f64>,
    /// Column-major in V_in: cell (i, j) is at `i * r_in.len() + j`.
    pub cells: Vec<Cell>,
    pub params: NeuronParams,
    pub boundaries: Vec<BoundaryLine>,
}

impl PhaseDiagram {
    pub fn cell(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.r_in.len() + j]
    }

    /// All cells at one V_in, ordered by R_in.
    pub fn column(&self, i: usize) -> &[Cell] {
        let n = self.r_in.len();
        &self.cells[i * n..(i + 1) * n]
    }

    /// Distinct spikes-per-burst counts over bursting cells.
    pub fn burst_counts(&self) -> BTreeSet<u32> {
        self.cells.iter().filter(|c| c.is_bursting()).map(|c| c.spikes_per_burst).collect()
    }

    pub fn count_of(&self, regime: CellRegime) -> usize {
        self.cells.iter().filter(|c| c.regime == regime).count()
    }

    /// CSV with one row per cell.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("v_in,r_in,regime,spikes_per_burst,duty_cycle,inter_burst_freq_hz\n");
        for c in &self.cells {
            s += &format!(
                "{},{},{},{},{},{}\n",
                c.v_in,
                c.r_in,
                c.regime.as_str(),
                c.spikes_per_burst,
                c.duty_cycle,
                c.inter_burst_freq_hz
            );
        }
        s
    }

    /// Grid metadata and boundary polylines for overlays.
    pub fn sidecar(&self) -> DiagramSidecar {
        DiagramSidecar {
            schema: DIAGRAM_SCHEMA.to_string(),
            v_in: self.v_in.clone(),
            r_in: self.r_in.clone(),
            params: self.params.clone(),
            durations: self.cells.iter().map(|c| c.duration).collect(),
            boundaries: self.boundaries.iter().map(|b| b.export(&self.v_in)).collect(),
        }
    }
}

pub const DIAGRAM_SCHEMA: &str = "memneuron.phase_diagram.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramSidecar {
    pub schema: String,
    pub v_in: Vec<f64>,
    pub r_in: Vec<f64>,
    pub params: NeuronParams,
    /// Per-cell simulated duration, s, in cell order.
    pub durations: Vec<f64>,
    pub boundaries: Vec<BoundaryExport>,
}

/// Simulate and classify every grid point.
pub fn phase_diagram(grid: &PhaseGrid, p: &NeuronParams, s: &SweepSettings) -> Result<PhaseDiagram, SweepError> {
    p.validate().map_err(|e| SweepError::Invalid(e.to_string()))?;
    let (v_in, r_in) = (grid.v_in.clone(), grid.r_in.clone());
    if r_in.iter().any(|&r| !(r > 0.0)) {
        return Err(SweepError::Invalid("R_in axis must be positive".into()));
    }
    let points: Vec<(f64, f64)> = v_in.iter().flat_map(|&v| r_in.iter().map(move |&r| (v, r))).collect();
    let cells = s.run(|| points.par_iter().map(|&(v, r)| simulate_point(&with_point(p, v, r), s).cell).collect());
    Ok(PhaseDiagram { v_in, r_in, cells, params: p.clone(), boundaries: Vec::new() })
}

/// Bisect the R_in at which the classification at `v_in` changes between
/// `lo` and `hi`, with `side(cell)` true on the `lo` side.
pub fn bisect_transition(
    p: &NeuronParams,
    v_in: f64,
    (mut lo, mut hi): (f64, f64),
    iterations: usize,
    s: &SweepSettings,
    side: impl Fn(&Cell) -> bool,
) -> f64 {
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let cell = simulate_point(&with_point(p, v_in, mid), s).cell;
        if side(&cell) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitancePoint {
    pub c1: f64,
    pub c2: f64,
    pub cell: Cell,
}

/// Spikes per burst over a C1 × C2 grid at the fixed operating point of `p`.
pub fn capacitance_study(c1: &[f64], c2: &[f64], p: &NeuronParams, s: &SweepSettings) -> Vec<CapacitancePoint> {
    let pts: Vec<(f64, f64)> = c1.iter().flat_map(|&a| c2.iter().map(move |&b| (a, b))).collect();
    s.run(|| {
        pts.par_iter()
            .map(|&(a, b)| CapacitancePoint { c1: a, c2: b, cell: simulate_point(&p.clone().with_capacitances(a, b), s).cell })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRange {
    pub c1: f64,
    pub c2: f64,
    pub v_in: f64,
    pub counts: BTreeSet<u32>,
    pub min: Option<u32>,
    pub max: Option<u32>,
    pub cells: Vec<Cell>,
}

/// Spikes-per-burst range over an R_in sweep at fixed V_in, per C1.
pub fn count_ranges(c1: &[f64], c2: f64, v_in: f64, rs: &[f64], p: &NeuronParams, s: &SweepSettings) -> Vec<CountRange> {
    let pts: Vec<(f64, f64)> = c1.iter().flat_map(|&a| rs.iter().map(move |&r| (a, r))).collect();
    let cells: Vec<Cell> = s.run(|| {
        pts.par_iter()
            .map(|&(a, r)| simulate_point(&with_point(p, v_in, r).with_capacitances(a, c2), s).cell)
            .collect()
    });
    c1.iter()
        .zip(cells.chunks(rs.len().max(1)))
        .map(|(&a, chunk)| {
            let counts: BTreeSet<u32> = chunk.iter().filter(|c| c.is_bursting()).map(|c| c.spikes_per_burst).collect();
            CountRange {
                c1: a,
                c2,
                v_in,
                min: counts.first().copied(),
                max: counts.last().copied(),
                counts,
                cells: chunk.to_vec(),
            }
        })
        .collect()
}

/// Exponential-unit fit F(x) = a + b·exp(−k·x) for x ≥ m, 0 below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuFit {
    pub m: f64,
    pub a: f64,
    pub b: f64,
    pub k: f64,
    /// Root-mean-square residual over the fitted points, counts.
    pub rms: f64,
}

impl EuFit {
    pub fn eval(&self, x: f64) -> f64 {
        if x < self.m {
            0.0
        } else {
            self.a + self.b * (-self.k * x).exp()
        }
    }
}

fn linear_ab(xs: &[f64], ys: &[f64], k: f64) -> (f64, f64, f64) {
    let e: Vec<f64> = xs.iter().map(|&x| (-k * x).exp()).collect();
    let n = xs.len() as f64;
    let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|v| v * v).sum::<f64>());
    let (sy, sey) = (ys.iter().sum::<f64>(), e.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>());
    let det = n * see - se * se;
    let (a, b) = if det.abs() < 1e-300 { (sy / n, 0.0) } else { ((sy * see - se * sey) / det, (n * sey - se * sy) / det) };
    let sse = e.iter().zip(ys).map(|(ei, y)| (a + b * ei - y).powi(2)).sum::<f64>();
    (a, b, sse)
}

/// Least-squares EU fit of counts above the threshold `m`: linear in
/// (a, b) for each k, with k found by a log-spaced scan and golden-section
/// refinement.
pub fn fit_eu(xs: &[f64], ys: &[f64], m: f64) -> Option<EuFit> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, _)| **x > m).map(|(x, y)| (*x, *y)).collect();
    if pts.len() < 3 {
        return None;
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let span = (x1 - x0).max(f64::MIN_POSITIVE);
    // fit in scaled coordinates z = (x - x0) / span
    let zs: Vec<f64> = pts.iter().map(|p| (p.0 - x0) / span).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let sse = |lk: f64| linear_ab(&zs, &ys, lk.exp()).2;
    let grid: Vec<f64> = (0..=200).map(|i| (-4.0 + 10.0 * i as f64 / 200.0) * std::f64::consts::LN_10).collect();
    let best = grid.iter().copied().min_by(|a, b| sse(*a).total_cmp(&sse(*b)))?;
    let h = 10.0 / 200.0 * std::f64::consts::LN_10;
    let (mut lo, mut hi) = (best - h, best + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = hi - g * (hi - lo);
        let d = lo + g * (hi - lo);
        if sse(c) < sse(d) {
            hi = d;
        } else {
            lo = c;
        }
    }
    let kz = (0.5 * (lo + hi)).exp();
    let (a, bz, sse_min) = linear_ab(&zs, &ys, kz);
    let k = kz / span;
    Some(EuFit { m, a, b: bz * (k * x0).exp(), k, rms: (sse_min / zs.len() as f64).sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationCurve {
    /// Input current amplitudes, A.
    pub amplitudes: Vec<f64>,
    /// Spikes per period (bursting count, 1 continuous, 0 quiescent).
    pub counts: Vec<u32>,
    pub cells: Vec<Cell>,
    pub fit: Option<EuFit>,
}

/// Spikes per period versus the amplitude of an ideal current source
/// driving the V_Na node in place of the V_in/R_in branch.
pub fn activation_curve(amplitudes: &[f64], p: &NeuronParams, s: &SweepSettings) -> Result<ActivationCurve, SweepError> {
    p.validate().map_err(|e| SweepError::Invalid(e.to_string()))?;
    let cells: Vec<Cell> = s.run(|| amplitudes.par_iter().map(|&i| current_driven_point(p, i, s).cell).collect());
    let counts: Vec<u32> = cells.iter().map(|c| c.spikes_per_period()).collect();
    activation_from_counts(amplitudes, counts, cells)
}

/// Fit an activation curve to already-counted data.
pub fn activation_from_counts(amplitudes: &[f64], counts: Vec<u32>, cells: Vec<Cell>) -> Result<ActivationCurve, SweepError> {
    if amplitudes.len() != counts.len() {
        return Err(SweepError::Invalid("amplitudes and counts differ in length".into()));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(SweepError::BelowThreshold);
    }
    let first_fire = counts.iter().position(|&c| c > 0).expect("some count is non-zero");
    let m = if first_fire > 0 { amplitudes[first_fire - 1] } else { amplitudes[0] - f64::EPSILON * amplitudes[0].abs().max(1.0) };
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let fit = fit_eu(amplitudes, &ys, m);
    Ok(ActivationCurve { amplitudes: amplitudes.to_vec(), counts, cells, fit })
}

/// One current-driven operating point. The first run covers `periods`
/// times C1·(1 V)/I, the time the source needs to move V_Na by a volt.
pub fn current_driven_point(p: &NeuronParams, i: f64, s: &SweepSettings) -> CellRun {
    let mut circ = p.circuit();
    circ.drives = vec![Drive::Current(i)];
    let first = s.duration.unwrap_or(s.periods * p.c1 / i.abs().max(1e-12)).max(s.min_duration);
    let first = (first / s.sim.sample_dt).ceil() * s.sim.sample_dt;
    let mut run = simulate_circuit(&circ, &NeuronState::cold(p), first, s);
    run.cell.v_in = 0.0;
    run.cell.r_in = f64::INFINITY;
    run
}
