//! Closed-form operating-window boundaries in the R_in–V_in plane.
//!
//! Each line is the locus where one memristor sits exactly at a switching
//! voltage while the node equations balance. All lines share the form
//! `R_in = slope * (V_in + intercept_voltage)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::NeuronParams;
use crate::device::{IvAnchors, PiecewiseParams};
use crate::spikes::Regime;
use crate::sweep::{CellRegime, PhaseDiagram};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("degenerate boundary {label:?}: {detail}")]
    Degenerate { label: BoundaryLabel, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryLabel {
    A,
    B,
    APrime,
    BPrime,
    CPrime,
}

impl BoundaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryLabel::A => "A",
            BoundaryLabel::B => "B",
            BoundaryLabel::APrime => "A'",
            BoundaryLabel::BPrime => "B'",
            BoundaryLabel::CPrime => "C'",
        }
    }
}

/// Circuit constants plus the device anchors the boundaries need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams {
    pub r_on: f64,
    pub r_off: f64,
    pub r_th: f64,
    pub r_h: f64,
    pub v_th: f64,
    pub v_h: f64,
    pub r2: f64,
    pub v1: f64,
    pub v2: f64,
}

impl BoundaryParams {
    pub fn table_s1() -> Self {
        Self { r_on: 850.0, r_off: 49e3, r_th: 41e3, r_h: 1.98e3, v_th: 1.448, v_h: 0.746, r2: 6e3, v1: -1.4, v2: 1.4 }
    }

    /// Circuit constants from `p`, switching anchors from an I–V
    /// extraction and hard-switching resistances from `pw`.
    pub fn from_parts(p: &NeuronParams, anchors: &IvAnchors, pw: &PiecewiseParams) -> Self {
        Self {
            r_on: pw.r_on,
            r_off: pw.r_off,
            r_th: anchors.r_th,
            r_h: anchors.r_h,
            v_th: anchors.v_th,
            v_h: anchors.v_h,
            r2: p.r2,
            v1: p.v1,
            v2: p.v2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLine {
    pub label: BoundaryLabel,
    /// Ω/V
    pub slope: f64,
    /// V
    pub intercept_voltage: f64,
    pub validity: String,
}

impl BoundaryLine {
    pub fn r_in(&self, v_in: f64) -> f64 {
        self.slope * (v_in + self.intercept_voltage)
    }

    /// V_in where the line reaches `r_in`.
    pub fn v_in_at(&self, r_in: f64) -> f64 {
        r_in / self.slope - self.intercept_voltage
    }

    pub fn export(&self, v_in: &[f64]) -> BoundaryExport {
        BoundaryExport {
            label: self.label.as_str().to_string(),
            slope_ohm_per_volt: self.slope,
            v_intercept_volts: self.intercept_voltage,
            samples: v_in.iter().map(|&v| [v, self.r_in(v)]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryExport {
    pub label: String,
    pub slope_ohm_per_volt: f64,
    pub v_intercept_volts: f64,
    pub samples: Vec<[f64; 2]>,
}

fn checked(label: BoundaryLabel, num: f64, den: f64, what: &str) -> Result<f64, BoundaryError> {
    if !(den > 0.0) || !den.is_finite() || !num.is_finite() || !(num > 0.0) {
        return Err(BoundaryError::Degenerate {
            label,
            detail: format!("{what} = {den:e} must be positive (numerator {num:e})"),
        });
    }
    Ok(num / den)
}

/// X1 metallic at `rx1`, X2 at its switching threshold with `rx2`, both
/// nodes at rest.
fn threshold_of_x2(label: BoundaryLabel, rx1: f64, rx2: f64, p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    let den = rx2 * (p.v2 - p.v1 - p.v_th) - p.v_th * (p.r2 + rx1);
    let m = checked(label, rx1 * rx2, den, "R_X2(V2 - V1 - V_th) - V_th(R2 + R_X1)")?;
    Ok(BoundaryLine {
        label,
        slope: m,
        intercept_voltage: p.v_th * (rx2 + p.r2) / rx2 - p.v2,
        validity: "denominator R_X2(V2 - V1 - V_th) - V_th(R2 + R_X1) > 0".into(),
    })
}

/// X1 at its hold voltage with `rx1`, X2 at threshold, V_Na at rest.
fn hold_of_x1(label: BoundaryLabel, rx1: f64, p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    let den = p.r2 * p.v_h - rx1 * (p.v2 - p.v_th - p.v_h - p.v1);
    let n = checked(label, rx1 * p.r2, den, "R2 V_h - R_X1(V2 - V_th - V_h - V1)")?;
    Ok(BoundaryLine {
        label,
        slope: n,
        intercept_voltage: -(p.v1 + p.v_h),
        validity: "denominator R2 V_h - R_X1(V2 - V_th - V_h - V1) > 0".into(),
    })
}

/// X1 at its switching threshold with `rx1`, X2 insulating at `rx2`, both
/// nodes at rest.
fn threshold_of_x1(label: BoundaryLabel, rx1: f64, rx2: f64, p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    let den = p.v_th * (p.r2 + rx2) - rx1 * (p.v2 - p.v_th - p.v1);
    let q = checked(label, rx1 * (p.r2 + rx2), den, "V_th(R2 + R_X2) - R_X1(V2 - V_th - V1)")?;
    Ok(BoundaryLine {
        label,
        slope: q,
        intercept_voltage: -(p.v1 + p.v_th),
        validity: "denominator V_th(R2 + R_X2) - R_X1(V2 - V_th - V1) > 0".into(),
    })
}

/// Lower edge of the firing window.
pub fn boundary_a_prime(p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    threshold_of_x2(BoundaryLabel::APrime, p.r_on, p.r_th, p)
}

/// Continuous spiking to bursting.
pub fn boundary_b_prime(p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    hold_of_x1(BoundaryLabel::BPrime, p.r_h, p)
}

/// Upper edge of the firing window.
pub fn boundary_c_prime(p: &BoundaryParams) -> Result<BoundaryLine, BoundaryError> {
    threshold_of_x1(BoundaryLabel::CPrime, p.r_th, p.r_off, p)
}

/// Hard-switching versions of A′ and B′.
pub fn boundary_unprimed(p: &BoundaryParams, which: BoundaryLabel) -> Result<BoundaryLine, BoundaryError> {
    match which {
        BoundaryLabel::A => threshold_of_x2(BoundaryLabel::A, p.r_on, p.r_off, p),
        BoundaryLabel::B => hold_of_x1(BoundaryLabel::B, p.r_on, p),
        other => Err(BoundaryError::Degenerate { label: other, detail: "not an unprimed boundary".into() }),
    }
}

/// A′, B′, C′, A, B in that order.
pub fn all_boundaries(p: &BoundaryParams) -> Result<Vec<BoundaryLine>, BoundaryError> {
    Ok(vec![
        boundary_a_prime(p)?,
        boundary_b_prime(p)?,
        boundary_c_prime(p)?,
        boundary_unprimed(p, BoundaryLabel::A)?,
        boundary_unprimed(p, BoundaryLabel::B)?,
    ])
}

/// Node voltages and currents on a boundary at `v_in`, with KCL residuals
/// at the nodes the boundary holds at rest (others are `None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalBalance {
    pub r_in: f64,
    pub v_na: f64,
    pub v_k: f64,
    pub residual_na: f64,
    pub residual_k: Option<f64>,
    /// Largest branch current magnitude, for scaling residuals.
    pub scale: f64,
}

/// Substitute the line's critical conditions into the node equations.
pub fn critical_balance(line: &BoundaryLine, p: &BoundaryParams, v_in: f64) -> CriticalBalance {
    let r_in = line.r_in(v_in);
    let (rx1, rx2, v_na, v_k, k_rest) = match line.label {
        BoundaryLabel::APrime | BoundaryLabel::A => {
            let rx2 = if line.label == BoundaryLabel::A { p.r_off } else { p.r_th };
            let v_k = p.v2 - p.v_th;
            // V_K at rest: (V_Na - V_K)/R2 = (V_K - V2)/R_X2
            let v_na = v_k - p.r2 * p.v_th / rx2;
            (p.r_on, rx2, v_na, v_k, true)
        }
        BoundaryLabel::BPrime | BoundaryLabel::B => {
            let rx1 = if line.label == BoundaryLabel::B { p.r_on } else { p.r_h };
            (rx1, p.r_th, p.v1 + p.v_h, p.v2 - p.v_th, false)
        }
        BoundaryLabel::CPrime => {
            let v_na = p.v1 + p.v_th;
            let v_k = (v_na * p.r_off + p.v2 * p.r2) / (p.r2 + p.r_off);
            (p.r_th, p.r_off, v_na, v_k, true)
        }
    };
    let i_in = (v_in - v_na) / r_in;
    let i_2 = (v_k - v_na) / p.r2;
    let i_x1 = (v_na - p.v1) / rx1;
    let i_x2 = (p.v2 - v_k) / rx2;
    CriticalBalance {
        r_in,
        v_na,
        v_k,
        residual_na: i_in + i_2 - i_x1,
        residual_k: k_rest.then_some(-i_2 + i_x2),
        scale: [i_in, i_2, i_x1, i_x2].iter().map(|x| x.abs()).fold(0.0, f64::max),
    }
}

/// Simulated transition of one boundary in one V_in column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnDeviation {
    pub v_in: f64,
    pub analytic: f64,
    pub simulated: f64,
    pub abs_dev: f64,
    pub rel_dev: f64,
    /// Tolerance applied in R_in, Ω.
    pub tolerance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDeviation {
    pub label: BoundaryLabel,
    pub columns: Vec<ColumnDeviation>,
    pub absent: bool,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub all_within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub lines: Vec<LineDeviation>,
    pub rel_tolerance: f64,
    pub cell_r: f64,
    pub cell_v: f64,
}

impl DeviationReport {
    pub fn line(&self, label: BoundaryLabel) -> Option<&LineDeviation> {
        self.lines.iter().find(|l| l.label == label)
    }
}

/// Regime transitions found in one column of a phase diagram, each as a
/// bracketing pair of R_in grid values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColumnTransitions {
    /// Quiescent below, firing above.
    pub onset: Option<(f64, f64)>,
    /// Continuous below, bursting above.
    pub bursting: Option<(f64, f64)>,
    /// Firing below, quiescent above.
    pub cutoff: Option<(f64, f64)>,
}

fn firing(r: CellRegime) -> bool {
    matches!(r, CellRegime::Classified(Regime::Continuous) | CellRegime::Classified(Regime::Bursting))
}

/// Scan one column (cells ordered by increasing R_in).
pub fn column_transitions(r_in: &[f64], regimes: &[CellRegime]) -> ColumnTransitions {
    let mut out = ColumnTransitions::default();
    let first_fire = regimes.iter().position(|&r| firing(r));
    let last_fire = regimes.iter().rposition(|&r| firing(r));
    if let Some(i) = first_fire {
        if i > 0 && regimes[i - 1] == CellRegime::Classified(Regime::Quiescent) {
            out.onset = Some((r_in[i - 1], r_in[i]));
        }
    }
    if let Some(i) = last_fire {
        if i + 1 < regimes.len() && regimes[i + 1] == CellRegime::Classified(Regime::Quiescent) {
            out.cutoff = Some((r_in[i], r_in[i + 1]));
        }
    }
    if let (Some(a), Some(b)) = (first_fire, last_fire) {
        let burst = CellRegime::Classified(Regime::Bursting);
        let cont = CellRegime::Classified(Regime::Continuous);
        if let Some(j) = (a..=b).find(|&j| regimes[j] == burst) {
            if j > 0 && regimes[j - 1] == cont {
                out.bursting = Some((r_in[j - 1], r_in[j]));
            }
        }
    }
    out
}

/// Which bracket a boundary line is compared against.
pub fn transition_for(label: BoundaryLabel, t: &ColumnTransitions) -> Option<(f64, f64)> {
    match label {
        BoundaryLabel::APrime | BoundaryLabel::A => t.onset,
        BoundaryLabel::BPrime | BoundaryLabel::B => t.bursting,
        BoundaryLabel::CPrime => t.cutoff,
    }
}

/// Compare lines with a classified diagram. Each simulated transition is
/// the midpoint of its bracketing cells unless `refine` supplies a better
/// estimate from the bracket. The tolerance per column is the largest of
/// the relative tolerance, one R_in cell, and the R_in change of the line
/// across one V_in cell.
pub fn compare_boundaries_with<F>(
    diagram: &PhaseDiagram,
    lines: &[BoundaryLine],
    rel_tolerance: f64,
    mut refine: F,
) -> DeviationReport
where
    F: FnMut(BoundaryLabel, f64, (f64, f64)) -> f64,
{
    let cell_r = axis_step(&diagram.r_in);
    let cell_v = axis_step(&diagram.v_in);
    let columns: Vec<ColumnTransitions> = (0..diagram.v_in.len())
        .map(|i| column_transitions(&diagram.r_in, &diagram.column(i).iter().map(|c| c.regime).collect::<Vec<_>>()))
        .collect();
    let mut out = Vec::new();
    for line in lines {
        let mut cols = Vec::new();
        for (i, t) in columns.iter().enumerate() {
            let v_in = diagram.v_in[i];
            let Some(bracket) = transition_for(line.label, t) else { continue };
            let analytic = line.r_in(v_in);
            if !(analytic > 0.0) {
                continue;
            }
            let simulated = refine(line.label, v_in, bracket);
            let abs_dev = (simulated - analytic).abs();
            let tolerance = (rel_tolerance * analytic).max(cell_r).max(line.slope.abs() * cell_v);
            cols.push(ColumnDeviation {
                v_in,
                analytic,
                simulated,
                abs_dev,
                rel_dev: abs_dev / analytic,
                tolerance,
                within: abs_dev <= tolerance,
            });
        }
        let absent = cols.is_empty();
        let max_rel = cols.iter().map(|c| c.rel_dev).fold(0.0, f64::max);
        let mean_rel = if absent { 0.0 } else { cols.iter().map(|c| c.rel_dev).sum::<f64>() / cols.len() as f64 };
        let all_within = cols.iter().all(|c| c.within);
        out.push(LineDeviation { label: line.label, columns: cols, absent, max_rel, mean_rel, all_within });
    }
    DeviationReport { lines: out, rel_tolerance, cell_r, cell_v }
}

/// [`compare_boundaries_with`] using bracket midpoints.
pub fn compare_boundaries(diagram: &PhaseDiagram, lines: &[BoundaryLine], rel_tolerance: f64) -> DeviationReport {
    compare_boundaries_with(diagram, lines, rel_tolerance, |_, _, (a, b)| 0.5 * (a + b))
}

fn axis_step(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        (v[v.len() - 1] - v[0]).abs() / (v.len() - 1) as f64
    }
}
