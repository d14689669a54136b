use memneuron::device::*;
use proptest::prelude::*;
use std::f64::consts::PI;

/// Static I-V of the core/shell filament written out from the material
/// constants: V(u) = sqrt(R(u) * G_th(u) * dT).
struct Oracle {
    r_ins: f64,
    r_met: f64,
    g_per_log: f64,
    dt: f64,
}

impl Oracle {
    fn new() -> Self {
        let (r_ch, l) = (30e-9, 20e-9);
        let shape = l / (PI * r_ch * r_ch);
        Self { r_ins: shape * 7e-3, r_met: shape * 1e-4, g_per_log: 2.0 * PI * l * 1.5, dt: 1080.0 - 296.0 }
    }

    fn resistance(&self, u: f64) -> f64 {
        1.0 / (u * u / self.r_met + (1.0 - u * u) / self.r_ins)
    }

    fn voltage(&self, u: f64) -> f64 {
        let g = self.g_per_log / (1.0 / u).ln();
        (self.resistance(u) * g * self.dt).sqrt()
    }

    /// (u, V) at the local maximum and the following minimum of V(u).
    fn extrema(&self) -> ((f64, f64), (f64, f64)) {
        let us: Vec<f64> = (0..=200_000).map(|k| 0.01 + 0.98 * k as f64 / 200_000.0).collect();
        let vs: Vec<f64> = us.iter().map(|&u| self.voltage(u)).collect();
        let imax = (1..vs.len() - 1).find(|&k| vs[k] >= vs[k - 1] && vs[k] > vs[k + 1]).unwrap();
        let imin = (imax + 1..vs.len() - 1).find(|&k| vs[k] <= vs[k - 1] && vs[k] < vs[k + 1]).unwrap();
        ((us[imax], vs[imax]), (us[imin], vs[imin]))
    }
}

#[test]
fn closed_form_extrema() {
    let ((u_max, v_max), (u_min, v_min)) = Oracle::new().extrema();
    assert!((u_max - 0.054).abs() < 0.002, "u at max {u_max}");
    assert!((v_max - 1.443).abs() < 0.002, "V max {v_max}");
    assert!((u_min - 0.6).abs() < 0.03, "u at min {u_min}");
    assert!((v_min - 0.745).abs() < 0.002, "V min {v_min}");
}

#[test]
fn thermal_sweep_matches_closed_form_and_table() {
    let o = Oracle::new();
    let ((u_th, v_th), (u_h, v_h)) = o.extrema();
    let curve = quasistatic_iv_sweep(&DeviceModel::Thermal(ThermalImtParams::table_s2()), &SweepSpec::default()).unwrap();
    let a = curve.anchors.expect("switches");
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    assert!(rel(a.v_th, v_th) < 0.015, "{} vs {v_th}", a.v_th);
    assert!(rel(a.v_h, v_h) < 0.015, "{} vs {v_h}", a.v_h);
    assert!(rel(a.r_th, o.resistance(u_th)) < 0.015);
    assert!(rel(a.r_h, o.resistance(u_h)) < 0.03);
    for (got, table) in [(a.v_th, 1.448), (a.v_h, 0.746), (a.r_th, 41e3), (a.r_h, 1.98e3)] {
        assert!(rel(got, table) < 0.02, "{got} vs {table}");
    }
    // anchors are static resistances at the recorded points
    let up_peak = curve.points.iter().filter(|p| p.dir == SweepDir::Up).map(|p| p.v).fold(0.0, f64::max);
    assert!((up_peak - 2.0).abs() < 1e-12);
}

#[test]
fn thermal_sweep_is_rate_independent() {
    let model = DeviceModel::Thermal(ThermalImtParams::table_s2());
    let base = SweepSpec::default();
    let slow = SweepSpec { leg_factor: 2.0 * base.leg_factor, ..base };
    let a = quasistatic_iv_sweep(&model, &base).unwrap().anchors.unwrap();
    let b = quasistatic_iv_sweep(&model, &slow).unwrap().anchors.unwrap();
    for (x, y) in [(a.v_th, b.v_th), (a.v_h, b.v_h), (a.r_th, b.r_th), (a.r_h, b.r_h)] {
        assert!((x - y).abs() / y < 1e-3, "{x} vs {y}");
    }
}

#[test]
fn iv_csv_columns() {
    let spec = SweepSpec { points_per_leg: 100, ..SweepSpec::default() };
    for (model, state) in [
        (DeviceModel::Thermal(ThermalImtParams::table_s2()), true),
        (DeviceModel::Piecewise(PiecewiseParams::table_s1()), false),
    ] {
        let csv = quasistatic_iv_sweep(&model, &spec).unwrap().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("v_volts,i_amps,state_u,sweep_dir"));
        let row: Vec<&str> = lines.nth(10).unwrap().split(',').collect();
        assert_eq!(row.len(), 4);
        assert_eq!(row[3], "up");
        let u: f64 = row[2].parse().unwrap();
        if state {
            assert!(u > 0.0 && u < 1.0);
        } else {
            assert!(u == 0.0 || u == 1.0);
        }
    }
}

proptest! {
    #[test]
    fn piecewise_switches_only_past_thresholds(vs in prop::collection::vec(0.0f64..2.0, 1..200)) {
        let p = PiecewiseParams::table_s1();
        let mut s = PiecewiseState::default();
        for v in vs {
            let (r, next) = piecewise_eval(s, v, &p);
            if v >= p.v_th {
                prop_assert_eq!(next.branch, Branch::Metallic);
            } else if v <= p.v_h {
                prop_assert_eq!(next.branch, Branch::Insulating);
            } else {
                prop_assert_eq!(next.branch, s.branch);
            }
            prop_assert_eq!(r, p.resistance(next.branch));
            s = next;
        }
    }

    #[test]
    fn memristance_strictly_decreasing(a in 0.01f64..0.9999, b in 0.01f64..0.9999) {
        prop_assume!((a - b).abs() > 1e-9);
        let p = ThermalImtParams::table_s2();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(thermal_memristance(lo, &p).unwrap() > thermal_memristance(hi, &p).unwrap());
        let o = Oracle::new();
        prop_assert!((thermal_memristance(lo, &p).unwrap() - o.resistance(lo)).abs() / o.resistance(lo) < 1e-9);
    }

    #[test]
    fn balance_perturbation_sets_rate_sign(u in 0.011f64..0.99) {
        let p = ThermalImtParams::table_s2();
        let r = thermal_memristance(u, &p).unwrap();
        let i_star = p.balance_voltage(u) / r;
        let at = |f: f64| thermal_state_derivative(u, f * i_star, &p).unwrap();
        prop_assert!(at(1.0).abs() < 1e-6 * at(1.01).abs());
        prop_assert!(at(1.01) > 0.0);
        prop_assert!(at(0.99) < 0.0);
    }
}

#[test]
fn memristance_range_endpoints() {
    let p = ThermalImtParams::table_s2();
    let o = Oracle::new();
    for u in [p.u_min, p.u_max] {
        let r = thermal_memristance(u, &p).unwrap();
        assert!((r - o.resistance(u)).abs() / r < 1e-9);
    }
    assert!((o.r_ins - p.r_insulating_limit()).abs() / o.r_ins < 1e-9);
    assert!((o.r_met - p.r_metallic_limit()).abs() / o.r_met < 1e-9);
}
