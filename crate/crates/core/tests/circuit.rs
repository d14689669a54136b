use memneuron::circuit::*;
use memneuron::device::{DeviceModel, PiecewiseParams};
use memneuron::spikes::{classify, detect_spikes, DetectorConfig, GapRule, Regime};
use proptest::prelude::*;

/// Piecewise devices whose threshold is never reached: a linear RC circuit.
fn frozen(v_in: f64, r_in: f64) -> NeuronParams {
    let never = PiecewiseParams { v_th: 100.0, v_h: 50.0, ..PiecewiseParams::table_s1() };
    NeuronParams::table_s1(v_in, r_in).with_piecewise_devices(never)
}

fn state(v_na: f64, v_k: f64, p: &NeuronParams) -> NeuronState {
    NeuronState { v_na, v_k, ..NeuronState::cold(p) }
}

/// exp(A t) x0 for a real 2x2 matrix with distinct real eigenvalues.
fn expm_apply(a: [[f64; 2]; 2], x0: [f64; 2], t: f64) -> [f64; 2] {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    // Sylvester: exp(At) = (e1 (A - l2 I) - e2 (A - l1 I)) / (l1 - l2)
    let (e1, e2) = ((l1 * t).exp(), (l2 * t).exp());
    let m = |i: usize, j: usize| {
        let id = if i == j { 1.0 } else { 0.0 };
        (e1 * (a[i][j] - l2 * id) - e2 * (a[i][j] - l1 * id)) / (l1 - l2)
    };
    [m(0, 0) * x0[0] + m(0, 1) * x0[1], m(1, 0) * x0[0] + m(1, 1) * x0[1]]
}

#[test]
fn unforced_circuit_decays_like_rc() {
    let mut p = frozen(0.0, 10e3);
    p.v1 = 0.0;
    p.v2 = 0.0;
    let r_off = 49e3;
    let (g_in, g2, gx) = (1.0 / p.r_in, 1.0 / p.r2, 1.0 / r_off);
    let a = [[-(g_in + g2 + gx) / p.c1, g2 / p.c1], [g2 / p.c2, -(g2 + gx) / p.c2]];
    let x0 = [0.3, -0.2];
    let tr = integrate(&p, &state(x0[0], x0[1], &p), 1e-3, &SimControl::default()).unwrap();
    for k in (0..tr.len()).step_by(487) {
        let [na, kk] = expm_apply(a, x0, tr.time(k));
        assert!((tr.v_na[k] - na).abs() < 1e-3 * 0.3, "t {} v_na {} vs {na}", tr.time(k), tr.v_na[k]);
        assert!((tr.v_k[k] - kk).abs() < 1e-3 * 0.3, "t {} v_k {} vs {kk}", tr.time(k), tr.v_k[k]);
    }
    assert!(tr.v_na.last().unwrap().abs() < 1e-3);
}

#[test]
fn low_input_resistance_spikes_continuously() {
    let p = NeuronParams::table_s1(0.4, 2e3);
    let tr = integrate(&p, &NeuronState::cold(&p), 300e-6, &SimControl::default()).unwrap();
    let prof = classify(&tr, &DetectorConfig::default(), &GapRule::default()).unwrap();
    assert_eq!(prof.regime, Regime::Continuous);
}

#[test]
fn zero_sources_stay_quiescent() {
    let mut p = NeuronParams::table_s1(0.0, 10e3);
    p.v1 = 0.0;
    p.v2 = 0.0;
    let tr = integrate(&p, &NeuronState::cold(&p), 100e-6, &SimControl::default()).unwrap();
    assert!(tr.v_na.iter().chain(&tr.v_k).all(|v| v.abs() < 1e-12));
    let prof = classify(&tr, &DetectorConfig::default(), &GapRule::default()).unwrap();
    assert_eq!(prof.regime, Regime::Quiescent);
}

#[test]
fn tighter_tolerance_keeps_counts_and_spike_times() {
    let p = NeuronParams::table_s1(0.4, 10e3);
    let ctl = SimControl::default();
    let a = integrate(&p, &NeuronState::cold(&p), 400e-6, &ctl).unwrap();
    let b = integrate(&p, &NeuronState::cold(&p), 400e-6, &ctl.tightened(10.0)).unwrap();
    let (det, gap) = (DetectorConfig::default(), GapRule::default());
    let pa = classify(&a, &det, &gap).unwrap();
    let pb = classify(&b, &det, &gap).unwrap();
    assert_eq!(pa.regime, Regime::Bursting);
    assert_eq!(pa.spikes_per_burst, 3);
    assert_eq!(pb.spikes_per_burst, pa.spikes_per_burst);
    let sa = detect_spikes(&a, &det).unwrap().spike_times;
    let sb = detect_spikes(&b, &det).unwrap().spike_times;
    assert_eq!(sa.len(), sb.len());
    for k in 1..sa.len() {
        let isi = sa[k] - sa[k - 1];
        assert!((sa[k] - sb[k]).abs() < 0.005 * isi, "spike {k}: {} vs {}", sa[k], sb[k]);
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let p = NeuronParams::table_s1(0.5, 15e3);
    let a = integrate(&p, &NeuronState::cold(&p), 100e-6, &SimControl::default()).unwrap();
    let b = integrate(&p, &NeuronState::cold(&p), 100e-6, &SimControl::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn piecewise_trace_csv_has_empty_state_columns() {
    let p = NeuronParams::table_s1(0.4, 10e3).with_piecewise_devices(PiecewiseParams::table_s1());
    let tr = integrate(&p, &NeuronState::cold(&p), 5e-6, &SimControl::default()).unwrap();
    let csv = tr.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t_s,v_na_V,v_k_V,r_x1_ohm,r_x2_ohm,u1,u2"));
    assert!(lines.next().unwrap().ends_with(",,"));
    assert_eq!(csv.lines().count(), tr.len() + 1);
}

#[test]
fn invalid_duration_is_rejected() {
    let p = NeuronParams::table_s1(0.4, 10e3);
    assert!(integrate(&p, &NeuronState::cold(&p), 0.0, &SimControl::default()).is_err());
    let mut bad = p.clone();
    bad.c1 = -1.0;
    assert!(integrate(&bad, &NeuronState::cold(&p), 1e-6, &SimControl::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn frozen_devices_settle_on_the_fixed_point(
        v_in in 0.0f64..1.0,
        r_in in 500.0f64..33e3,
        na in -1.5f64..1.5,
        k in -1.5f64..1.5,
    ) {
        let p = frozen(v_in, r_in);
        let s0 = state(na, k, &p);
        let (_, fin) = integrate_with_final(&p, &s0, 4e-3, &SimControl::sweep()).unwrap();
        let (fna, fk) = fixed_point(&p, 49e3, 49e3).unwrap();
        prop_assert!((fin.v_na - fna).abs() < 1e-5, "{} vs {}", fin.v_na, fna);
        prop_assert!((fin.v_k - fk).abs() < 1e-5, "{} vs {}", fin.v_k, fk);
    }

    #[test]
    fn node_voltages_stay_in_the_envelope(v_in in 0.0f64..1.0, r_in in 500.0f64..33e3) {
        let p = NeuronParams::table_s1(v_in, r_in);
        let bound = v_in.abs() + p.v1.abs() + p.v2.abs() + 1.0;
        let tr = integrate(&p, &NeuronState::cold(&p), 60e-6, &SimControl::sweep()).unwrap();
        prop_assert!(tr.v_na.iter().chain(&tr.v_k).all(|v| v.is_finite() && v.abs() <= bound));
    }

    #[test]
    fn fixed_point_zeroes_node_currents(
        v_in in -1.0f64..1.0,
        r_in in 100.0f64..1e5,
        r1 in 500.0f64..5e4,
        r2 in 500.0f64..5e4,
    ) {
        let p = NeuronParams::table_s1(v_in, r_in);
        let (na, k) = fixed_point(&p, r1, r2).unwrap();
        let i_na = (v_in - na) / r_in + (k - na) / p.r2 - (na - p.v1) / r1;
        let i_k = (na - k) / p.r2 + (p.v2 - k) / r2;
        let scale = 1.4 / r1.min(r2).min(r_in).min(p.r2);
        prop_assert!(i_na.abs() < 1e-9 * scale && i_k.abs() < 1e-9 * scale);
    }
}

#[test]
fn thermal_devices_start_insulating() {
    let p = NeuronParams::table_s1(0.4, 10e3);
    let s = NeuronState::cold(&p);
    let DeviceModel::Thermal(t) = p.device1 else { panic!("thermal default") };
    assert_eq!(s.x1.u, t.u_min);
    assert!((s.x1.resistance(&p.device1) - 1.0 / t.conductance(t.u_min)).abs() < 1e-6);
}
