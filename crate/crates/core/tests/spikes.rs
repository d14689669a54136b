use memneuron::circuit::{integrate, NeuronParams, NeuronState, SimControl, Trace};
use memneuron::spikes::*;
use proptest::prelude::*;
use std::sync::OnceLock;

fn traces() -> &'static [(Trace, Regime, u32)] {
    static T: OnceLock<Vec<(Trace, Regime, u32)>> = OnceLock::new();
    T.get_or_init(|| {
        [(0.4, 10e3, Regime::Bursting, 3), (0.4, 25e3, Regime::Bursting, 4), (0.4, 2e3, Regime::Continuous, 0)]
            .into_iter()
            .map(|(v, r, regime, n)| {
                let p = NeuronParams::table_s1(v, r);
                (integrate(&p, &NeuronState::cold(&p), 1.2e-3, &SimControl::default()).unwrap(), regime, n)
            })
            .collect()
    })
}

fn spikes_per_burst(p: &BurstProfile) -> u32 {
    match p.regime {
        Regime::Bursting => p.spikes_per_burst,
        _ => 0,
    }
}

#[test]
fn simulated_regimes() {
    for (tr, regime, n) in traces() {
        let p = classify(tr, &DetectorConfig::default(), &GapRule::default()).unwrap();
        assert_eq!(p.regime, *regime);
        assert_eq!(spikes_per_burst(&p), *n);
        assert!(p.stationary);
    }
}

#[test]
fn transient_window_does_not_change_the_verdict() {
    let gap = GapRule::default();
    for (tr, _, _) in traces() {
        let a = classify(tr, &DetectorConfig { transient_fraction: 0.2, ..DetectorConfig::default() }, &gap).unwrap();
        let b = classify(tr, &DetectorConfig { transient_fraction: 0.3, ..DetectorConfig::default() }, &gap).unwrap();
        assert_eq!(a.regime, b.regime);
        assert_eq!(spikes_per_burst(&a), spikes_per_burst(&b));
    }
}

#[test]
fn threshold_shift_does_not_change_counts() {
    let gap = GapRule::default();
    for (tr, _, _) in traces() {
        let base = classify(tr, &DetectorConfig::default(), &gap).unwrap();
        for shift in [-0.1, 0.1] {
            let cfg = DetectorConfig { threshold_shift: shift, ..DetectorConfig::default() };
            let p = classify(tr, &cfg, &gap).unwrap();
            assert_eq!(p.regime, base.regime, "shift {shift}");
            assert_eq!(p.burst_counts, base.burst_counts, "shift {shift}");
        }
    }
}

#[test]
fn summary_json_keys() {
    let (tr, _, _) = &traces()[0];
    let p = classify(tr, &DetectorConfig::default(), &GapRule::default()).unwrap();
    let v = serde_json::to_value(p.summary()).unwrap();
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["duty_cycle", "inter_burst_frequency_hz", "n_bursts", "regime", "spikes_per_burst", "stationary"]);
    assert_eq!(v["regime"], "bursting");
}

/// Spike times for groups of `sizes` spikes at `isi` spacing separated by `gap`.
fn grouped(sizes: &[usize], isi: f64, gap: f64) -> Vec<f64> {
    let mut t = 0.0;
    let mut out = Vec::new();
    for &n in sizes {
        for _ in 0..n {
            out.push(t);
            t += isi;
        }
        t += gap - isi;
    }
    out
}

fn train(times: Vec<f64>) -> SpikeTrain {
    let end = times.last().copied().unwrap_or(0.0) + 1e-6;
    SpikeTrain { spike_times: times, threshold: 0.0, window: (0.0, end), peak_to_peak: 1.0 }
}

proptest! {
    #[test]
    fn duty_cycle_identity(n in 2usize..12, reps in 4usize..10, isi in 1e-7f64..1e-5, ratio in 3.0f64..50.0) {
        let times = grouped(&vec![n; reps], isi, ratio * isi);
        let p = group_bursts(&train(times), &GapRule::default());
        prop_assert_eq!(p.regime, Regime::Bursting);
        prop_assert_eq!(p.spikes_per_burst, n as u32);
        prop_assert!((p.duty_cycle * p.inter_burst_period - p.active_phase).abs() <= 1e-12 * p.active_phase);
        prop_assert!((p.inter_burst_frequency * p.inter_burst_period - 1.0).abs() < 1e-12);
        prop_assert!(p.duty_cycle > 0.0 && p.duty_cycle <= 1.0);
    }

    #[test]
    fn bursting_never_reports_single_spikes(sizes in prop::collection::vec(1usize..6, 3..20), isi in 1e-7f64..1e-5, ratio in 1.0f64..20.0) {
        let p = group_bursts(&train(grouped(&sizes, isi, ratio * isi)), &GapRule::default());
        if p.regime == Regime::Bursting {
            prop_assert!(p.spikes_per_burst >= 2);
            prop_assert!(!p.burst_counts.is_empty());
        }
        if p.regime == Regime::Continuous {
            prop_assert!(p.burst_counts.is_empty());
        }
    }
}
