use memneuron::circuit::{integrate_circuit, Drive, NeuronParams, NeuronState, SimControl, Source};
use memneuron::network::*;
use memneuron::spikes::{detect_spikes, DetectorConfig, GapRule, Regime};
use memneuron::sweep::SweepSettings;

#[test]
fn nine_equal_branches_act_as_one() {
    let p = NeuronParams::table_s1(0.6, 10e3);
    let mut nine = p.circuit();
    nine.drives = (0..9).map(|_| Drive::Voltage { source: Source::Dc(0.6), r: 90e3 }).collect();
    let ctl = SimControl::default();
    let (a, _) = integrate_circuit(&nine, &NeuronState::cold(&p), 80e-6, &ctl).unwrap();
    let (b, _) = integrate_circuit(&p.circuit(), &NeuronState::cold(&p), 80e-6, &ctl).unwrap();
    let (lo, hi) = b.v_k.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let worst = a.v_k.iter().zip(&b.v_k).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3 * (hi - lo), "max deviation {worst} of {}", hi - lo);
}

#[test]
fn identical_patterns_give_identical_cells() {
    let p = NeuronParams::table_s1(0.0, 1.0);
    let bank = SynapseBank { resistances: [90e3; 9] };
    let s = SweepSettings { threads: Some(1), ..SweepSettings::default() };
    let a = perceptron_forward(&Pattern::letter_z(), &bank, &p, &s).unwrap();
    let b = perceptron_forward(&Pattern::letter_z(), &bank, &p, &s).unwrap();
    assert_eq!(a, b);
    let (v, r) = bank.thevenin(&Pattern::letter_z());
    assert!((r - 10e3).abs() < 1e-6);
    assert!((v - (7.0 * 0.6 + 2.0 * 0.1) / 9.0).abs() < 1e-12);
}

#[test]
fn all_low_input_differs_from_every_letter() {
    let p = perceptron_neuron();
    let bank = SynapseBank::calibrated();
    let s = SweepSettings::default();
    let letters: Vec<u32> = Pattern::letters()
        .iter()
        .map(|pat| perceptron_forward(pat, &bank, &p, &s).unwrap().spikes_per_period())
        .collect();
    let low = perceptron_forward(&Pattern::uniform("low", PIXEL_LOW), &bank, &p, &s).unwrap();
    let n = low.spikes_per_period();
    assert!(n == 0 || !letters.contains(&n), "all-low {n} vs letters {letters:?}");
}

#[test]
fn downstream_bursts_follow_upstream_bursts() {
    let (det, gap) = (DetectorConfig::default(), GapRule::default());
    let out = chain_simulate(&ChainConfig::burst(), 1.5e-3, &SimControl::default(), &det, &gap).unwrap();
    let onsets = |k: usize| -> (Vec<f64>, f64) {
        let prof = out[k].profile.as_ref().expect("classified");
        assert_eq!(prof.regime, Regime::Bursting, "neuron {k}");
        let t = detect_spikes(&out[k].trace, &det).unwrap().spike_times;
        (prof.bursts.iter().map(|&(a, _)| t[a]).collect(), prof.inter_burst_period)
    };
    for k in 1..3 {
        let (up, period) = onsets(k - 1);
        let (down, _) = onsets(k);
        for &t in &down[1..] {
            let lead = up.iter().filter(|&&u| u < t).last().copied().expect("an upstream burst precedes");
            let delay = t - lead;
            assert!(delay > 0.0 && delay < 0.5 * period, "neuron {k}: delay {delay} period {period}");
        }
    }
}

#[test]
fn chain_rejects_bad_coupling() {
    let mut cfg = ChainConfig::burst();
    cfg.r_q = 0.0;
    let r = chain_simulate(&cfg, 1e-5, &SimControl::default(), &DetectorConfig::default(), &GapRule::default());
    assert!(r.is_err());
}
