//! Spike detection on the output node, burst grouping and regime
//! classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trace of {len} samples is too short for a {fraction} transient discard")]
    TraceTooShort { len: usize, fraction: f64 },
    #[error("analysis window of {have:e} s is too short, about {want:e} s needed")]
    NeedsLongerTrace { have: f64, want: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Leading fraction of the trace ignored as start-up transient.
    pub transient_fraction: f64,
    /// Minimum rise above the preceding trough, as a fraction of peak-to-peak.
    pub prominence: f64,
    /// Refractory gap between accepted spikes, s.
    pub min_isi: f64,
    /// Peak-to-peak below this (V) means no spikes.
    pub noise_floor: f64,
    /// Threshold offset from the midpoint, as a fraction of peak-to-peak.
    pub threshold_shift: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { transient_fraction: 0.3, prominence: 0.25, min_isi: 2e-7, noise_floor: 0.05, threshold_shift: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapRule {
    /// The largest jump between consecutive sorted ISIs marks the burst gap
    /// when its ratio is at least this.
    pub jump_factor: f64,
    /// Fallback: burst gaps are ISIs longer than `factor` times the median ISI.
    pub factor: f64,
    /// ISI coefficient of variation below which a train is continuous.
    pub cv_continuous: f64,
    /// Minimum share of complete bursts agreeing with the modal count.
    pub stationarity: f64,
    /// Complete bursts required for a bursting verdict.
    pub min_bursts: usize,
    /// ISIs required for a continuous verdict.
    pub min_isis: usize,
}

impl Default for GapRule {
    fn default() -> Self {
        Self { factor: 3.0, jump_factor: 2.0, cv_continuous: 0.15, stationarity: 0.6, min_bursts: 3, min_isis: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub spike_times: Vec<f64>,
    pub threshold: f64,
    /// Analysed time window (start, end), s.
    pub window: (f64, f64),
    pub peak_to_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Quiescent,
    Continuous,
    Bursting,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Quiescent => "quiescent",
            Regime::Continuous => "continuous",
            Regime::Bursting => "bursting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstProfile {
    pub regime: Regime,
    /// Spike index ranges `[first, last]` of every detected group.
    pub bursts: Vec<(usize, usize)>,
    /// Modal count over complete bursts; 0 unless bursting.
    pub spikes_per_burst: u32,
    /// Counts of the complete bursts, in order.
    pub burst_counts: Vec<u32>,
    pub inter_burst_period: f64,
    pub active_phase: f64,
    pub duty_cycle: f64,
    pub inter_burst_frequency: f64,
    /// Mean ISI inside complete bursts (bursting) or overall (continuous).
    pub mean_isi: f64,
    pub stationary: bool,
    pub n_spikes: usize,
}

impl BurstProfile {
    pub fn quiescent(n_spikes: usize) -> Self {
        Self {
            regime: Regime::Quiescent,
            bursts: Vec::new(),
            spikes_per_burst: 0,
            burst_counts: Vec::new(),
            inter_burst_period: 0.0,
            active_phase: 0.0,
            duty_cycle: 0.0,
            inter_burst_frequency: 0.0,
            mean_isi: 0.0,
            stationary: true,
            n_spikes,
        }
    }

    /// The exported summary record.
    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            regime: self.regime,
            spikes_per_burst: self.spikes_per_burst,
            duty_cycle: self.duty_cycle,
            inter_burst_frequency_hz: self.inter_burst_frequency,
            n_bursts: self.burst_counts.len(),
            stationary: self.stationary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub regime: Regime,
    pub spikes_per_burst: u32,
    pub duty_cycle: f64,
    pub inter_burst_frequency_hz: f64,
    pub n_bursts: usize,
    pub stationary: bool,
}

/// Spike detection on the output node of a trace.
pub fn detect_spikes(trace: &Trace, cfg: &DetectorConfig) -> Result<SpikeTrain, MetricsError> {
    detect_in_signal(trace.output(), trace.t0, trace.dt, cfg)
}

/// Spike detection on any uniformly sampled signal.
pub fn detect_in_signal(x: &[f64], t0: f64, dt: f64, cfg: &DetectorConfig) -> Result<SpikeTrain, MetricsError> {
    let start = (cfg.transient_fraction * x.len() as f64).ceil() as usize;
    if x.len() < 2 || start + 2 > x.len() {
        return Err(MetricsError::TraceTooShort { len: x.len(), fraction: cfg.transient_fraction });
    }
    let w = &x[start..];
    let window = (t0 + dt * start as f64, t0 + dt * (x.len() - 1) as f64);
    let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let p2p = hi - lo;
    let threshold = 0.5 * (lo + hi) + cfg.threshold_shift * p2p;
    let mut train = SpikeTrain { spike_times: Vec::new(), threshold, window, peak_to_peak: p2p };
    if !(p2p >= cfg.noise_floor) {
        return Ok(train);
    }
    let need = cfg.prominence * p2p;
    let mut trough = w[0];
    let mut k = 1;
    while k < w.len() {
        let (a, b) = (w[k - 1], w[k]);
        if a < threshold && b >= threshold {
            let tc = window.0 + dt * ((k - 1) as f64 + (threshold - a) / (b - a));
            let mut peak = b;
            let mut j = k;
            while j + 1 < w.len() && w[j + 1] >= threshold {
                j += 1;
                peak = peak.max(w[j]);
            }
            let spaced = train.spike_times.last().map_or(true, |&last| tc - last >= cfg.min_isi);
            if peak - trough >= need && spaced {
                train.spike_times.push(tc);
                trough = f64::INFINITY;
            }
            k = j + 1;
            continue;
        }
        trough = trough.min(b);
        k += 1;
    }
    Ok(train)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cv(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    var.sqrt() / m
}

/// Gap threshold separating intra-burst from inter-burst intervals: the
/// largest ratio jump in the sorted ISIs when it is large enough, otherwise
/// the configured multiple of the median ISI.
fn gap_threshold(isis: &[f64], rule: &GapRule) -> f64 {
    let mut s = isis.to_vec();
    s.sort_by(f64::total_cmp);
    let mut best = (1.0, f64::INFINITY);
    for w in s.windows(2) {
        let ratio = w[1] / w[0];
        if ratio > best.0 {
            best = (ratio, 0.5 * (w[0] + w[1]));
        }
    }
    if best.0 >= rule.jump_factor {
        return best.1;
    }
    let primary = rule.factor * median(isis);
    if isis.iter().any(|&d| d > primary) {
        primary
    } else {
        f64::INFINITY
    }
}

/// Group a spike train into bursts.
pub fn group_bursts(train: &SpikeTrain, rule: &GapRule) -> BurstProfile {
    let t = &train.spike_times;
    if t.len() < 2 {
        return BurstProfile::quiescent(t.len());
    }
    let isis: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let continuous = |isis: &[f64]| BurstProfile {
        regime: Regime::Continuous,
        mean_isi: mean(isis),
        stationary: cv(isis) < rule.cv_continuous,
        ..BurstProfile::quiescent(t.len())
    };
    if cv(&isis) < rule.cv_continuous {
        return continuous(&isis);
    }
    let gap = gap_threshold(&isis, rule);
    let mut bursts = Vec::new();
    let mut first = 0;
    for (i, &d) in isis.iter().enumerate() {
        if d > gap {
            bursts.push((first, i));
            first = i + 1;
        }
    }
    bursts.push((first, t.len() - 1));
    // the first and last groups may be cut by the analysis window
    let complete: Vec<(usize, usize)> = if bursts.len() > 2 { bursts[1..bursts.len() - 1].to_vec() } else { Vec::new() };
    if complete.is_empty() {
        let mut p = continuous(&isis);
        p.bursts = bursts;
        p.stationary = false;
        return p;
    }
    let counts: Vec<u32> = complete.iter().map(|&(a, b)| (b - a + 1) as u32).collect();
    let mut freq = std::collections::BTreeMap::new();
    for &c in &counts {
        *freq.entry(c).or_insert(0usize) += 1;
    }
    // modal count, ties broken toward the smaller count
    let (&mode, &hits) = freq.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).expect("non-empty");
    let stationary = hits as f64 >= rule.stationarity * counts.len() as f64;
    if mode < 2 {
        let mut p = continuous(&isis);
        p.bursts = bursts;
        return p;
    }
    let active: Vec<f64> = complete.iter().map(|&(a, b)| t[b] - t[a]).collect();
    // onsets of the complete bursts and of the group after the last one
    let idx = bursts.iter().position(|b| *b == complete[0]).expect("complete burst present");
    let onsets: Vec<f64> = bursts[idx..].iter().map(|&(a, _)| t[a]).collect();
    let periods: Vec<f64> = onsets.windows(2).map(|w| w[1] - w[0]).collect();
    let intra: Vec<f64> = complete.iter().flat_map(|&(a, b)| (a..b).map(|k| t[k + 1] - t[k])).collect();
    let active_phase = mean(&active);
    let inter_burst_period = mean(&periods);
    BurstProfile {
        regime: Regime::Bursting,
        bursts,
        spikes_per_burst: mode,
        burst_counts: counts,
        inter_burst_period,
        active_phase,
        duty_cycle: active_phase / inter_burst_period,
        inter_burst_frequency: 1.0 / inter_burst_period,
        mean_isi: mean(&intra),
        stationary,
        n_spikes: t.len(),
    }
}

/// Detect, group and check that the analysis window supports the verdict.
pub fn classify_train(train: &SpikeTrain, rule: &GapRule) -> Result<BurstProfile, MetricsError> {
    let profile = group_bursts(train, rule);
    let have = train.window.1 - train.window.0;
    match profile.regime {
        Regime::Quiescent => {
            if profile.n_spikes > 0 {
                // isolated spike: could be a long quiescent period between bursts
                return Err(MetricsError::NeedsLongerTrace { have, want: 2.0 * have });
            }
        }
        Regime::Continuous => {
            let isis = profile.n_spikes - 1;
            if isis < rule.min_isis || !profile.stationary {
                let want = if isis >= 1 { have * (rule.min_isis as f64 / isis as f64).max(2.0) } else { 2.0 * have };
                return Err(MetricsError::NeedsLongerTrace { have, want });
            }
        }
        Regime::Bursting => {
            if profile.burst_counts.len() < rule.min_bursts {
                let want = profile.inter_burst_period * (rule.min_bursts + 2) as f64;
                return Err(MetricsError::NeedsLongerTrace { have, want: want.max(2.0 * have) });
            }
        }
    }
    Ok(profile)
}

/// Full classification of a trace's output node.
pub fn classify(trace: &Trace, cfg: &DetectorConfig, rule: &GapRule) -> Result<BurstProfile, MetricsError> {
    classify_train(&detect_spikes(trace, cfg)?, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg0() -> DetectorConfig {
        DetectorConfig { transient_fraction: 0.0, ..DetectorConfig::default() }
    }

    fn pulses(times: &[f64], t_end: f64, dt: f64, width: f64) -> Vec<f64> {
        let n = (t_end / dt) as usize + 1;
        let mut x = vec![0.0; n];
        for &t in times {
            let a = (t / dt) as usize;
            let b = ((t + width) / dt) as usize;
            for v in x.iter_mut().take(b.min(n - 1) + 1).skip(a) {
                *v = 1.0;
            }
        }
        x
    }

    fn train(times: Vec<f64>) -> SpikeTrain {
        let end = times.last().copied().unwrap_or(0.0) + 1.0;
        SpikeTrain { spike_times: times, threshold: 0.5, window: (0.0, end), peak_to_peak: 1.0 }
    }

    #[test]
    fn constant_trace_has_no_spikes() {
        let s = detect_in_signal(&[0.3; 1000], 0.0, 1e-8, &cfg0()).unwrap();
        assert!(s.spike_times.is_empty());
        let p = group_bursts(&s, &GapRule::default());
        assert_eq!(p.regime, Regime::Quiescent);
    }

    #[test]
    fn sinusoid_gives_one_spike_per_period() {
        let dt = 1e-8;
        let x: Vec<f64> = (0..=100_000).map(|k| (2.0 * std::f64::consts::PI * 1e5 * k as f64 * dt).sin()).collect();
        let s = detect_in_signal(&x, 0.0, dt, &cfg0()).unwrap();
        assert_eq!(s.spike_times.len(), 100);
        let p = group_bursts(&s, &GapRule::default());
        assert_eq!(p.regime, Regime::Continuous);
        assert!((p.mean_isi - 1e-5).abs() < 1e-9);
    }

    #[test]
    fn short_trace_is_an_error() {
        assert!(detect_in_signal(&[0.0], 0.0, 1e-8, &cfg0()).is_err());
    }

    #[test]
    fn small_ripples_are_below_the_noise_floor() {
        let x: Vec<f64> = (0..10_000).map(|k| 0.01 * (k as f64 * 0.01).sin()).collect();
        assert!(detect_in_signal(&x, 0.0, 1e-8, &cfg0()).unwrap().spike_times.is_empty());
    }

    #[test]
    fn prominence_rejects_shallow_dips() {
        // the second bump rises only 15% of peak-to-peak above its trough
        let mut x = vec![0.0; 50];
        x.extend(vec![1.0; 20]);
        x.extend(vec![0.45; 5]);
        x.extend(vec![0.6; 20]);
        x.extend(vec![0.0; 50]);
        x.extend(vec![1.0; 20]);
        x.extend(vec![0.0; 50]);
        let s = detect_in_signal(&x, 0.0, 1.0, &DetectorConfig { min_isi: 0.0, ..cfg0() }).unwrap();
        assert_eq!(s.spike_times.len(), 2);
    }

    #[test]
    fn burst_generator_is_recovered() {
        let mut times = Vec::new();
        for g in 0..6 {
            let onset = 0.1e-3 + g as f64 * 5.8e-3;
            for p in 0..5 {
                times.push(onset + p as f64 * 200e-6);
            }
        }
        let x = pulses(&times, 36e-3, 1e-6, 20e-6);
        let s = detect_in_signal(&x, 0.0, 1e-6, &cfg0()).unwrap();
        assert_eq!(s.spike_times.len(), 30);
        let p = group_bursts(&s, &GapRule::default());
        assert_eq!(p.regime, Regime::Bursting);
        assert_eq!(p.spikes_per_burst, 5);
        assert!(p.stationary);
        assert!((p.inter_burst_period - 5.8e-3).abs() < 2e-6);
        assert!((p.active_phase - 0.8e-3).abs() < 2e-6);
        assert!((p.mean_isi - 200e-6).abs() < 2e-6);
    }

    #[test]
    fn duty_cycle_from_construction() {
        // 3 spikes spanning 2 ms, groups every 10 ms
        let mut times = Vec::new();
        for g in 0..5 {
            let onset = g as f64 * 10e-3;
            times.extend([onset, onset + 1e-3, onset + 2e-3]);
        }
        let p = group_bursts(&train(times), &GapRule::default());
        assert_eq!(p.spikes_per_burst, 3);
        assert!((p.duty_cycle - 0.2).abs() < 1e-12);
        assert_eq!(p.duty_cycle * p.inter_burst_period, p.active_phase);
        assert!((p.inter_burst_frequency - 100.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_train_is_continuous() {
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 10e-6).collect();
        let p = classify_train(&train(times), &GapRule::default()).unwrap();
        assert_eq!(p.regime, Regime::Continuous);
        assert_eq!(p.spikes_per_burst, 0);
        assert!(p.bursts.is_empty());
    }

    #[test]
    fn two_spike_bursts_use_the_fallback_gap() {
        // alternating 3 and 15: no ISI exceeds 3x the median
        let mut times = vec![0.0];
        for k in 0..20 {
            let d = if k % 2 == 0 { 3.0 } else { 15.0 };
            times.push(times.last().unwrap() + d);
        }
        let p = group_bursts(&train(times), &GapRule::default());
        assert_eq!(p.regime, Regime::Bursting);
        assert_eq!(p.spikes_per_burst, 2);
    }

    #[test]
    fn single_spike_groups_are_continuous() {
        // irregular single spikes never form Bursting(1)
        let times = vec![0.0, 1.0, 10.0, 11.0, 30.0, 31.0, 32.0, 60.0, 90.0, 120.0];
        let p = group_bursts(&train(times), &GapRule::default());
        assert_ne!(p.spikes_per_burst, 1);
        if p.regime == Regime::Bursting {
            assert!(p.spikes_per_burst >= 2);
        }
    }

    #[test]
    fn nonstationary_counts_are_flagged() {
        let mut times = Vec::new();
        let mut t = 0.0;
        for n in [3, 4, 5, 3, 4, 5, 3, 4, 5] {
            for _ in 0..n {
                times.push(t);
                t += 1.0;
            }
            t += 20.0;
        }
        let p = group_bursts(&train(times), &GapRule::default());
        assert_eq!(p.regime, Regime::Bursting);
        assert!(!p.stationary);
    }

    #[test]
    fn too_few_bursts_request_a_longer_trace() {
        let times = vec![0.0, 1.0, 2.0, 50.0, 51.0, 52.0, 100.0, 101.0, 102.0];
        let err = classify_train(&train(times), &GapRule::default()).unwrap_err();
        assert!(matches!(err, MetricsError::NeedsLongerTrace { .. }));
    }

    #[test]
    fn summary_has_contract_keys() {
        let v = serde_json::to_value(BurstProfile::quiescent(0).summary()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["duty_cycle", "inter_burst_frequency_hz", "n_bursts", "regime", "spikes_per_burst", "stationary"]);
        assert_eq!(v["regime"], "quiescent");
    }
}
