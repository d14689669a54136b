//! Adaptive linearly-implicit integrator for small stiff systems.
//!
//! The stepper is the L-stable second-order Rosenbrock triple of Shampine and
//! Reichelt (the scheme behind `ode23s`), with a third-order error estimate
//! and a free continuous extension. Discrete events are located on the
//! continuous extension by bisection and applied exactly at the crossing.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t:e} s (h = {h:e} s)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state at t = {t:e} s")]
    NonFinite { t: f64 },
    #[error("singular iteration matrix at t = {t:e} s")]
    Singular { t: f64 },
    #[error("step budget of {steps} exhausted at t = {t:e} s")]
    TooManySteps { t: f64, steps: usize },
}

impl IntegrationError {
    pub fn time(&self) -> f64 {
        match *self {
            IntegrationError::StepUnderflow { t, .. }
            | IntegrationError::NonFinite { t }
            | IntegrationError::Singular { t }
            | IntegrationError::TooManySteps { t, .. } => t,
        }
    }
}

/// A first-order system y' = f(t, y) with analytic Jacobian and optional
/// discrete events.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N];

    fn jacobian(&self, t: f64, y: &[f64; N]) -> [[f64; N]; N];

    /// Explicit time dependence, df/dt.
    fn time_derivative(&self, _t: f64, _y: &[f64; N]) -> [f64; N] {
        [0.0; N]
    }

    /// Pull an accepted state back onto its admissible set.
    fn project(&self, _y: &mut [f64; N]) {}

    fn num_events(&self) -> usize {
        0
    }

    /// Event indicators; an event fires when one crosses zero from below.
    fn event_values(&self, _t: f64, _y: &[f64; N], _out: &mut [f64]) {}

    fn apply_event(&mut self, _index: usize, _t: f64, _y: &[f64; N]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-7,
            max_step: 1e-7,
            initial_step: 1e-12,
            min_step: 1e-20,
            max_steps: 200_000_000,
        }
    }
}

impl StepControl {
    /// Same control with both tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self { rtol: self.rtol / factor, atol: self.atol / factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected: usize,
    pub events: usize,
}

struct Lu<const N: usize> {
    a: [[f64; N]; N],
    perm: [usize; N],
}

impl<const N: usize> Lu<N> {
    fn factor(mut a: [[f64; N]; N]) -> Option<Self> {
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        for k in 0..N {
            let mut piv = k;
            let mut best = a[k][k].abs();
            for (i, row) in a.iter().enumerate().skip(k + 1) {
                if row[k].abs() > best {
                    best = row[k].abs();
                    piv = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            a.swap(k, piv);
            perm.swap(k, piv);
            for i in k + 1..N {
                let f = a[i][k] / a[k][k];
                a[i][k] = f;
                for j in k + 1..N {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        Some(Self { a, perm })
    }

    fn solve(&self, b: &[f64; N]) -> [f64; N] {
        let mut x = [0.0; N];
        for i in 0..N {
            x[i] = b[self.perm[i]];
        }
        for i in 0..N {
            for j in 0..i {
                x[i] -= self.a[i][j] * x[j];
            }
        }
        for i in (0..N).rev() {
            for j in i + 1..N {
                x[i] -= self.a[i][j] * x[j];
            }
            x[i] /= self.a[i][i];
        }
        x
    }
}

const D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + sqrt 2)
const E32: f64 = 7.414_213_562_373_095; // 6 + sqrt 2

struct Step<const N: usize> {
    k1: [f64; N],
    k2: [f64; N],
    y_new: [f64; N],
    f_new: [f64; N],
    err: f64,
}

fn rosenbrock_step<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
    ctl: &StepControl,
) -> Result<Step<N>, IntegrationError> {
    let jac = sys.jacobian(t, y);
    let dfdt = sys.time_derivative(t, y);
    let mut w = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            w[i][j] = -h * D * jac[i][j];
        }
        w[i][i] += 1.0;
    }
    let lu = Lu::factor(w).ok_or(IntegrationError::Singular { t })?;

    let mut rhs = [0.0; N];
    for i in 0..N {
        rhs[i] = f0[i] + h * D * dfdt[i];
    }
    let k1 = lu.solve(&rhs);

    let mut y_mid = *y;
    for i in 0..N {
        y_mid[i] += 0.5 * h * k1[i];
    }
    let f1 = sys.rhs(t + 0.5 * h, &y_mid);
    for i in 0..N {
        rhs[i] = f1[i] - k1[i];
    }
    let mut k2 = lu.solve(&rhs);
    for i in 0..N {
        k2[i] += k1[i];
    }

    let mut y_new = *y;
    for i in 0..N {
        y_new[i] += h * k2[i];
    }
    let f2 = sys.rhs(t + h, &y_new);
    for i in 0..N {
        rhs[i] = f2[i] - E32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - f0[i]) + h * D * dfdt[i];
    }
    let k3 = lu.solve(&rhs);

    let mut y_proj = y_new;
    sys.project(&mut y_proj);
    // A projected component is only trusted when the projected state is a
    // rest point for it (the clamp is active); otherwise the overshoot
    // counts as error.
    let f_proj = if y_proj != y_new { Some(sys.rhs(t + h, &y_proj)) } else { None };
    let mut err: f64 = 0.0;
    for i in 0..N {
        let e = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
        let clamped_at_rest = y_proj[i] != y_new[i] && f_proj.as_ref().map_or(false, |f| f[i] == 0.0);
        let e = if clamped_at_rest {
            let mut lo = y_new;
            lo[i] -= e;
            sys.project(&mut lo);
            y_proj[i] - lo[i]
        } else {
            e
        };
        let sc = ctl.atol + ctl.rtol * y[i].abs().max(y_proj[i].abs());
        err = err.max((e / sc).abs());
    }
    if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
        err = f64::INFINITY;
    }
    let (y_new, f2) = match f_proj {
        Some(f) => (y_proj, f),
        None => (y_new, f2),
    };
    Ok(Step { k1, k2, y_new, f_new: f2, err })
}

fn dense<const N: usize>(y: &[f64; N], step: &Step<N>, h: f64, s: f64) -> [f64; N] {
    let c1 = s * (1.0 - s) / (1.0 - 2.0 * D);
    let c2 = s * (s - 2.0 * D) / (1.0 - 2.0 * D);
    let mut out = *y;
    for i in 0..N {
        out[i] += h * (c1 * step.k1[i] + c2 * step.k2[i]);
    }
    out
}

/// Integrate from `t0` and report the state at each of `sample_times`
/// (sorted, all `>= t0`). The observer receives the sample index, time and
/// state. Returns the final state and step statistics.
pub fn integrate_sampled<const N: usize, S, F>(
    sys: &S,
    t0: f64,
    y0: [f64; N],
    sample_times: &[f64],
    ctl: &StepControl,
    mut observer: F,
) -> Result<([f64; N], IntegrationStats), IntegrationError>
where
    S: OdeSystem<N>,
    F: FnMut(usize, f64, &[f64; N]),
{
    struct NoEvents<'a, S>(&'a S);
    impl<const N: usize, S: OdeSystem<N>> OdeSystem<N> for NoEvents<'_, S> {
        fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
            self.0.rhs(t, y)
        }
        fn jacobian(&self, t: f64, y: &[f64; N]) -> [[f64; N]; N] {
            self.0.jacobian(t, y)
        }
        fn time_derivative(&self, t: f64, y: &[f64; N]) -> [f64; N] {
            self.0.time_derivative(t, y)
        }
        fn project(&self, y: &mut [f64; N]) {
            self.0.project(y)
        }
    }
    integrate_with_events(&mut NoEvents(sys), t0, y0, sample_times, ctl, |k, t, y, _| observer(k, t, y))
}

/// As [`integrate_sampled`], for systems with discrete events. The observer
/// also sees the system, so it can read discrete state at each sample.
pub fn integrate_with_events<const N: usize, S, F>(
    sys: &mut S,
    t0: f64,
    y0: [f64; N],
    sample_times: &[f64],
    ctl: &StepControl,
    mut observer: F,
) -> Result<([f64; N], IntegrationStats), IntegrationError>
where
    S: OdeSystem<N>,
    F: FnMut(usize, f64, &[f64; N], &S),
{
    let mut stats = IntegrationStats::default();
    let Some(&t_end) = sample_times.last() else {
        return Ok((y0, stats));
    };
    let mut t = t0;
    let mut y = y0;
    sys.project(&mut y);
    let mut next_sample = 0;
    while next_sample < sample_times.len() && sample_times[next_sample] <= t0 {
        observer(next_sample, sample_times[next_sample], &y, sys);
        next_sample += 1;
    }

    let n_ev = sys.num_events();
    let mut ev_old = vec![0.0; n_ev];
    let mut ev_new = vec![0.0; n_ev];
    let mut ev_tmp = vec![0.0; n_ev];
    sys.event_values(t, &y, &mut ev_old);

    let mut f0 = sys.rhs(t, &y);
    let mut h = ctl.initial_step.min(ctl.max_step);
    let mut steps = 0usize;

    while t < t_end {
        if steps >= ctl.max_steps {
            return Err(IntegrationError::TooManySteps { t, steps });
        }
        steps += 1;
        let remaining = t_end - t;
        let mut h_try = h.min(ctl.max_step);
        if h_try >= remaining || remaining - h_try < 1e-12 * remaining.max(t.abs()) {
            h_try = remaining;
        }
        if h_try < ctl.min_step {
            return Err(IntegrationError::StepUnderflow { t, h: h_try });
        }
        let step = rosenbrock_step(sys, t, &y, &f0, h_try, ctl)?;
        if step.err > 1.0 {
            stats.rejected += 1;
            if !step.err.is_finite() {
                h = h_try * 0.1;
            } else {
                h = h_try * (0.8 * step.err.powf(-1.0 / 3.0)).max(0.1);
            }
            if h < ctl.min_step {
                if !step.err.is_finite() {
                    return Err(IntegrationError::NonFinite { t });
                }
                return Err(IntegrationError::StepUnderflow { t, h });
            }
            continue;
        }
        stats.accepted += 1;

        let mut t_new = t + h_try;
        let mut y_new = step.y_new;
        sys.project(&mut y_new);
        let mut fired = None;
        if n_ev > 0 {
            sys.event_values(t_new, &y_new, &mut ev_new);
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n_ev {
                if ev_old[i] < 0.0 && ev_new[i] >= 0.0 {
                    // bisect on the continuous extension
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..64 {
                        let mid = 0.5 * (lo + hi);
                        let mut ym = dense(&y, &step, h_try, mid);
                        sys.project(&mut ym);
                        sys.event_values(t + mid * h_try, &ym, &mut ev_tmp);
                        if ev_tmp[i] >= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                        if (hi - lo) * h_try <= 1e-15 * t_new.abs().max(1e-9) {
                            break;
                        }
                    }
                    if best.map_or(true, |(_, s)| hi < s) {
                        best = Some((i, hi));
                    }
                }
            }
            if let Some((i, s)) = best {
                t_new = t + s * h_try;
                y_new = dense(&y, &step, h_try, s);
                sys.project(&mut y_new);
                fired = Some(i);
            }
        }

        while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
            let ts = sample_times[next_sample];
            let mut ys = if ts >= t_new { y_new } else { dense(&y, &step, h_try, (ts - t) / h_try) };
            sys.project(&mut ys);
            observer(next_sample, ts, &ys, sys);
            next_sample += 1;
        }

        if y_new.iter().any(|v| !v.is_finite()) {
            return Err(IntegrationError::NonFinite { t: t_new });
        }

        let h_next = h_try * (0.8 * step.err.max(1e-12).powf(-1.0 / 3.0)).clamp(0.2, 5.0);
        t = t_new;
        y = y_new;
        if let Some(i) = fired {
            stats.events += 1;
            sys.apply_event(i, t, &y);
            f0 = sys.rhs(t, &y);
            // restart conservatively after a discontinuity
            h = h_next.min(ctl.initial_step.max(h_try * 1e-3));
        } else {
            // FSAL only holds when projection left the state unchanged
            f0 = if step.y_new == y { step.f_new } else { sys.rhs(t, &y) };
            h = h_next;
        }
        if n_ev > 0 {
            sys.event_values(t, &y, &mut ev_old);
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay {
        rates: [f64; 2],
    }

    impl OdeSystem<2> for Decay {
        fn rhs(&self, _t: f64, y: &[f64; 2]) -> [f64; 2] {
            [-self.rates[0] * y[0], -self.rates[1] * y[1]]
        }
        fn jacobian(&self, _t: f64, _y: &[f64; 2]) -> [[f64; 2]; 2] {
            [[-self.rates[0], 0.0], [0.0, -self.rates[1]]]
        }
    }

    #[test]
    fn stiff_decay_is_accurate_and_cheap() {
        let sys = Decay { rates: [1.0, 1e9] };
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let ctl = StepControl { rtol: 1e-6, atol: 1e-10, max_step: 1.0, initial_step: 1e-12, ..StepControl::default() };
        let mut out = Vec::new();
        let (_, stats) = integrate_sampled(&sys, 0.0, [1.0, 1.0], &times, &ctl, |_, t, y| out.push((t, *y))).unwrap();
        for (t, y) in out {
            assert!((y[0] - (-t).exp()).abs() < 1e-5, "t = {t}, y = {}", y[0]);
            assert!(y[1].abs() < 1e-6 || t == 0.0);
        }
        assert!(stats.accepted < 5_000, "{stats:?}");
    }

    struct Ramp {
        crossings: Vec<f64>,
        level: f64,
    }

    impl OdeSystem<1> for Ramp {
        fn rhs(&self, _t: f64, _y: &[f64; 1]) -> [f64; 1] {
            [1.0]
        }
        fn jacobian(&self, _t: f64, _y: &[f64; 1]) -> [[f64; 1]; 1] {
            [[0.0]]
        }
        fn num_events(&self) -> usize {
            1
        }
        fn event_values(&self, _t: f64, y: &[f64; 1], out: &mut [f64]) {
            out[0] = y[0] - self.level;
        }
        fn apply_event(&mut self, _i: usize, t: f64, _y: &[f64; 1]) {
            self.crossings.push(t);
            self.level += 0.25;
        }
    }

    #[test]
    fn events_are_located_at_the_crossing() {
        let mut sys = Ramp { crossings: vec![], level: 0.1 };
        let ctl = StepControl { max_step: 0.3, initial_step: 0.3, ..StepControl::default() };
        integrate_with_events(&mut sys, 0.0, [0.0], &[1.0], &ctl, |_, _, _, _| {}).unwrap();
        let expected = [0.1, 0.35, 0.6, 0.85];
        assert_eq!(sys.crossings.len(), expected.len());
        for (a, b) in sys.crossings.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn lu_solves_pivoting_system() {
        let a = [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let lu = Lu::factor(a).unwrap();
        let x = lu.solve(&[5.0, 3.0, 6.0]);
        for (row, b) in a.iter().zip([5.0, 3.0, 6.0]) {
            let ax: f64 = row.iter().zip(&x).map(|(p, q)| p * q).sum();
            assert!((ax - b).abs() < 1e-12);
        }
        assert!(Lu::factor([[1.0, 2.0], [2.0, 4.0]]).is_none());
    }
}
