//! PSP and reset kernels, and the exponential traces that evaluate their
//! convolutions with spike trains.
//!
//! Every convolution in the model is a sum of kernel evaluations over past
//! impulses. Both kernels are (differences of) exponentials, so the sum can be
//! propagated exactly between grid points by multiplying two state variables
//! with fixed decay factors. With spikes restricted to grid times the traces
//! are exact; they are checked against direct kernel summation in the tests.
//!
//! Timing convention: an impulse delivered at time `t` contributes to values
//! read at strictly later times. [`TraceState::step`] therefore adds the
//! impulse at the current time and then advances the state by `dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel constants (mV, ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub eps0: f64,
    pub kappa0: f64,
    pub tau_m: f64,
    pub tau_s: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            eps0: 4.0,
            kappa0: -15.0,
            tau_m: 10.0,
            tau_s: 5.0,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > self.tau_s && self.tau_s > 0.0) {
            return Err(Error::config(format!(
                "kernel time constants must satisfy tau_m > tau_s > 0 (got {} and {})",
                self.tau_m, self.tau_s
            )));
        }
        if !(self.eps0 > 0.0) {
            return Err(Error::config("eps0 must be positive"));
        }
        if !(self.kappa0 < 0.0) {
            return Err(Error::config("kappa0 must be negative"));
        }
        Ok(())
    }

    /// PSP kernel `eps0 (exp(-s/tau_m) - exp(-s/tau_s))` for `s >= 0`, else 0.
    #[inline]
    pub fn psp(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else {
            self.eps0 * ((-s / self.tau_m).exp() - (-s / self.tau_s).exp())
        }
    }

    /// Reset kernel `kappa0 exp(-s/tau_m)` for `s >= 0`, else 0.
    #[inline]
    pub fn reset(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else {
            self.kappa0 * (-s / self.tau_m).exp()
        }
    }

    pub fn eval(&self, kind: KernelKind, s: f64) -> f64 {
        match kind {
            KernelKind::Psp => self.psp(s),
            KernelKind::Reset => self.reset(s),
        }
    }
}

pub fn psp_kernel(s: f64, params: &KernelParams) -> f64 {
    params.psp(s)
}

pub fn reset_kernel(s: f64, params: &KernelParams) -> f64 {
    params.reset(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Difference of exponentials, `eps0 (slow - fast)`.
    Psp,
    /// Single exponential, `kappa0 slow`.
    Reset,
}

/// State of one exponential-filter pair.
///
/// `slow` holds `sum_f exp(-(t - t_f)/tau_m)`, `fast` the same with `tau_s`;
/// `last_value` is the kernel sum at the current time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceState {
    pub slow: f64,
    pub fast: f64,
    pub last_value: f64,
}

/// Precomputed decay factors and scale for stepping a [`TraceState`] on a
/// fixed grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStepper {
    kind: KernelKind,
    scale: f64,
    slow_decay: f64,
    fast_decay: f64,
}

impl TraceStepper {
    pub fn new(kind: KernelKind, params: &KernelParams, dt: f64) -> Self {
        let scale = match kind {
            KernelKind::Psp => params.eps0,
            KernelKind::Reset => params.kappa0,
        };
        TraceStepper {
            kind,
            scale,
            slow_decay: (-dt / params.tau_m).exp(),
            fast_decay: (-dt / params.tau_s).exp(),
        }
    }

    pub fn psp(params: &KernelParams, dt: f64) -> Self {
        Self::new(KernelKind::Psp, params, dt)
    }

    pub fn reset(params: &KernelParams, dt: f64) -> Self {
        Self::new(KernelKind::Reset, params, dt)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    #[inline]
    pub fn slow_decay(&self) -> f64 {
        self.slow_decay
    }

    #[inline]
    pub fn fast_decay(&self) -> f64 {
        self.fast_decay
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Kernel sum represented by the pair `(slow, fast)`.
    #[inline]
    pub fn value_of(&self, slow: f64, fast: f64) -> f64 {
        match self.kind {
            KernelKind::Psp => self.scale * (slow - fast),
            KernelKind::Reset => self.scale * slow,
        }
    }

    /// Adds `impulse` at the current time, then advances the state by one
    /// grid step.
    #[inline]
    pub fn step(&self, state: &mut TraceState, impulse: f64) {
        state.slow = (state.slow + impulse) * self.slow_decay;
        state.fast = (state.fast + impulse) * self.fast_decay;
        state.last_value = self.value_of(state.slow, state.fast);
    }
}

impl TraceState {
    pub fn zero() -> Self {
        TraceState::default()
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.last_value
    }
}

/// Adds `impulse` at the current time, then advances by `dt` (any positive
/// real). Decay factors are recomputed on every call; simulation loops use
/// [`TraceStepper`] instead.
pub fn trace_step(
    state: TraceState,
    kind: KernelKind,
    params: &KernelParams,
    dt: f64,
    impulse: f64,
) -> TraceState {
    debug_assert!(dt > 0.0);
    let mut next = state;
    TraceStepper::new(kind, params, dt).step(&mut next, impulse);
    next
}

/// Double-convolution trace `([Y (X * eps)] * eps)(t)`.
///
/// `inner` filters the presynaptic (input) train. Each gating (hidden) spike
/// delivers an impulse of size `inner.value()` to `outer`, whose value is the
/// eligibility used by the hidden-layer weight update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DoubleTraceState {
    pub inner: TraceState,
    pub outer: TraceState,
}

impl DoubleTraceState {
    /// Advances one grid step. `input_impulse` is the number (or weight) of
    /// presynaptic spikes arriving now; `gate` marks a postsynaptic spike now.
    #[inline]
    pub fn step(&mut self, stepper: &TraceStepper, input_impulse: f64, gate: bool) {
        let gated = if gate { self.inner.last_value } else { 0.0 };
        stepper.step(&mut self.inner, input_impulse);
        stepper.step(&mut self.outer, gated);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.outer.last_value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(kind: KernelKind, p: &KernelParams, impulses: &[(f64, f64)], t: f64) -> f64 {
        impulses
            .iter()
            .filter(|(tf, _)| *tf < t)
            .map(|(tf, w)| w * p.eval(kind, t - tf))
            .sum()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn psp_kernel_values() {
        let p = KernelParams::default();
        assert_eq!(psp_kernel(0.0, &p), 0.0);
        assert_eq!(psp_kernel(-5.0, &p), 0.0);
        let peak = 10.0 * std::f64::consts::LN_2;
        assert!((psp_kernel(peak, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psp_kernel_peak_by_scan() {
        let p = KernelParams::default();
        let (mut best_s, mut best_v) = (0.0, f64::MIN);
        for i in 1..=1_000_000 {
            let s = i as f64 * 1e-4;
            let v = p.psp(s);
            if v > best_v {
                best_v = v;
                best_s = s;
            }
        }
        assert!((best_s - 6.9315).abs() < 1e-3, "argmax {best_s}");
        assert!((best_v - 1.0).abs() < 1e-9, "max {best_v}");
    }

    #[test]
    fn reset_kernel_values() {
        let p = KernelParams::default();
        assert_eq!(reset_kernel(0.0, &p), -15.0);
        assert_eq!(reset_kernel(-1.0, &p), 0.0);
        assert!((reset_kernel(10.0, &p) - (-5.518_191_617_571_635)).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = KernelParams {
            tau_s: 12.0,
            ..KernelParams::default()
        };
        assert!(p.validate().is_err());
        let p = KernelParams {
            kappa0: 1.0,
            ..KernelParams::default()
        };
        assert!(p.validate().is_err());
        assert!(KernelParams::default().validate().is_ok());
    }

    #[test]
    fn trace_step_zero_stays_zero() {
        let p = KernelParams::default();
        let s = trace_step(TraceState::zero(), KernelKind::Psp, &p, 1.0, 0.0);
        assert_eq!(s, TraceState::zero());
    }

    #[test]
    fn trace_step_single_impulse_reads_peak() {
        let p = KernelParams::default();
        let s = trace_step(
            TraceState::zero(),
            KernelKind::Psp,
            &p,
            10.0 * std::f64::consts::LN_2,
            1.0,
        );
        assert!((s.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_step_two_impulses() {
        let p = KernelParams::default();
        let k = KernelKind::Psp;
        let mut s = trace_step(TraceState::zero(), k, &p, 5.0, 0.0);
        s = trace_step(s, k, &p, 15.0, 1.0);
        s = trace_step(s, k, &p, 10.0, 1.0);
        let expected = p.psp(25.0) + p.psp(10.0);
        assert!(close(s.value(), expected, 1e-12));
    }

    #[test]
    fn reset_trace_applies_from_next_step() {
        let p = KernelParams::default();
        let st = TraceStepper::reset(&p, 1.0);
        let mut s = TraceState::zero();
        assert_eq!(s.value(), 0.0);
        st.step(&mut s, 1.0);
        assert!(close(s.value(), p.reset(1.0), 1e-12));
    }

    #[test]
    fn decays_monotonically_without_impulses() {
        let p = KernelParams::default();
        for kind in [KernelKind::Psp, KernelKind::Reset] {
            let st = TraceStepper::new(kind, &p, 1.0);
            let mut s = TraceState::zero();
            st.step(&mut s, 1.0);
            // PSP rises until its peak; check from the peak on.
            for _ in 0..10 {
                st.step(&mut s, 0.0);
            }
            let mut prev = s.value().abs();
            for _ in 0..400 {
                st.step(&mut s, 0.0);
                assert!(s.value().abs() <= prev);
                prev = s.value().abs();
            }
            assert!(prev < 1e-12);
        }
    }

    #[test]
    fn double_trace_matches_nested_sum() {
        let p = KernelParams::default();
        let st = TraceStepper::psp(&p, 1.0);
        let inputs = [3usize, 4, 20, 21, 60];
        let gates = [10usize, 25, 26, 70];
        let mut d = DoubleTraceState::default();
        for k in 0..120usize {
            let t = k as f64;
            let nested: f64 = gates
                .iter()
                .filter(|&&g| g < k)
                .map(|&g| {
                    let inner: f64 = inputs
                        .iter()
                        .filter(|&&i| i < g)
                        .map(|&i| p.psp((g - i) as f64))
                        .sum();
                    inner * p.psp(t - g as f64)
                })
                .sum();
            assert!(close(d.value(), nested, 1e-9), "step {k}");
            let imp = inputs.iter().filter(|&&i| i == k).count() as f64;
            d.step(&st, imp, gates.contains(&k));
        }
    }

    proptest! {
        #[test]
        fn superposition_matches_kernel_sum(
            raw in prop::collection::vec((0usize..300, -3.0f64..3.0), 0..30),
            kind_is_psp in any::<bool>(),
        ) {
            let p = KernelParams::default();
            let kind = if kind_is_psp { KernelKind::Psp } else { KernelKind::Reset };
            let st = TraceStepper::new(kind, &p, 1.0);
            let mut impulse = vec![0.0; 300];
            for &(k, w) in &raw {
                impulse[k] += w;
            }
            let list: Vec<(f64, f64)> = raw.iter().map(|&(k, w)| (k as f64, w)).collect();
            let mut s = TraceState::zero();
            for (k, &imp) in impulse.iter().enumerate() {
                let expect = brute(kind, &p, &list, k as f64);
                let scale: f64 = list.iter().map(|(_, w)| w.abs()).sum::<f64>().max(1.0);
                prop_assert!((s.value() - expect).abs() <= 1e-9 * scale.max(expect.abs()));
                st.step(&mut s, imp);
            }
        }

        #[test]
        fn kernels_vanish_for_negative_lags(s in -1e6f64..-1e-12) {
            let p = KernelParams::default();
            prop_assert_eq!(p.psp(s), 0.0);
            prop_assert_eq!(p.reset(s), 0.0);
        }
    }
}
