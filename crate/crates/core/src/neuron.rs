//! Stochastic spike-response neuron with exponential escape noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{TraceState, TraceStepper};

/// Largest exponent passed to `exp` in [`escape_rate`]; keeps the rate finite
/// so that zero traces never multiply an infinite rate.
const MAX_RATE_EXPONENT: f64 = 700.0;

/// Escape-noise parameters: `rho0` in spikes/ms at threshold, `theta` and
/// `delta_u` in mV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeParams {
    pub rho0: f64,
    pub theta: f64,
    pub delta_u: f64,
}

impl EscapeParams {
    pub fn output() -> Self {
        EscapeParams {
            rho0: 0.01,
            theta: 15.0,
            delta_u: 0.2,
        }
    }

    pub fn hidden() -> Self {
        EscapeParams {
            delta_u: 2.0,
            ..Self::output()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0 && self.delta_u > 0.0) {
            return Err(Error::config(
                "escape parameters need rho0 > 0 and delta_u > 0",
            ));
        }
        Ok(())
    }
}

/// `u = sum_h w_h psp_h + reset`.
pub fn membrane_potential(weights: &[f64], psp_values: &[f64], reset_value: f64) -> Result<f64> {
    if weights.len() != psp_values.len() {
        return Err(Error::config(format!(
            "membrane potential: {} weights but {} PSP values",
            weights.len(),
            psp_values.len()
        )));
    }
    Ok(dot(weights, psp_values) + reset_value)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Instantaneous firing rate `rho0 exp((u - theta) / delta_u)` in spikes/ms.
#[inline]
pub fn escape_rate(u: f64, params: &EscapeParams) -> f64 {
    let x = ((u - params.theta) / params.delta_u).min(MAX_RATE_EXPONENT);
    params.rho0 * x.exp()
}

/// Spikes with probability `min(rho dt, 1)`. Always draws exactly one uniform
/// variate.
#[inline]
pub fn sample_spike<R: Rng + ?Sized>(rho: f64, dt: f64, rng: &mut R) -> bool {
    let p = (rho * dt).min(1.0);
    let x: f64 = rng.random();
    x < p
}

/// Per-neuron simulation state: one PSP trace per afferent plus the reset
/// trace driven by the neuron's own spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub psp_traces: Vec<TraceState>,
    pub reset_trace: TraceState,
    pub u: f64,
    pub rho: f64,
}

impl NeuronState {
    pub fn new(n_afferents: usize) -> Self {
        NeuronState {
            psp_traces: vec![TraceState::zero(); n_afferents],
            reset_trace: TraceState::zero(),
            u: 0.0,
            rho: 0.0,
        }
    }

    /// Evaluates `u` and `rho` at the current time from the trace values.
    pub fn evaluate(&mut self, weights: &[f64], escape: &EscapeParams) -> Result<f64> {
        if weights.len() != self.psp_traces.len() {
            return Err(Error::config("weight count differs from afferent count"));
        }
        let drive: f64 = weights
            .iter()
            .zip(&self.psp_traces)
            .map(|(w, s)| w * s.value())
            .sum();
        self.u = drive + self.reset_trace.value();
        self.rho = escape_rate(self.u, escape);
        Ok(self.u)
    }

    /// One grid step: evaluate, sample, then advance every trace with the
    /// afferent impulses and the neuron's own spike.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        weights: &[f64],
        afferent_impulses: &[f64],
        escape: &EscapeParams,
        psp: &TraceStepper,
        reset: &TraceStepper,
        dt: f64,
        rng: &mut R,
    ) -> Result<bool> {
        self.evaluate(weights, escape)?;
        let spiked = sample_spike(self.rho, dt, rng);
        for (s, &imp) in self.psp_traces.iter_mut().zip(afferent_impulses) {
            psp.step(s, imp);
        }
        reset.step(&mut self.reset_trace, if spiked { 1.0 } else { 0.0 });
        Ok(spiked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn potential_examples() {
        assert_eq!(
            membrane_potential(&[1.0, 2.0], &[0.0, 0.0], 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            membrane_potential(&[2.0, 3.0], &[1.0, 0.5], 0.0).unwrap(),
            3.5
        );
        assert!(membrane_potential(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn potential_from_traces_matches_kernel_sum() {
        // One afferent with w = 1 spiking at t = 0 and an own spike at t = 0,
        // read at 10 ln 2 ms.
        let p = KernelParams::default();
        let s = 10.0 * std::f64::consts::LN_2;
        let psp = crate::kernels::trace_step(
            TraceState::zero(),
            crate::kernels::KernelKind::Psp,
            &p,
            s,
            1.0,
        );
        let rst = crate::kernels::trace_step(
            TraceState::zero(),
            crate::kernels::KernelKind::Reset,
            &p,
            s,
            1.0,
        );
        let u = membrane_potential(&[1.0], &[psp.value()], rst.value()).unwrap();
        let oracle = p.psp(s) + p.reset(s);
        assert!((u - oracle).abs() < 1e-12);
        assert!((u - (-6.5)).abs() < 1e-9);
    }

    #[test]
    fn escape_rate_examples() {
        let e = EscapeParams::output();
        assert!((escape_rate(15.0, &e) - 0.01).abs() < 1e-15);
        assert!((escape_rate(15.2, &e) - 0.01 * std::f64::consts::E).abs() < 1e-12);
        assert_eq!(escape_rate(f64::NEG_INFINITY, &e), 0.0);
        assert!(escape_rate(1e6, &e).is_finite());
    }

    #[test]
    fn escape_rate_monotone() {
        let e = EscapeParams::hidden();
        let mut prev = 0.0;
        for i in -200..200 {
            let r = escape_rate(i as f64 * 0.25, &e);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(!sample_spike(0.0, 1.0, &mut rng));
            assert!(sample_spike(1.0, 1.0, &mut rng));
            assert!(sample_spike(5.0, 1.0, &mut rng));
        }
    }

    #[test]
    fn sampling_draws_one_variate() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        sample_spike(0.3, 1.0, &mut a);
        let _: f64 = b.random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn sampling_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let hits = (0..n).filter(|_| sample_spike(0.01, 1.0, &mut rng)).count();
        let p = 0.01;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = hits as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn sharp_threshold_recovers_deterministic_crossing() {
        // delta_u = 1e-3: a potential one step above threshold fires with
        // probability ~1, one step below essentially never.
        let e = EscapeParams {
            delta_u: 1e-3,
            ..EscapeParams::output()
        };
        let above = (escape_rate(15.01, &e) * 1.0).min(1.0);
        let below = escape_rate(14.99, &e) * 1.0;
        assert!(above > 0.999);
        assert!(below < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut first_ok = 0;
        for _ in 0..2000 {
            // Ramp crossing threshold at step 10.
            let fired = (0..20)
                .map(|k| 14.81 + 0.02 * k as f64)
                .position(|u| sample_spike(escape_rate(u, &e), 1.0, &mut rng));
            if fired == Some(10) {
                first_ok += 1;
            }
        }
        assert!(first_ok as f64 / 2000.0 > 0.999);
    }

    #[test]
    fn neuron_state_is_deterministic() {
        let p = KernelParams::default();
        let psp = TraceStepper::psp(&p, 1.0);
        let rst = TraceStepper::reset(&p, 1.0);
        let e = EscapeParams::hidden();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut n = NeuronState::new(3);
            (0..500)
                .map(|k| {
                    let imp = [(k % 7 == 0) as u8 as f64, (k % 11 == 0) as u8 as f64, 0.0];
                    n.step(&[6.0, 5.0, 1.0], &imp, &e, &psp, &rst, 1.0, &mut rng)
                        .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert!(run(5).iter().any(|&s| s));
    }
}
