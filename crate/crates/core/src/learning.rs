//! Weight-update rules.
//!
//! All rules read an [`EpisodeRecord`] and return weight deltas; nothing is
//! applied until [`apply_episode_learning`], which runs gradient update,
//! synaptic scaling and clamping in that order.
//!
//! Target spike trains enter the error signal as Dirac impulses. On the grid a
//! target at step `k` is a mass of `1/dt` at that step, so every `dt`-weighted
//! sum picks up exactly one unit per target spike.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DoubleTraceState, TraceState, TraceStepper};
use crate::matrix::Matrix;
use crate::network::{input_psp_table, EpisodeRecord, LayeredNetwork, Variant};
use crate::neuron::{dot, escape_rate, sample_spike};
use crate::spikes::SpikeTrain;

/// Decay time constant of the filtered error signal, ms.
pub const DEFAULT_TAU_D: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    /// Hidden -> output.
    pub eta_o: f64,
    /// Input -> hidden.
    pub eta_h: f64,
    /// Input -> output in single-layer networks.
    pub eta_single: f64,
}

impl LearningRates {
    /// `eta_o = 0.02 / n_h`, `eta_h = 4 / (n_i n_o n_s)`, `eta = 4 / n_i`.
    pub fn new(n_i: usize, n_h: usize, n_o: usize, n_s: usize) -> Self {
        let eta_o = if n_h > 0 { 0.02 / n_h as f64 } else { 0.0 };
        LearningRates {
            eta_o,
            eta_h: 4.0 / (n_i * n_o * n_s.max(1)) as f64,
            eta_single: 4.0 / n_i as f64,
        }
    }

    fn output_rate(&self, variant: Variant) -> f64 {
        if variant.is_multilayer() {
            self.eta_o
        } else {
            self.eta_single
        }
    }
}

/// Homeostatic band for hidden firing rates; rates in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub gamma: f64,
    pub nu_max: f64,
    pub nu_min: f64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        ScalingParams {
            gamma: 1e-2,
            nu_max: 40.0,
            nu_min: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Gradient of the log-likelihood, errors routed through `w_oh`.
    #[default]
    Backprop,
    /// Low-pass filtered spike-difference errors shared by all hidden neurons.
    #[serde(alias = "bio-backprop")]
    Bio,
}

impl Rule {
    pub fn label(self) -> &'static str {
        match self {
            Rule::Backprop => "backprop",
            Rule::Bio => "bio",
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backprop" => Ok(Rule::Backprop),
            "bio" | "bio-backprop" => Ok(Rule::Bio),
            other => Err(Error::config(format!("unknown learning rule '{other}'"))),
        }
    }
}

/// When the bio rule's weight changes take effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BioSchedule {
    /// Accumulate over the episode, apply at its end.
    #[default]
    EpisodeEnd,
    /// Apply at every step, so the episode sees its own weight changes.
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningSetup {
    pub rule: Rule,
    pub rates: LearningRates,
    pub scaling: ScalingParams,
    pub tau_d: f64,
    pub bio_schedule: BioSchedule,
}

impl LearningSetup {
    pub fn new(rule: Rule, rates: LearningRates) -> Self {
        LearningSetup {
            rule,
            rates,
            scaling: ScalingParams::default(),
            tau_d: DEFAULT_TAU_D,
            bio_schedule: BioSchedule::EpisodeEnd,
        }
    }
}

fn check_targets(record: &EpisodeRecord, targets: &[SpikeTrain]) -> Result<()> {
    if targets.len() != record.n_outputs() {
        return Err(Error::config(format!(
            "{} target trains for {} output neurons",
            targets.len(),
            record.n_outputs()
        )));
    }
    Ok(())
}

/// `sum_o [ sum_{target t} log rho_o(t) - dt sum_t rho_o(t) ]`.
///
/// A target falling where the rate underflows to zero yields `-inf`.
pub fn log_likelihood(record: &EpisodeRecord, targets: &[SpikeTrain]) -> Result<f64> {
    check_targets(record, targets)?;
    let mut total = 0.0;
    for (o, target) in targets.iter().enumerate() {
        let rate = record.output_rate.row(o);
        for k in target.steps(record.dt).filter(|&k| k < record.n_steps) {
            total += rate[k].ln();
        }
        total -= record.dt * rate.iter().sum::<f64>();
    }
    Ok(total)
}

/// `delta_o(t) = [Z_ref(t) - rho_o(t)] / delta_u_o` at every step.
///
/// The rate is capped at `1/dt`: the sampler fires with probability
/// `min(rho dt, 1)`, so a bin never expects more than one spike. Without the
/// cap a single step far above threshold yields an error of order `e^25` and
/// silences the output layer in one update.
pub fn output_error_signal(record: &EpisodeRecord, o: usize, target: &SpikeTrain) -> Vec<f64> {
    let du = record.output_escape.delta_u;
    let cap = 1.0 / record.dt;
    let counts = target.step_counts(record.dt, record.n_steps);
    record
        .output_rate
        .row(o)
        .iter()
        .zip(&counts)
        .map(|(&rho, &n)| (n as f64 / record.dt - rho.min(cap)) / du)
        .collect()
}

pub fn output_error_signals(
    record: &EpisodeRecord,
    targets: &[SpikeTrain],
) -> Result<Vec<Vec<f64>>> {
    check_targets(record, targets)?;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(o, t)| output_error_signal(record, o, t))
        .collect())
}

/// `eta dt sum_t err_o(t) psp_j(t)` for every output `o` and afferent `j`.
pub fn output_update_from_errors(record: &EpisodeRecord, errors: &[Vec<f64>], eta: f64) -> Matrix {
    let n_pre = record.n_presynaptic();
    let mut delta = Matrix::zeros(errors.len(), n_pre);
    for (o, err) in errors.iter().enumerate() {
        for j in 0..n_pre {
            delta.set(o, j, eta * record.dt * dot(err, record.presynaptic_psp(j)));
        }
    }
    delta
}

/// Output-layer gradient step (afferents are hidden neurons, or inputs for
/// single-layer networks).
pub fn output_weight_update(
    record: &EpisodeRecord,
    targets: &[SpikeTrain],
    eta: f64,
) -> Result<Matrix> {
    let errors = output_error_signals(record, targets)?;
    Ok(output_update_from_errors(record, &errors, eta))
}

/// `(eta_h / delta_u_h) dt sum_t [sum_o c_oh err_o(t)] D_hi(t)` where `D_hi` is
/// the double-convolution trace and `c_oh` is `w_oh` or, without coupling,
/// 1 for every pair.
///
/// Evaluated through the adjoint form: for each hidden spike at `t'`, the
/// inner input trace at `t'` multiplies the error filtered anti-causally with
/// the PSP kernel, `dt sum_{t > t'} g_h(t) eps(t - t')`.
pub fn hidden_update_from_errors(
    record: &EpisodeRecord,
    errors: &[Vec<f64>],
    coupling: Option<&Matrix>,
    eta_h: f64,
) -> Matrix {
    let n_i = record.n_inputs();
    let n_h = record.n_hidden();
    let n_steps = record.n_steps;
    let mut delta = Matrix::zeros(n_h, n_i);
    if n_steps == 0 {
        return delta;
    }
    let stepper = TraceStepper::psp(&record.kernel, record.dt);
    let (a_s, a_f) = (stepper.slow_decay(), stepper.fast_decay());
    let factor = eta_h / record.hidden_escape.delta_u;
    let mut g = vec![0.0; n_steps];
    let mut filtered = vec![0.0; n_steps];

    for h in 0..n_h {
        let spikes = &record.hidden_spike_steps[h];
        if spikes.is_empty() {
            continue;
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        for (o, err) in errors.iter().enumerate() {
            let c = coupling.map_or(1.0, |w| w.get(o, h));
            for (gk, e) in g.iter_mut().zip(err) {
                *gk += c * e;
            }
        }
        let (mut slow, mut fast) = (0.0, 0.0);
        filtered[n_steps - 1] = 0.0;
        for k in (0..n_steps - 1).rev() {
            slow = a_s * (g[k + 1] + slow);
            fast = a_f * (g[k + 1] + fast);
            filtered[k] = record.dt * stepper.value_of(slow, fast);
        }
        let row = delta.row_mut(h);
        for &ks in spikes {
            let f = filtered[ks];
            if f == 0.0 {
                continue;
            }
            for (i, d) in row.iter_mut().enumerate() {
                *d += record.delayed_input_psp(h, i, ks) * f;
            }
        }
        row.iter_mut().for_each(|d| *d *= factor);
    }
    delta
}

/// Hidden-layer update with errors backpropagated through `w_oh`.
pub fn hidden_weight_update(
    record: &EpisodeRecord,
    targets: &[SpikeTrain],
    net: &LayeredNetwork,
    rates: &LearningRates,
) -> Result<Matrix> {
    let errors = output_error_signals(record, targets)?;
    Ok(hidden_update_from_errors(
        record,
        &errors,
        Some(&net.w_oh),
        rates.eta_h,
    ))
}

/// Additive homeostatic change pulling each hidden rate into
/// `[nu_min, nu_max]`; zero inside the band.
pub fn synaptic_scaling(w_hi: &Matrix, nu_h: &[f64], params: &ScalingParams) -> Matrix {
    let mut delta = Matrix::zeros(w_hi.rows(), w_hi.cols());
    for (h, &nu) in nu_h.iter().enumerate().take(w_hi.rows()) {
        let drive = if nu > params.nu_max {
            params.nu_max - nu
        } else if nu < params.nu_min {
            params.nu_min - nu
        } else {
            continue;
        };
        for (d, w) in delta.row_mut(h).iter_mut().zip(w_hi.row(h)) {
            *d = params.gamma * w.abs() * drive;
        }
    }
    delta
}

/// Per-output error concentrations for the bio rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredError {
    pub values: Vec<f64>,
    pub tau_d: f64,
}

impl FilteredError {
    pub fn new(n_o: usize, tau_d: f64) -> Self {
        FilteredError {
            values: vec![0.0; n_o],
            tau_d,
        }
    }

    /// Decays for `dt`, then adds `(target - actual) / tau_d` for the spikes of
    /// the current step.
    pub fn step(&mut self, actual: &[u32], target: &[u32], dt: f64) {
        let decay = (-dt / self.tau_d).exp();
        for (o, v) in self.values.iter_mut().enumerate() {
            let diff = target[o] as f64 - actual[o] as f64;
            *v = *v * decay + diff / self.tau_d;
        }
    }
}

pub fn bio_filtered_error_step(
    state: &FilteredError,
    actual: &[u32],
    target: &[u32],
    dt: f64,
) -> FilteredError {
    let mut next = state.clone();
    next.step(actual, target, dt);
    next
}

/// Filtered error of every output at every step of a recorded episode, in the
/// units of the instantaneous error signal: the concentration is divided by
/// `delta_u_o` so that it stands in for `delta_o` at the same magnitude.
pub fn filtered_error_series(
    record: &EpisodeRecord,
    targets: &[SpikeTrain],
    tau_d: f64,
) -> Result<Vec<Vec<f64>>> {
    check_targets(record, targets)?;
    let n_o = record.n_outputs();
    let actual: Vec<Vec<u32>> = record
        .output_trains
        .iter()
        .map(|t| t.step_counts(record.dt, record.n_steps))
        .collect();
    let target: Vec<Vec<u32>> = targets
        .iter()
        .map(|t| t.step_counts(record.dt, record.n_steps))
        .collect();
    let mut state = FilteredError::new(n_o, tau_d);
    let gain = 1.0 / record.output_escape.delta_u;
    let mut out = vec![Vec::with_capacity(record.n_steps); n_o];
    let mut a = vec![0u32; n_o];
    let mut z = vec![0u32; n_o];
    for k in 0..record.n_steps {
        for o in 0..n_o {
            a[o] = actual[o][k];
            z[o] = target[o][k];
        }
        state.step(&a, &z, record.dt);
        for (o, series) in out.iter_mut().enumerate() {
            series.push(gain * state.values[o]);
        }
    }
    Ok(out)
}

/// Bio-rule deltas `(dw_oh, dw_hi)` from per-step filtered errors. The hidden
/// update sums the errors of all outputs without weighting them by `w_oh`.
pub fn bio_weight_updates(
    record: &EpisodeRecord,
    filtered: &[Vec<f64>],
    rates: &LearningRates,
) -> (Matrix, Matrix) {
    let d_out = output_update_from_errors(record, filtered, rates.output_rate(record.variant));
    let d_hid = hidden_update_from_errors(record, filtered, None, rates.eta_h);
    (d_out, d_hid)
}

/// Mean rate of every hidden neuron in Hz.
pub fn hidden_rates_hz(record: &EpisodeRecord) -> Vec<f64> {
    (0..record.n_hidden())
        .map(|h| record.hidden_rate_hz(h))
        .collect()
}

/// Applies one episode's learning to `net`: gradient (or bio) update, then
/// synaptic scaling of the hidden weights, then clamping.
pub fn apply_episode_learning(
    net: &mut LayeredNetwork,
    record: &EpisodeRecord,
    targets: &[SpikeTrain],
    setup: &LearningSetup,
) -> Result<()> {
    let variant = net.config.variant;
    let (d_out, d_hid) = match setup.rule {
        Rule::Backprop => {
            let errors = output_error_signals(record, targets)?;
            let d_out =
                output_update_from_errors(record, &errors, setup.rates.output_rate(variant));
            let d_hid = (variant == Variant::Free).then(|| {
                hidden_update_from_errors(record, &errors, Some(&net.w_oh), setup.rates.eta_h)
            });
            (d_out, d_hid)
        }
        Rule::Bio => {
            let filtered = filtered_error_series(record, targets, setup.tau_d)?;
            let (d_out, d_hid) = bio_weight_updates(record, &filtered, &setup.rates);
            (d_out, (variant == Variant::Free).then_some(d_hid))
        }
    };
    net.w_oh.add_assign(&d_out);
    if let Some(d) = d_hid {
        net.w_hi.add_assign(&d);
    }
    finish_episode(net, record, &setup.scaling);
    Ok(())
}

fn finish_episode(net: &mut LayeredNetwork, record: &EpisodeRecord, scaling: &ScalingParams) {
    if net.config.variant.is_multilayer() {
        let d_scale = synaptic_scaling(&net.w_hi, &hidden_rates_hz(record), scaling);
        net.w_hi.add_assign(&d_scale);
    }
    net.clamp_weights();
}

/// Simulates one episode while applying the bio rule at every step.
///
/// Hidden potentials are recomputed from the current weights at each step,
/// and weight changes made at step `k` act from step `k + 1`. Scaling and
/// clamping run at the end of the episode as usual; output weights are also
/// clamped after every step so that sign constraints hold throughout.
pub fn simulate_online_bio<R: Rng + ?Sized>(
    net: &mut LayeredNetwork,
    input: &[SpikeTrain],
    targets: &[SpikeTrain],
    setup: &LearningSetup,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let c = net.config.clone();
    if input.len() != c.n_i {
        return Err(Error::config(format!("expected {} input trains", c.n_i)));
    }
    if targets.len() != c.n_o {
        return Err(Error::config(format!("expected {} target trains", c.n_o)));
    }
    if !c.variant.is_multilayer() {
        return Err(Error::config("online bio schedule needs a hidden layer"));
    }
    let n_steps = c.n_steps();
    let (n_i, n_h, n_o) = (c.n_i, c.n_h, c.n_o);
    let psp = TraceStepper::psp(&c.kernel, c.dt);
    let reset = TraceStepper::reset(&c.kernel, c.dt);
    let input_counts: Vec<Vec<u32>> = input.iter().map(|t| t.step_counts(c.dt, n_steps)).collect();
    let target_counts: Vec<Vec<u32>> = targets
        .iter()
        .map(|t| t.step_counts(c.dt, n_steps))
        .collect();
    let table = input_psp_table(&input_counts, &psp, n_steps);
    let per_ms = (1.0 / c.dt).round() as usize;
    let delay_steps: Vec<usize> = net.delays_ms.iter().map(|&d| d as usize * per_ms).collect();
    let mut rec = crate::network::EpisodeRecord::empty(&c, n_h, n_steps, input, table, delay_steps);

    let gain = 1.0 / c.output_escape.delta_u;
    let eta_o = setup.rates.eta_o * gain;
    let eta_h = setup.rates.eta_h * gain / c.hidden_escape.delta_u;
    let learn_hidden = c.variant == Variant::Free;
    let out_bounds = c.output_bounds();
    let hid_bounds = c.hidden_bounds();

    let mut hidden_reset = vec![TraceState::zero(); n_h];
    let mut hidden_out = vec![TraceState::zero(); n_h];
    let mut output_reset = vec![TraceState::zero(); n_o];
    let mut doubles = vec![DoubleTraceState::default(); n_h * n_i];
    let mut error = FilteredError::new(n_o, setup.tau_d);
    let mut y_now = vec![0.0; n_h];
    let mut psp_now = vec![0.0; n_i];
    let mut hidden_spike = vec![false; n_h];
    let mut actual = vec![0u32; n_o];
    let mut target = vec![0u32; n_o];

    for k in 0..n_steps {
        for h in 0..n_h {
            for (i, p) in psp_now.iter_mut().enumerate() {
                *p = rec.delayed_input_psp(h, i, k);
            }
            let u = dot(net.w_hi.row(h), &psp_now) + hidden_reset[h].value();
            rec.hidden_potential.set(h, k, u);
            hidden_spike[h] = sample_spike(escape_rate(u, &c.hidden_escape), c.dt, rng);
            y_now[h] = hidden_out[h].value();
            rec.hidden_psp.set(h, k, y_now[h]);
        }
        for o in 0..n_o {
            let r = output_reset[o].value();
            let u = dot(net.w_oh.row(o), &y_now) + r;
            let rho = escape_rate(u, &c.output_escape);
            rec.output_reset.set(o, k, r);
            rec.output_potential.set(o, k, u);
            rec.output_rate.set(o, k, rho);
            actual[o] = sample_spike(rho, c.dt, rng) as u32;
            target[o] = target_counts[o][k];
        }
        error.step(&actual, &target, c.dt);

        // Weight changes use the traces sampled at this step.
        let err_sum: f64 = error.values.iter().sum();
        for o in 0..n_o {
            let e = eta_o * c.dt * error.values[o];
            if e != 0.0 {
                for (w, y) in net.w_oh.row_mut(o).iter_mut().zip(&y_now) {
                    *w = (*w + e * y).clamp(out_bounds.lo, out_bounds.hi);
                }
            }
        }
        if learn_hidden && err_sum != 0.0 {
            let scale = eta_h * c.dt * err_sum;
            for h in 0..n_h {
                let row = net.w_hi.row_mut(h);
                for (i, w) in row.iter_mut().enumerate() {
                    let v = doubles[h * n_i + i].value();
                    if v != 0.0 {
                        *w = (*w + scale * v).clamp(hid_bounds.lo, hid_bounds.hi);
                    }
                }
            }
        }

        let t = k as f64 * c.dt;
        for h in 0..n_h {
            let s = if hidden_spike[h] { 1.0 } else { 0.0 };
            reset.step(&mut hidden_reset[h], s);
            psp.step(&mut hidden_out[h], s);
            for i in 0..n_i {
                let d = rec.delay_step(h, i);
                let imp = if k >= d {
                    input_counts[i][k - d] as f64
                } else {
                    0.0
                };
                doubles[h * n_i + i].step(&psp, imp, hidden_spike[h]);
            }
            if hidden_spike[h] {
                rec.hidden_trains[h].push(t);
                rec.hidden_spike_steps[h].push(k);
            }
        }
        for o in 0..n_o {
            reset.step(&mut output_reset[o], actual[o] as f64);
            if actual[o] > 0 {
                rec.output_trains[o].push(t);
                rec.output_spike_steps[o].push(k);
            }
        }
    }
    finish_episode(net, &rec, &setup.scaling);
    Ok(rec)
}
