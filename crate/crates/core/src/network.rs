//! Layered feedforward network (input -> hidden -> output, or input -> output)
//! and episode simulation.
//!
//! Within a step the order is: hidden potentials and spikes, then output
//! potentials and spikes, then every trace advances. A spike at step `k`
//! therefore influences other neurons from step `k + 1` on, and hidden spikes
//! never reach the output layer within the step they occur in.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DoubleTraceState, KernelParams, TraceState, TraceStepper};
use crate::matrix::Matrix;
use crate::neuron::{dot, escape_rate, sample_spike, EscapeParams};
use crate::spikes::SpikeTrain;

/// Hidden weights are drawn from `[0, HIDDEN_INIT_MAX)`.
pub const HIDDEN_INIT_MAX: f64 = 3.0;
/// Single-output networks start with every output weight at `SINGLE_OUTPUT_INIT / n_h`.
pub const SINGLE_OUTPUT_INIT: f64 = 12.0;
/// Multi-output networks draw output weights from `[0, MULTI_OUTPUT_INIT / n_h)`.
pub const MULTI_OUTPUT_INIT: f64 = 30.0;
/// Single-layer networks draw weights from `[0, SINGLE_LAYER_INIT_MAX)`.
pub const SINGLE_LAYER_INIT_MAX: f64 = 1.7;
pub const WEIGHT_LIMIT: f64 = 100.0;
/// Lower bound for sign-constrained output weights.
pub const POSITIVE_WEIGHT_FLOOR: f64 = 0.01;
pub const MAX_DELAY_MS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Hidden weights learn by backpropagated errors.
    Free,
    /// Hidden weights change through synaptic scaling only.
    #[serde(alias = "fixed")]
    FixedHidden,
    /// No hidden layer; inputs project straight to the outputs.
    #[serde(alias = "single")]
    SingleLayer,
}

impl Variant {
    pub fn is_multilayer(self) -> bool {
        !matches!(self, Variant::SingleLayer)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Free => "free",
            Variant::FixedHidden => "fixed",
            Variant::SingleLayer => "single",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Variant::Free),
            "fixed" | "fixed-hidden" => Ok(Variant::FixedHidden),
            "single" | "single-layer" => Ok(Variant::SingleLayer),
            other => Err(Error::config(format!("unknown network variant '{other}'"))),
        }
    }
}

/// How output weights are initialized and bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputWeights {
    /// One output: equal positive weights kept in `[0.01, 100]`. Several
    /// outputs: uniform random weights free to change sign within `±100`.
    #[default]
    Auto,
    /// Equal positive weights kept in `[0.01, 100]` for any output count
    /// (required by the bio-plausible rule).
    PositiveEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub lo: f64,
    pub hi: f64,
}

impl WeightBounds {
    pub fn symmetric(limit: f64) -> Self {
        WeightBounds {
            lo: -limit,
            hi: limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_i: usize,
    pub n_h: usize,
    pub n_o: usize,
    pub variant: Variant,
    #[serde(default)]
    pub output_weights: OutputWeights,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default = "EscapeParams::hidden")]
    pub hidden_escape: EscapeParams,
    #[serde(default = "EscapeParams::output")]
    pub output_escape: EscapeParams,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
}

fn default_dt() -> f64 {
    crate::DEFAULT_DT
}

fn default_duration() -> f64 {
    crate::DEFAULT_DURATION
}

impl NetworkConfig {
    pub fn new(n_i: usize, n_h: usize, n_o: usize, variant: Variant) -> Self {
        NetworkConfig {
            n_i,
            n_h,
            n_o,
            variant,
            output_weights: OutputWeights::Auto,
            kernel: KernelParams::default(),
            hidden_escape: EscapeParams::hidden(),
            output_escape: EscapeParams::output(),
            dt: crate::DEFAULT_DT,
            duration: crate::DEFAULT_DURATION,
        }
    }

    pub fn with_output_weights(mut self, mode: OutputWeights) -> Self {
        self.output_weights = mode;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_i == 0 || self.n_o == 0 {
            return Err(Error::config(
                "networks need at least one input and one output",
            ));
        }
        if self.variant.is_multilayer() && self.n_h == 0 {
            return Err(Error::config("multilayer network needs n_h > 0"));
        }
        if !(self.dt > 0.0 && self.duration > 0.0) {
            return Err(Error::config("dt and duration must be positive"));
        }
        let ratio = 1.0 / self.dt;
        if self.variant.is_multilayer() && (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::config(
                "dt must divide 1 ms so that delays fall on the grid",
            ));
        }
        self.kernel.validate()?;
        self.hidden_escape.validate()?;
        self.output_escape.validate()
    }

    fn positive_outputs(&self) -> bool {
        match self.output_weights {
            OutputWeights::PositiveEqual => true,
            OutputWeights::Auto => self.variant.is_multilayer() && self.n_o == 1,
        }
    }

    pub fn output_bounds(&self) -> WeightBounds {
        if self.positive_outputs() {
            WeightBounds {
                lo: POSITIVE_WEIGHT_FLOOR,
                hi: WEIGHT_LIMIT,
            }
        } else {
            WeightBounds::symmetric(WEIGHT_LIMIT)
        }
    }

    pub fn hidden_bounds(&self) -> WeightBounds {
        WeightBounds::symmetric(WEIGHT_LIMIT)
    }
}

/// Network parameters. For the single-layer variant `w_oh` is `n_o x n_i`
/// and the hidden structures are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredNetwork {
    pub config: NetworkConfig,
    /// `n_h x n_i` input-to-hidden weights.
    pub w_hi: Matrix,
    /// `n_o x n_pre` weights onto the output layer.
    pub w_oh: Matrix,
    /// `n_h x n_i` conduction delays in whole ms, row-major.
    pub delays_ms: Vec<u32>,
}

impl LayeredNetwork {
    /// Draws initial weights and delays. Consumes the rng in the order: hidden
    /// weights, delays, output weights (row-major each).
    pub fn initialize<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (n_i, n_h, n_o) = (config.n_i, config.n_h, config.n_o);
        if !config.variant.is_multilayer() {
            let w_oh = Matrix::from_fn(n_o, n_i, |_, _| {
                rng.random_range(0.0..SINGLE_LAYER_INIT_MAX)
            });
            return Ok(LayeredNetwork {
                config,
                w_hi: Matrix::zeros(0, 0),
                w_oh,
                delays_ms: Vec::new(),
            });
        }
        let w_hi = Matrix::from_fn(n_h, n_i, |_, _| rng.random_range(0.0..HIDDEN_INIT_MAX));
        let delays_ms = (0..n_h * n_i)
            .map(|_| rng.random_range(1..=MAX_DELAY_MS))
            .collect();
        let equal = n_o == 1 || config.output_weights == OutputWeights::PositiveEqual;
        let w_oh = if equal {
            Matrix::filled(n_o, n_h, SINGLE_OUTPUT_INIT / n_h as f64)
        } else {
            let hi = MULTI_OUTPUT_INIT / n_h as f64;
            Matrix::from_fn(n_o, n_h, |_, _| rng.random_range(0.0..hi))
        };
        Ok(LayeredNetwork {
            config,
            w_hi,
            w_oh,
            delays_ms,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.config.n_i
    }

    pub fn n_hidden(&self) -> usize {
        if self.config.variant.is_multilayer() {
            self.config.n_h
        } else {
            0
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.config.n_o
    }

    /// Number of afferents of each output neuron.
    pub fn n_pre(&self) -> usize {
        self.w_oh.cols()
    }

    pub fn delay_ms(&self, h: usize, i: usize) -> u32 {
        self.delays_ms[h * self.config.n_i + i]
    }

    fn delay_steps(&self) -> Vec<usize> {
        let per_ms = (1.0 / self.config.dt).round() as usize;
        self.delays_ms
            .iter()
            .map(|&d| d as usize * per_ms)
            .collect()
    }

    /// Enforces the weight bounds of both layers.
    pub fn clamp_weights(&mut self) {
        let ob = self.config.output_bounds();
        self.w_oh.clamp(ob.lo, ob.hi);
        let hb = self.config.hidden_bounds();
        self.w_hi.clamp(hb.lo, hb.hi);
    }

    pub fn check_invariants(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let (rows_h, cols_h, n_pre) = if c.variant.is_multilayer() {
            (c.n_h, c.n_i, c.n_h)
        } else {
            (0, 0, c.n_i)
        };
        if self.w_hi.rows() != rows_h || self.w_hi.cols() != cols_h {
            return Err(Error::Format("hidden weight matrix has wrong shape".into()));
        }
        if self.w_oh.rows() != c.n_o || self.w_oh.cols() != n_pre {
            return Err(Error::Format("output weight matrix has wrong shape".into()));
        }
        if self.delays_ms.len() != rows_h * cols_h {
            return Err(Error::Format("delay table has wrong length".into()));
        }
        if self
            .delays_ms
            .iter()
            .any(|&d| !(1..=MAX_DELAY_MS).contains(&d))
        {
            return Err(Error::Format(format!(
                "delays must lie in 1..={MAX_DELAY_MS} ms"
            )));
        }
        let ob = c.output_bounds();
        if self.w_oh.iter().any(|w| !(ob.lo..=ob.hi).contains(w)) {
            return Err(Error::Format("output weight outside its bounds".into()));
        }
        if self
            .w_hi
            .iter()
            .any(|w| w.abs() > WEIGHT_LIMIT || !w.is_finite())
        {
            return Err(Error::Format("hidden weight outside its bounds".into()));
        }
        Ok(())
    }

    /// Pretty-printed JSON snapshot of config, weights and delays.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: LayeredNetwork = serde_json::from_str(text)?;
        net.check_invariants()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Runs one episode of `duration` ms on the given input trains.
    ///
    /// The rng is consumed once per hidden neuron and then once per output
    /// neuron at every step.
    pub fn simulate_episode<R: Rng + ?Sized>(
        &self,
        input: &[SpikeTrain],
        rng: &mut R,
    ) -> Result<EpisodeRecord> {
        let c = &self.config;
        if input.len() != c.n_i {
            return Err(Error::config(format!(
                "expected {} input trains, got {}",
                c.n_i,
                input.len()
            )));
        }
        let n_steps = c.n_steps();
        let psp = TraceStepper::psp(&c.kernel, c.dt);
        let reset = TraceStepper::reset(&c.kernel, c.dt);
        let input_counts: Vec<Vec<u32>> =
            input.iter().map(|t| t.step_counts(c.dt, n_steps)).collect();
        let input_psp = input_psp_table(&input_counts, &psp, n_steps);

        let n_pre = self.n_pre();
        let delay_steps = if c.variant.is_multilayer() {
            self.delay_steps()
        } else {
            Vec::new()
        };

        // Weighted arrivals onto the first driven layer, step-major.
        let (n_driven, weights) = if c.variant.is_multilayer() {
            (c.n_h, &self.w_hi)
        } else {
            (c.n_o, &self.w_oh)
        };
        let mut arrivals = vec![0.0; n_steps * n_driven];
        for (i, counts) in input_counts.iter().enumerate() {
            for (s, &n) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
                for j in 0..n_driven {
                    let d = if c.variant.is_multilayer() {
                        delay_steps[j * c.n_i + i]
                    } else {
                        0
                    };
                    if s + d < n_steps {
                        arrivals[(s + d) * n_driven + j] += n as f64 * weights.get(j, i);
                    }
                }
            }
        }

        let n_h = if c.variant.is_multilayer() { c.n_h } else { 0 };
        let mut rec = EpisodeRecord::empty(c, n_h, n_steps, input, input_psp, delay_steps);

        let mut hidden_drive = vec![TraceState::zero(); n_h];
        let mut hidden_reset = vec![TraceState::zero(); n_h];
        let mut hidden_out = vec![TraceState::zero(); n_h];
        let mut hidden_spike = vec![false; n_h];
        let mut y_now = vec![0.0; n_pre];
        let mut output_drive = vec![TraceState::zero(); c.n_o];
        let mut output_reset = vec![TraceState::zero(); c.n_o];
        let mut output_spike = vec![false; c.n_o];

        for k in 0..n_steps {
            for h in 0..n_h {
                let u = hidden_drive[h].value() + hidden_reset[h].value();
                let rho = escape_rate(u, &c.hidden_escape);
                rec.hidden_potential.set(h, k, u);
                hidden_spike[h] = sample_spike(rho, c.dt, rng);
                y_now[h] = hidden_out[h].value();
                rec.hidden_psp.set(h, k, y_now[h]);
            }
            for o in 0..c.n_o {
                let drive = if c.variant.is_multilayer() {
                    dot(self.w_oh.row(o), &y_now)
                } else {
                    output_drive[o].value()
                };
                let r = output_reset[o].value();
                let u = drive + r;
                let rho = escape_rate(u, &c.output_escape);
                rec.output_reset.set(o, k, r);
                rec.output_potential.set(o, k, u);
                rec.output_rate.set(o, k, rho);
                output_spike[o] = sample_spike(rho, c.dt, rng);
            }

            let t = k as f64 * c.dt;
            for h in 0..n_h {
                psp.step(&mut hidden_drive[h], arrivals[k * n_driven + h]);
                let s = if hidden_spike[h] { 1.0 } else { 0.0 };
                reset.step(&mut hidden_reset[h], s);
                psp.step(&mut hidden_out[h], s);
                if hidden_spike[h] {
                    rec.hidden_trains[h].push(t);
                    rec.hidden_spike_steps[h].push(k);
                }
            }
            for o in 0..c.n_o {
                if !c.variant.is_multilayer() {
                    psp.step(&mut output_drive[o], arrivals[k * n_driven + o]);
                }
                reset.step(
                    &mut output_reset[o],
                    if output_spike[o] { 1.0 } else { 0.0 },
                );
                if output_spike[o] {
                    rec.output_trains[o].push(t);
                    rec.output_spike_steps[o].push(k);
                }
            }
        }
        Ok(rec)
    }
}

/// `(X_i * eps)` sampled at every step, one row per input. The value at step
/// `k` includes input spikes at steps `< k` only.
pub fn input_psp_table(input_counts: &[Vec<u32>], psp: &TraceStepper, n_steps: usize) -> Matrix {
    let mut table = Matrix::zeros(input_counts.len(), n_steps);
    for (i, counts) in input_counts.iter().enumerate() {
        let mut s = TraceState::zero();
        let row = table.row_mut(i);
        for k in 0..n_steps {
            row[k] = s.value();
            psp.step(&mut s, counts[k] as f64);
        }
    }
    table
}

/// Everything observed during one episode: spike trains of all layers and the
/// per-step traces the learning rules consume.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub dt: f64,
    pub duration: f64,
    pub n_steps: usize,
    pub variant: Variant,
    pub kernel: KernelParams,
    pub hidden_escape: EscapeParams,
    pub output_escape: EscapeParams,
    pub input_trains: Vec<SpikeTrain>,
    pub hidden_trains: Vec<SpikeTrain>,
    pub output_trains: Vec<SpikeTrain>,
    pub hidden_spike_steps: Vec<Vec<usize>>,
    pub output_spike_steps: Vec<Vec<usize>>,
    /// `n_i x K`: undelayed input PSP traces.
    pub input_psp: Matrix,
    /// `n_h x K`: hidden PSP traces as seen by the output layer.
    pub hidden_psp: Matrix,
    /// `n_h x K`.
    pub hidden_potential: Matrix,
    /// `n_o x K`: reset-kernel contribution to the output potentials.
    pub output_reset: Matrix,
    /// `n_o x K`.
    pub output_potential: Matrix,
    /// `n_o x K`: output firing rates in spikes/ms.
    pub output_rate: Matrix,
    /// `n_h x n_i` conduction delays in grid steps (empty for single-layer).
    pub delay_steps: Vec<usize>,
}

impl EpisodeRecord {
    pub(crate) fn empty(
        c: &NetworkConfig,
        n_h: usize,
        n_steps: usize,
        input: &[SpikeTrain],
        input_psp: Matrix,
        delay_steps: Vec<usize>,
    ) -> Self {
        EpisodeRecord {
            dt: c.dt,
            duration: c.duration,
            n_steps,
            variant: c.variant,
            kernel: c.kernel,
            hidden_escape: c.hidden_escape,
            output_escape: c.output_escape,
            input_trains: input.to_vec(),
            hidden_trains: vec![SpikeTrain::new(); n_h],
            output_trains: vec![SpikeTrain::new(); c.n_o],
            hidden_spike_steps: vec![Vec::new(); n_h],
            output_spike_steps: vec![Vec::new(); c.n_o],
            input_psp,
            hidden_psp: Matrix::zeros(n_h, n_steps),
            hidden_potential: Matrix::zeros(n_h, n_steps),
            output_reset: Matrix::zeros(c.n_o, n_steps),
            output_potential: Matrix::zeros(c.n_o, n_steps),
            output_rate: Matrix::zeros(c.n_o, n_steps),
            delay_steps,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.input_trains.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_trains.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_trains.len()
    }

    /// Number of afferents of the output layer.
    pub fn n_presynaptic(&self) -> usize {
        if self.variant.is_multilayer() {
            self.n_hidden()
        } else {
            self.n_inputs()
        }
    }

    /// PSP trace of output-layer afferent `j` over the episode.
    pub fn presynaptic_psp(&self, j: usize) -> &[f64] {
        if self.variant.is_multilayer() {
            self.hidden_psp.row(j)
        } else {
            self.input_psp.row(j)
        }
    }

    pub fn delay_step(&self, h: usize, i: usize) -> usize {
        self.delay_steps[h * self.n_inputs() + i]
    }

    /// Delay-shifted input PSP `(X_i * eps)(t - d_hi)` at step `k`.
    #[inline]
    pub fn delayed_input_psp(&self, h: usize, i: usize, k: usize) -> f64 {
        let d = self.delay_step(h, i);
        if k < d {
            0.0
        } else {
            self.input_psp.get(i, k - d)
        }
    }

    /// Double-convolution trace `([Y_h (X_i * eps)] * eps)` at every step, with
    /// input spikes delayed by `d_hi`.
    pub fn double_trace(&self, h: usize, i: usize) -> Vec<f64> {
        let psp = TraceStepper::psp(&self.kernel, self.dt);
        let d = self.delay_step(h, i);
        let counts = self.input_trains[i].step_counts(self.dt, self.n_steps);
        let mut gate = vec![false; self.n_steps];
        for &k in &self.hidden_spike_steps[h] {
            gate[k] = true;
        }
        let mut state = DoubleTraceState::default();
        let mut out = Vec::with_capacity(self.n_steps);
        for k in 0..self.n_steps {
            out.push(state.value());
            let imp = if k >= d { counts[k - d] as f64 } else { 0.0 };
            state.step(&psp, imp, gate[k]);
        }
        out
    }

    /// Mean firing rate of hidden neuron `h` in Hz.
    pub fn hidden_rate_hz(&self, h: usize) -> f64 {
        self.hidden_trains[h].rate_hz(self.duration)
    }

    /// Copy with output potentials and rates recomputed for `w_oh`, every
    /// spike train (and so every trace) held fixed.
    pub fn with_output_weights(&self, w_oh: &Matrix) -> Result<EpisodeRecord> {
        let n_pre = self.n_presynaptic();
        if w_oh.rows() != self.n_outputs() || w_oh.cols() != n_pre {
            return Err(Error::config(format!(
                "output weights must be {} x {}, got {} x {}",
                self.n_outputs(),
                n_pre,
                w_oh.rows(),
                w_oh.cols()
            )));
        }
        let mut rec = self.clone();
        for o in 0..self.n_outputs() {
            for k in 0..self.n_steps {
                let drive: f64 = (0..n_pre)
                    .map(|j| w_oh.get(o, j) * self.presynaptic_psp(j)[k])
                    .sum();
                let u = drive + self.output_reset.get(o, k);
                rec.output_potential.set(o, k, u);
                rec.output_rate
                    .set(o, k, escape_rate(u, &self.output_escape));
            }
        }
        Ok(rec)
    }
}
