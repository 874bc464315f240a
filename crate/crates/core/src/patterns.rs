//! Input patterns, jitter, target spike trains and pattern-set files.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{vrd, VrdParams};
use crate::spikes::SpikeTrain;

/// Default input rate, Hz.
pub const INPUT_RATE_HZ: f64 = 6.0;
/// Relative refractory time constant of input neurons, ms.
pub const INPUT_REFRACTORY_MS: f64 = 10.0;
/// Earliest allowed target spike, ms.
pub const TARGET_MIN_TIME: f64 = 40.0;
/// Minimum interval between target spikes of one neuron, ms.
pub const TARGET_MIN_ISI: f64 = 10.0;
/// Upper bound on candidate draws before target generation gives up.
pub const MAX_REJECTION_ROUNDS: u64 = 1_000_000;
/// Candidate draws per class before the whole target set is restarted.
const ROUNDS_PER_CLASS: u64 = 10_000;

/// Refractory Poisson train on the grid `0, dt, ..., duration - dt`.
///
/// The per-step spike probability is `rate dt (1 - exp(-(t - t_last) / tau_r))`
/// with `rate` converted to spikes/ms; one uniform draw per step.
pub fn gen_poisson_input<R: Rng + ?Sized>(
    rate_hz: f64,
    duration: f64,
    tau_r: f64,
    dt: f64,
    rng: &mut R,
) -> SpikeTrain {
    let n_steps = (duration / dt).round() as usize;
    let base = rate_hz / 1000.0 * dt;
    let mut train = SpikeTrain::new();
    let mut last: Option<f64> = None;
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let recovery = last.map_or(1.0, |l| 1.0 - (-(t - l) / tau_r).exp());
        let x: f64 = rng.random();
        if x < base * recovery {
            train.push(t);
            last = Some(t);
        }
    }
    train
}

/// One input pattern: `n_i` refractory Poisson trains.
pub fn gen_input_pattern<R: Rng + ?Sized>(
    n_i: usize,
    rate_hz: f64,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Vec<SpikeTrain> {
    (0..n_i)
        .map(|_| gen_poisson_input(rate_hz, duration, INPUT_REFRACTORY_MS, dt, rng))
        .collect()
}

/// What to do with jittered spikes that leave `[0, duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Move them to the nearest valid grid time.
    #[default]
    Clip,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Gaussian standard deviation, ms.
    pub sigma: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

impl JitterSpec {
    pub fn new(sigma: f64) -> Self {
        JitterSpec {
            sigma,
            boundary: Boundary::Clip,
        }
    }
}

/// Returns a copy of `pattern` with every spike moved by `N(0, sigma^2)`,
/// rounded to the grid and re-sorted. With `sigma == 0` the copy is exact and
/// no random numbers are drawn.
pub fn jitter<R: Rng + ?Sized>(
    pattern: &[SpikeTrain],
    spec: &JitterSpec,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<SpikeTrain>> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::config(
            "jitter sigma must be finite and non-negative",
        ));
    }
    if spec.sigma == 0.0 {
        return Ok(pattern.to_vec());
    }
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::config(e.to_string()))?;
    let last_step = ((duration / dt).round() as i64 - 1).max(0);
    Ok(pattern
        .iter()
        .map(|train| {
            let mut times = Vec::with_capacity(train.len());
            for &t in train {
                let step = ((t + normal.sample(rng)) / dt).round() as i64;
                match spec.boundary {
                    Boundary::Clip => times.push(step.clamp(0, last_step) as f64 * dt),
                    Boundary::Drop if (0..=last_step).contains(&step) => {
                        times.push(step as f64 * dt)
                    }
                    Boundary::Drop => {}
                }
            }
            SpikeTrain::from_times(times)
        })
        .collect())
}

/// Grid-aligned train of `n_s` spikes in `[40, duration)` separated by at
/// least 10 ms, sampled uniformly by rejection. Returns the number of draws
/// used alongside the train.
fn draw_target_train<R: Rng + ?Sized>(
    n_s: usize,
    duration: f64,
    dt: f64,
    rng: &mut R,
    budget: u64,
) -> Option<(SpikeTrain, u64)> {
    let lo = (TARGET_MIN_TIME / dt).ceil() as usize;
    let hi = (duration / dt).round() as usize;
    if lo >= hi {
        return None;
    }
    let min_gap = (TARGET_MIN_ISI / dt).round() as usize;
    let mut steps = vec![0usize; n_s];
    for round in 1..=budget {
        for s in steps.iter_mut() {
            *s = rng.random_range(lo..hi);
        }
        steps.sort_unstable();
        if steps.windows(2).all(|w| w[1] - w[0] >= min_gap) {
            return Some((SpikeTrain::from_steps(&steps, dt), round));
        }
    }
    None
}

/// `c x n_o` target trains with `n_s` spikes each. Within every output neuron
/// the targets of any two classes are more than `n_s / 2` apart in van Rossum
/// distance.
///
/// Classes are placed one after another by rejection; a class that cannot be
/// placed within a fixed number of draws restarts the whole set.
pub fn gen_class_targets<R: Rng + ?Sized>(
    c: usize,
    n_o: usize,
    n_s: usize,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<Vec<SpikeTrain>>> {
    if c == 0 || n_o == 0 || n_s == 0 {
        return Err(Error::config("targets need c, n_o and n_s all >= 1"));
    }
    let params = VrdParams::default();
    let d_min = n_s as f64 / 2.0;
    let mut used: u64 = 0;
    'restart: loop {
        let mut targets: Vec<Vec<SpikeTrain>> = Vec::with_capacity(c);
        for _ in 0..c {
            let mut row = Vec::with_capacity(n_o);
            for o in 0..n_o {
                let mut class_rounds = 0;
                loop {
                    if used >= MAX_REJECTION_ROUNDS {
                        return Err(Error::Infeasible {
                            rounds: used,
                            reason: format!("c={c}, n_o={n_o}, n_s={n_s}, duration={duration} ms"),
                        });
                    }
                    if class_rounds >= ROUNDS_PER_CLASS {
                        continue 'restart;
                    }
                    let budget = (MAX_REJECTION_ROUNDS - used).min(ROUNDS_PER_CLASS - class_rounds);
                    let Some((train, n)) = draw_target_train(n_s, duration, dt, rng, budget) else {
                        used += budget;
                        class_rounds += budget;
                        continue;
                    };
                    used += n;
                    class_rounds += n;
                    if targets
                        .iter()
                        .all(|prev: &Vec<SpikeTrain>| vrd(&prev[o], &train, &params) > d_min)
                    {
                        row.push(train);
                        break;
                    }
                }
            }
            targets.push(row);
        }
        return Ok(targets);
    }
}

/// Input patterns with class labels and one target per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSet {
    /// `p x n_i` input trains.
    pub inputs: Vec<Vec<SpikeTrain>>,
    /// Class of every pattern.
    pub labels: Vec<usize>,
    /// `c x n_o` target trains.
    pub class_targets: Vec<Vec<SpikeTrain>>,
    /// Target spikes per output neuron.
    pub n_s: usize,
    pub duration: f64,
    pub dt: f64,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_targets.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_outputs(&self) -> usize {
        self.class_targets.first().map_or(0, Vec::len)
    }

    pub fn target_of(&self, pattern: usize) -> &[SpikeTrain] {
        &self.class_targets[self.labels[pattern]]
    }

    /// Checks shapes, labels and the target constraints. `strict` also
    /// enforces the minimum target distance between classes, which
    /// hand-written sets such as XOR need not satisfy.
    pub fn validate(&self, strict: bool) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.labels.len() != self.inputs.len() {
            return bad("one label per pattern required".into());
        }
        let n_i = self.n_inputs();
        if self.inputs.iter().any(|p| p.len() != n_i) {
            return bad("patterns differ in input count".into());
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.n_classes()) {
            return bad(format!("label {l} has no target"));
        }
        let n_o = self.n_outputs();
        if self.class_targets.iter().any(|t| t.len() != n_o) {
            return bad("targets differ in output count".into());
        }
        let in_range = |t: &f64| (0.0..self.duration).contains(t);
        if self
            .inputs
            .iter()
            .flatten()
            .any(|tr| !tr.times().iter().all(in_range))
        {
            return bad("input spike outside the episode".into());
        }
        for tr in self.class_targets.iter().flatten() {
            if !tr.times().iter().all(in_range) {
                return bad("target spike outside the episode".into());
            }
            if tr.times().windows(2).any(|w| w[1] < w[0]) {
                return bad("unsorted target train".into());
            }
        }
        if strict {
            let params = VrdParams::default();
            let d_min = self.n_s as f64 / 2.0;
            for tr in self.class_targets.iter().flatten() {
                let t = tr.times();
                if tr.len() != self.n_s
                    || t.first().is_some_and(|&x| x < TARGET_MIN_TIME)
                    || t.windows(2).any(|w| w[1] - w[0] < TARGET_MIN_ISI - 1e-9)
                {
                    return bad("target violates count, onset or interval constraints".into());
                }
            }
            for a in 0..self.n_classes() {
                for b in a + 1..self.n_classes() {
                    for o in 0..n_o {
                        let d = vrd(
                            &self.class_targets[a][o],
                            &self.class_targets[b][o],
                            &params,
                        );
                        if d <= d_min {
                            return bad(format!(
                                "classes {a} and {b} too close at output {o}: {d}"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: PatternSet = serde_json::from_str(text)?;
        set.validate(false)?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Shape of a random pattern set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub p: usize,
    pub c: usize,
    pub n_i: usize,
    pub n_o: usize,
    pub n_s: usize,
    pub rate_hz: f64,
    pub duration: f64,
    pub dt: f64,
}

/// `p` random input patterns, pattern `j` labelled `j mod c`, plus random
/// class targets. Inputs are drawn before targets.
pub fn gen_pattern_set<R: Rng + ?Sized>(spec: &PatternSpec, rng: &mut R) -> Result<PatternSet> {
    if spec.p == 0 || spec.c == 0 || spec.c > spec.p {
        return Err(Error::config("pattern sets need 1 <= c <= p"));
    }
    let inputs = (0..spec.p)
        .map(|_| gen_input_pattern(spec.n_i, spec.rate_hz, spec.duration, spec.dt, rng))
        .collect();
    let class_targets = gen_class_targets(spec.c, spec.n_o, spec.n_s, spec.duration, spec.dt, rng)?;
    Ok(PatternSet {
        inputs,
        labels: (0..spec.p).map(|j| j % spec.c).collect(),
        class_targets,
        n_s: spec.n_s,
        duration: spec.duration,
        dt: spec.dt,
    })
}

/// XOR target spike times: class 0 ("false") and class 1 ("true").
pub const XOR_TARGETS: [f64; 2] = [334.0, 167.0];

/// The four XOR patterns over two groups of `n_group` inputs. Each binary
/// value has one fixed encoding shared by both groups, so `{0,1}` and
/// `{1,0}` contain the same two trains sets in swapped positions.
///
/// Pattern order is `00, 01, 10, 11` with labels `0, 1, 1, 0`.
pub fn gen_xor_set<R: Rng + ?Sized>(
    n_group: usize,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> PatternSet {
    let zero = gen_input_pattern(n_group, INPUT_RATE_HZ, duration, dt, rng);
    let one = gen_input_pattern(n_group, INPUT_RATE_HZ, duration, dt, rng);
    let enc = |b: bool| if b { &one } else { &zero };
    let mut inputs = Vec::with_capacity(4);
    let mut labels = Vec::with_capacity(4);
    for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
        let mut pattern = enc(a).clone();
        pattern.extend(enc(b).iter().cloned());
        inputs.push(pattern);
        labels.push((a ^ b) as usize);
    }
    PatternSet {
        inputs,
        labels,
        class_targets: XOR_TARGETS
            .iter()
            .map(|&t| vec![SpikeTrain::from_times(vec![t])])
            .collect(),
        n_s: 1,
        duration,
        dt,
    }
}

pub const SYNTHETIC_CLASSES: usize = 10;
pub const SYNTHETIC_TRAIN_COPIES: usize = 15;
pub const SYNTHETIC_TEST_COPIES: usize = 25;

/// Generalization data: one reference pattern per class, jittered 15 times for
/// training and 25 times for testing. Pattern `j` of either set belongs to
/// class `j mod 10`. Both sets share the class targets.
pub fn gen_synthetic_dataset<R: Rng + ?Sized>(
    sigma: f64,
    n_i: usize,
    n_o: usize,
    n_s: usize,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(PatternSet, PatternSet)> {
    if !(1..=5).contains(&n_s) {
        return Err(Error::config("synthetic targets carry 1 to 5 spikes"));
    }
    let c = SYNTHETIC_CLASSES;
    let refs: Vec<Vec<SpikeTrain>> = (0..c)
        .map(|_| gen_input_pattern(n_i, INPUT_RATE_HZ, duration, dt, rng))
        .collect();
    let class_targets = gen_class_targets(c, n_o, n_s, duration, dt, rng)?;
    let spec = JitterSpec::new(sigma);
    let make = |copies: usize, rng: &mut R| -> Result<PatternSet> {
        let mut inputs = Vec::with_capacity(copies * c);
        for _ in 0..copies {
            for r in &refs {
                inputs.push(jitter(r, &spec, duration, dt, rng)?);
            }
        }
        Ok(PatternSet {
            labels: (0..inputs.len()).map(|j| j % c).collect(),
            inputs,
            class_targets: class_targets.clone(),
            n_s,
            duration,
            dt,
        })
    };
    let train = make(SYNTHETIC_TRAIN_COPIES, rng)?;
    let test = make(SYNTHETIC_TEST_COPIES, rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::vrd_spatio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_poisson_input(0.0, 500.0, 10.0, 1.0, &mut rng).is_empty());
    }

    #[test]
    fn poisson_mean_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| gen_poisson_input(6.0, 500.0, 10.0, 1.0, &mut rng).len())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((2.2..=3.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn back_to_back_spikes_are_suppressed() {
        // Very high rate so every step would spike without refractoriness.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pairs = 0;
        let mut singles = 0;
        for _ in 0..2000 {
            let tr = gen_poisson_input(1000.0, 500.0, 10.0, 1.0, &mut rng);
            singles += tr.len();
            pairs += tr.times().windows(2).filter(|w| w[1] - w[0] == 1.0).count();
        }
        let ratio = pairs as f64 / singles as f64;
        let expect = 1.0 - (-0.1f64).exp();
        assert!((ratio - expect).abs() < 0.01, "{ratio} vs {expect}");
    }

    #[test]
    fn jitter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern = gen_input_pattern(20, 6.0, 500.0, 1.0, &mut rng);
        let same = jitter(&pattern, &JitterSpec::new(0.0), 500.0, 1.0, &mut rng).unwrap();
        assert_eq!(same, pattern);

        // Mid-episode spikes so that clipping is negligible.
        let base = vec![SpikeTrain::from_times(vec![250.0]); 1000];
        let mut diffs = Vec::new();
        for _ in 0..100 {
            let j = jitter(&base, &JitterSpec::new(10.0), 500.0, 1.0, &mut rng).unwrap();
            diffs.extend(j.iter().map(|t| t.times()[0] - 250.0));
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 10.0).abs() < 0.2, "sd {sd}");

        let edge = vec![SpikeTrain::from_times(vec![1.0])];
        let spec = JitterSpec::new(20.0);
        let mut clipped = 0;
        for _ in 0..200 {
            let j = jitter(&edge, &spec, 500.0, 1.0, &mut rng).unwrap();
            assert_eq!(j[0].len(), 1);
            assert!(j[0].times()[0] >= 0.0);
            clipped += (j[0].times()[0] == 0.0) as usize;
        }
        assert!(clipped > 50);
        let drop = JitterSpec {
            sigma: 20.0,
            boundary: Boundary::Drop,
        };
        let dropped = (0..200)
            .filter(|_| jitter(&edge, &drop, 500.0, 1.0, &mut rng).unwrap()[0].is_empty())
            .count();
        assert!(dropped > 50);
        assert!(jitter(&edge, &JitterSpec::new(-1.0), 500.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn target_constraints_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(c, n_o, n_s) in &[(1, 1, 5), (2, 1, 1), (10, 1, 1), (10, 3, 3), (30, 1, 1)] {
            let t = gen_class_targets(c, n_o, n_s, 500.0, 1.0, &mut rng).unwrap();
            let set = PatternSet {
                inputs: vec![vec![]; c],
                labels: (0..c).collect(),
                class_targets: t,
                n_s,
                duration: 500.0,
                dt: 1.0,
            };
            set.validate(true).unwrap();
        }
    }

    #[test]
    fn two_single_spike_targets_are_far_enough_apart() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t = gen_class_targets(2, 1, 1, 500.0, 1.0, &mut rng).unwrap();
            let gap = (t[0][0].times()[0] - t[1][0].times()[0]).abs();
            assert!(gap > 10.0 * std::f64::consts::LN_2);
        }
    }

    #[test]
    fn impossible_targets_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let err = gen_class_targets(100, 1, 1, 500.0, 1.0, &mut rng);
        assert!(matches!(err, Err(Error::Infeasible { .. })));
        let err = gen_class_targets(1, 1, 50, 500.0, 1.0, &mut rng);
        assert!(matches!(err, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn xor_set_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = gen_xor_set(50, 500.0, 1.0, &mut rng);
        assert_eq!(set.len(), 4);
        assert_eq!(set.n_classes(), 2);
        assert_eq!(set.labels, vec![0, 1, 1, 0]);
        assert_eq!(set.target_of(1)[0].times(), &[167.0]);
        assert_eq!(set.target_of(0)[0].times(), &[334.0]);
        // 01 and 10 swap the same two encodings.
        assert_eq!(set.inputs[1][..50], set.inputs[2][50..]);
        assert_eq!(set.inputs[1][50..], set.inputs[2][..50]);
        assert_eq!(set.inputs[0][..50], set.inputs[1][..50]);
        set.validate(false).unwrap();
    }

    #[test]
    fn synthetic_dataset_sizes_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (train, test) = gen_synthetic_dataset(0.0, 100, 1, 2, 500.0, 1.0, &mut rng).unwrap();
        assert_eq!((train.len(), test.len()), (150, 250));
        for j in 0..150 {
            assert_eq!(train.inputs[j], train.inputs[j % 10]);
            assert_eq!(train.labels[j], j % 10);
        }
        assert_eq!(test.inputs[13], train.inputs[3]);
        train.validate(true).unwrap();

        let p = VrdParams::default();
        let mut spread = Vec::new();
        for sigma in [2.0, 10.0, 20.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (train, _) = gen_synthetic_dataset(sigma, 100, 1, 1, 500.0, 1.0, &mut rng).unwrap();
            let d: f64 = (0..10)
                .map(|c| vrd_spatio(&train.inputs[c], &train.inputs[c + 10], &p).unwrap())
                .sum();
            spread.push(d);
        }
        assert!(spread[0] < spread[1] && spread[1] < spread[2], "{spread:?}");
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let spec = PatternSpec {
            p: 6,
            c: 3,
            n_i: 20,
            n_o: 2,
            n_s: 2,
            rate_hz: 6.0,
            duration: 500.0,
            dt: 1.0,
        };
        let a = gen_pattern_set(&spec, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let b = gen_pattern_set(&spec, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels, vec![0, 1, 2, 0, 1, 2]);
        a.validate(true).unwrap();
        assert_eq!(PatternSet::from_json(&a.to_json().unwrap()).unwrap(), a);
        assert!(PatternSet::from_json("{}").is_err());
    }
}
