//! Experiment presets, the episode loop, aggregation over runs and file
//! output.
//!
//! A run owns one `ChaCha8Rng` seeded with `base_seed + run` and consumes it
//! in this order: pattern generation, network initialization, then for every
//! episode the pattern choice, jitter, hidden sampling and output sampling.
//! Generated patterns are written next to the learning curves so that a run
//! can be replayed without relying on the random stream.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{
    apply_episode_learning, simulate_online_bio, BioSchedule, LearningRates, LearningSetup, Rule,
};
use crate::metrics::{
    classify, time_shift, vrd_spatio, PerformanceTracker, TrackerSample, VrdParams,
};
use crate::network::{LayeredNetwork, NetworkConfig, OutputWeights, Variant};
use crate::patterns::{
    gen_input_pattern, gen_pattern_set, gen_synthetic_dataset, gen_xor_set, jitter, JitterSpec,
    PatternSet, PatternSpec, INPUT_RATE_HZ,
};
use crate::spikes::SpikeTrain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    SingleMap,
    NoiseMap,
    Xor,
    StructureCompare,
    Capacity,
    Generalization,
    SpatioTemporal,
    RatioSweep,
    BioCompare,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::SingleMap,
        ExperimentId::NoiseMap,
        ExperimentId::Xor,
        ExperimentId::StructureCompare,
        ExperimentId::Capacity,
        ExperimentId::Generalization,
        ExperimentId::SpatioTemporal,
        ExperimentId::RatioSweep,
        ExperimentId::BioCompare,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::SingleMap => "single-map",
            ExperimentId::NoiseMap => "noise-map",
            ExperimentId::Xor => "xor",
            ExperimentId::StructureCompare => "structure-compare",
            ExperimentId::Capacity => "capacity",
            ExperimentId::Generalization => "generalization",
            ExperimentId::SpatioTemporal => "spatio-temporal",
            ExperimentId::RatioSweep => "ratio-sweep",
            ExperimentId::BioCompare => "bio-compare",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ExperimentId::ALL.iter().map(|i| i.as_str()).collect();
                Error::config(format!(
                    "unknown experiment '{s}' (known: {})",
                    known.join(", ")
                ))
            })
    }
}

/// Values to sweep; every non-empty axis replaces the scalar field of the
/// same name and the conditions are the Cartesian product of all axes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub p: Vec<usize>,
    pub n_h: Vec<usize>,
    pub n_s: Vec<usize>,
    pub sigma: Vec<f64>,
    pub variant: Vec<Variant>,
    pub rule: Vec<Rule>,
    pub n_o: Vec<usize>,
    /// Hidden-to-output ratios; sets `n_h = round(ratio * n_o)`.
    pub ratio: Vec<f64>,
}

impl Sweep {
    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
            && self.n_h.is_empty()
            && self.n_s.is_empty()
            && self.sigma.is_empty()
            && self.variant.is_empty()
            && self.rule.is_empty()
            && self.n_o.is_empty()
            && self.ratio.is_empty()
    }
}

/// Everything that defines an experiment. Stored as TOML.
///
/// `sigma` is the per-episode input jitter, except for `generalization` where
/// it is the noise used to build the dataset (episodes are then noise-free).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub n_i: usize,
    pub n_h: usize,
    pub n_o: usize,
    /// Number of input patterns.
    pub p: usize,
    /// Number of classes; defaults to `p` (one target per pattern).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<usize>,
    /// Target spikes per output neuron.
    pub n_s: usize,
    pub sigma: f64,
    /// Defaults to `1000 p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    pub runs: usize,
    pub base_seed: u64,
    pub rule: Rule,
    pub variant: Variant,
    #[serde(default)]
    pub bio_schedule: BioSchedule,
    /// Input rate, Hz.
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Fixed target times per output neuron (single-pattern tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<Vec<f64>>>,
    /// Shrinks `p` and the episode count; see [`ExperimentConfig::conditions`].
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Worker threads; 0 lets the thread pool decide.
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Sweep::is_empty")]
    pub sweep: Sweep,
}

fn default_rate() -> f64 {
    INPUT_RATE_HZ
}

fn default_scale() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// Defaults for each experiment.
    pub fn preset(id: ExperimentId) -> Self {
        let base = ExperimentConfig {
            experiment: id,
            n_i: 100,
            n_h: 10,
            n_o: 1,
            p: 1,
            c: None,
            n_s: 1,
            sigma: 0.0,
            episodes: None,
            runs: 20,
            base_seed: 1,
            rule: Rule::Backprop,
            variant: Variant::Free,
            bio_schedule: BioSchedule::EpisodeEnd,
            rate_hz: INPUT_RATE_HZ,
            targets: None,
            scale: 1.0,
            workers: 0,
            sweep: Sweep::default(),
        };
        match id {
            ExperimentId::SingleMap => ExperimentConfig {
                n_s: 5,
                targets: Some(vec![vec![83.0, 166.0, 249.0, 332.0, 415.0]]),
                episodes: Some(1000),
                ..base
            },
            ExperimentId::NoiseMap => ExperimentConfig {
                p: 10,
                episodes: Some(10_000),
                runs: 10,
                sweep: Sweep {
                    sigma: vec![0.0, 5.0, 10.0, 15.0, 20.0],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::Xor => ExperimentConfig {
                p: 4,
                c: Some(2),
                episodes: Some(1000),
                sweep: Sweep {
                    variant: vec![Variant::Free, Variant::SingleLayer],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::StructureCompare => ExperimentConfig {
                p: 40,
                sweep: Sweep {
                    p: vec![2, 5, 10, 15, 20, 25, 30, 35, 40],
                    variant: vec![Variant::Free, Variant::SingleLayer, Variant::FixedHidden],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::Capacity => ExperimentConfig {
                p: 150,
                c: Some(10),
                sweep: Sweep {
                    p: vec![10, 50, 100, 150, 200],
                    n_h: vec![10, 20, 30],
                    n_s: vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::Generalization => ExperimentConfig {
                n_h: 20,
                p: 150,
                c: Some(10),
                n_s: 5,
                sigma: 10.0,
                episodes: Some(75_000),
                sweep: Sweep {
                    sigma: vec![2.0, 5.0, 10.0, 15.0, 20.0],
                    n_s: vec![1, 5],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::SpatioTemporal => ExperimentConfig {
                n_h: 20,
                n_o: 3,
                targets: Some(vec![vec![125.0], vec![250.0], vec![375.0]]),
                episodes: Some(1000),
                runs: 40,
                ..base
            },
            ExperimentId::RatioSweep => ExperimentConfig {
                p: 50,
                c: Some(10),
                n_o: 10,
                runs: 10,
                sweep: Sweep {
                    n_o: vec![10, 20, 30],
                    ratio: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                    ..Sweep::default()
                },
                ..base
            },
            ExperimentId::BioCompare => ExperimentConfig {
                p: 40,
                c: Some(10),
                sweep: Sweep {
                    p: vec![10, 20, 40, 80, 120, 160, 200],
                    rule: vec![Rule::Backprop, Rule::Bio],
                    ..Sweep::default()
                },
                ..base
            },
        }
    }

    /// Reads a TOML file on top of the preset named by its `experiment` key
    /// (or `fallback` when the key is absent). Sweep tables merge key by key.
    pub fn from_toml_with_preset(text: &str, fallback: Option<ExperimentId>) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let id = match file.get("experiment") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::config("'experiment' must be a string"))?
                .parse()?,
            None => fallback.ok_or_else(|| Error::config("config file lacks 'experiment'"))?,
        };
        if let Some(f) = fallback {
            if f != id {
                return Err(Error::config(format!(
                    "config file is for '{id}' but '{f}' was requested"
                )));
            }
        }
        let mut merged =
            toml::Table::try_from(Self::preset(id)).map_err(|e| Error::config(e.to_string()))?;
        for (k, v) in file {
            match (k.as_str(), merged.get_mut("sweep"), v) {
                ("sweep", Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
                    dst.extend(src)
                }
                (_, _, v) => {
                    merged.insert(k, v);
                }
            }
        }
        let cfg: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Option<ExperimentId>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_preset(&text, fallback)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs must be >= 1"));
        }
        if self.episodes == Some(0) {
            return Err(Error::config("episodes must be >= 1"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("scale must be positive"));
        }
        if self.p == 0 || self.n_i == 0 || self.n_o == 0 || self.n_s == 0 {
            return Err(Error::config("p, n_i, n_o and n_s must be >= 1"));
        }
        if !(self.sigma >= 0.0) || self.sweep.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("sigma must be non-negative"));
        }
        if let Some(t) = &self.targets {
            if t.len() != self.n_o && self.sweep.n_o.is_empty() {
                return Err(Error::config("one target train per output neuron required"));
            }
        }
        if self.experiment == ExperimentId::Xor && !self.n_i.is_multiple_of(2) {
            return Err(Error::config("XOR needs an even number of inputs"));
        }
        Ok(())
    }

    /// Applies a scalar override and clears the matching sweep axis.
    pub fn set_variant(&mut self, v: Variant) {
        self.variant = v;
        self.sweep.variant.clear();
    }

    pub fn set_rule(&mut self, r: Rule) {
        self.rule = r;
        self.sweep.rule.clear();
    }

    /// Episode count after defaults and scaling.
    pub fn resolved_episodes(&self) -> usize {
        let base = self.episodes.unwrap_or(1000 * self.p) as f64;
        ((base * self.scale).round() as usize).max(1)
    }

    pub fn resolved_classes(&self) -> usize {
        self.c.unwrap_or(self.p).min(self.p).max(1)
    }

    /// Expands the sweep into concrete conditions. Each condition has an empty
    /// sweep, `scale = 1`, `p` and `episodes` already scaled and `c` resolved.
    pub fn conditions(&self) -> Result<Vec<Condition>> {
        self.validate()?;
        fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
            if values.is_empty() {
                vec![None]
            } else {
                values.iter().cloned().map(Some).collect()
            }
        }
        let s = &self.sweep;
        let mut out = Vec::new();
        for p in axis(&s.p) {
            for n_h in axis(&s.n_h) {
                for n_s in axis(&s.n_s) {
                    for sigma in axis(&s.sigma) {
                        for variant in axis(&s.variant) {
                            for rule in axis(&s.rule) {
                                for n_o in axis(&s.n_o) {
                                    for ratio in axis(&s.ratio) {
                                        let mut c = self.clone();
                                        c.sweep = Sweep::default();
                                        let mut label = Vec::new();
                                        if let Some(v) = p {
                                            c.p = v;
                                            label.push(format!("p-{v}"));
                                        }
                                        if let Some(v) = n_h {
                                            c.n_h = v;
                                            label.push(format!("nh-{v}"));
                                        }
                                        if let Some(v) = n_s {
                                            c.n_s = v;
                                            label.push(format!("ns-{v}"));
                                        }
                                        if let Some(v) = sigma {
                                            c.sigma = v;
                                            label.push(format!("sigma-{v}"));
                                        }
                                        if let Some(v) = variant {
                                            c.variant = v;
                                            label.push(format!("variant-{}", v.label()));
                                        }
                                        if let Some(v) = rule {
                                            c.rule = v;
                                            label.push(format!("rule-{}", v.label()));
                                        }
                                        if let Some(v) = n_o {
                                            c.n_o = v;
                                            label.push(format!("no-{v}"));
                                        }
                                        if let Some(v) = ratio {
                                            c.n_h = ((v * c.n_o as f64).round() as usize).max(1);
                                            label.push(format!("ratio-{v}"));
                                        }
                                        let episodes = c.resolved_episodes();
                                        c.p = ((c.p as f64 * c.scale).round() as usize).max(1);
                                        c.c = Some(c.resolved_classes());
                                        c.episodes = Some(episodes);
                                        c.scale = 1.0;
                                        let label = if label.is_empty() {
                                            "base".to_string()
                                        } else {
                                            label.join("_")
                                        };
                                        out.push(Condition { label, config: c });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Outcome of one independent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub episodes: usize,
    pub episodes_completed: usize,
    pub curve: Vec<TrackerSample>,
    pub final_p: f64,
    pub final_d: f64,
    pub final_shift: Option<f64>,
    pub convergence_episode: usize,
    /// Accuracy (percent) on the training patterns without noise or learning.
    pub train_accuracy: Option<f64>,
    /// Accuracy (percent) on held-out patterns.
    pub test_accuracy: Option<f64>,
    pub network: LayeredNetwork,
    pub patterns: PatternSet,
    pub wall_clock_s: f64,
}

impl RunResult {
    pub fn interrupted(&self) -> bool {
        self.episodes_completed < self.episodes
    }
}

/// Patterns for one run, plus held-out test patterns when the experiment has
/// them.
fn make_patterns<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> Result<(PatternSet, Option<PatternSet>)> {
    let (duration, dt) = (crate::DEFAULT_DURATION, crate::DEFAULT_DT);
    match cfg.experiment {
        ExperimentId::Xor => Ok((gen_xor_set(cfg.n_i / 2, duration, dt, rng), None)),
        ExperimentId::Generalization => {
            let (train, test) =
                gen_synthetic_dataset(cfg.sigma, cfg.n_i, cfg.n_o, cfg.n_s, duration, dt, rng)?;
            Ok((train, Some(test)))
        }
        _ => {
            if let Some(times) = &cfg.targets {
                if times.len() != cfg.n_o {
                    return Err(Error::config("one target train per output neuron required"));
                }
                let inputs = (0..cfg.p)
                    .map(|_| gen_input_pattern(cfg.n_i, cfg.rate_hz, duration, dt, rng))
                    .collect();
                let target: Vec<SpikeTrain> = times
                    .iter()
                    .map(|t| SpikeTrain::from_times(t.clone()))
                    .collect();
                let n_s = target.iter().map(SpikeTrain::len).max().unwrap_or(0);
                let set = PatternSet {
                    inputs,
                    labels: vec![0; cfg.p],
                    class_targets: vec![target],
                    n_s,
                    duration,
                    dt,
                };
                set.validate(false)?;
                return Ok((set, None));
            }
            let spec = PatternSpec {
                p: cfg.p,
                c: cfg.resolved_classes(),
                n_i: cfg.n_i,
                n_o: cfg.n_o,
                n_s: cfg.n_s,
                rate_hz: cfg.rate_hz,
                duration,
                dt,
            };
            Ok((gen_pattern_set(&spec, rng)?, None))
        }
    }
}

/// Network configuration implied by an experiment config.
pub fn network_config(cfg: &ExperimentConfig) -> NetworkConfig {
    let n_h = if cfg.variant.is_multilayer() {
        cfg.n_h
    } else {
        0
    };
    let mut net = NetworkConfig::new(cfg.n_i, n_h, cfg.n_o, cfg.variant);
    if cfg.rule == Rule::Bio && cfg.variant.is_multilayer() {
        net = net.with_output_weights(OutputWeights::PositiveEqual);
    }
    net
}

pub fn learning_setup(cfg: &ExperimentConfig, n_s: usize) -> LearningSetup {
    let n_h = if cfg.variant.is_multilayer() {
        cfg.n_h
    } else {
        0
    };
    let mut setup = LearningSetup::new(cfg.rule, LearningRates::new(cfg.n_i, n_h, cfg.n_o, n_s));
    setup.bio_schedule = cfg.bio_schedule;
    setup
}

/// Classification accuracy in percent over every pattern of `set`, without
/// jitter and without learning.
pub fn evaluate_accuracy<R: Rng + ?Sized>(
    net: &LayeredNetwork,
    set: &PatternSet,
    rng: &mut R,
) -> Result<f64> {
    let params = VrdParams::default();
    let mut correct = 0usize;
    for (j, input) in set.inputs.iter().enumerate() {
        let rec = net.simulate_episode(input, rng)?;
        if classify(&rec.output_trains, &set.class_targets, &params)?.is_correct(set.labels[j]) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / set.len().max(1) as f64)
}

/// Trains one network on one condition. Stops early, keeping what was
/// learned so far, once `stop` is raised.
pub fn run_single(cfg: &ExperimentConfig, run: usize, stop: &AtomicBool) -> Result<RunResult> {
    let started = Instant::now();
    let seed = cfg.base_seed.wrapping_add(run as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let episodes = cfg.resolved_episodes();

    let (patterns, test) = make_patterns(cfg, &mut rng)?;
    let mut net = LayeredNetwork::initialize(network_config(cfg), &mut rng)?;
    let setup = learning_setup(cfg, patterns.n_s.max(1));
    let jitter_spec = match cfg.experiment {
        ExperimentId::Generalization => JitterSpec::new(0.0),
        _ => JitterSpec::new(cfg.sigma),
    };
    let params = VrdParams::default();
    let mut tracker = PerformanceTracker::new(patterns.len());
    let online = cfg.rule == Rule::Bio
        && setup.bio_schedule == BioSchedule::Online
        && cfg.variant.is_multilayer();

    let mut completed = 0;
    for _ in 0..episodes {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let idx = rng.random_range(0..patterns.len());
        let input = jitter(
            &patterns.inputs[idx],
            &jitter_spec,
            patterns.duration,
            patterns.dt,
            &mut rng,
        )?;
        let target = patterns.target_of(idx);
        let record = if online {
            simulate_online_bio(&mut net, &input, target, &setup, &mut rng)?
        } else {
            net.simulate_episode(&input, &mut rng)?
        };
        let class = classify(&record.output_trains, &patterns.class_targets, &params)?;
        let correct = class.is_correct(patterns.labels[idx]);
        let distance = vrd_spatio(&record.output_trains, target, &params)?;
        let shift = if correct {
            time_shift(&record.output_trains, target)
        } else {
            None
        };
        tracker.update(correct, distance, shift);
        if !online {
            apply_episode_learning(&mut net, &record, target, &setup)?;
        }
        completed += 1;
    }

    let (train_accuracy, test_accuracy) = match &test {
        Some(test) if completed == episodes => (
            Some(evaluate_accuracy(&net, &patterns, &mut rng)?),
            Some(evaluate_accuracy(&net, test, &mut rng)?),
        ),
        _ => (None, None),
    };
    let p_hist = tracker.p_history();
    Ok(RunResult {
        run,
        seed,
        episodes,
        episodes_completed: completed,
        final_p: tracker.p_tilde,
        final_d: tracker.d_tilde.unwrap_or(0.0),
        final_shift: tracker.dt_shift,
        convergence_episode: crate::metrics::convergence_episode(&p_hist),
        curve: tracker.history,
        train_accuracy,
        test_accuracy,
        network: net,
        patterns,
        wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

/// Aggregates over the runs of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub performance: Stat,
    pub distance: Stat,
    pub time_shift: Option<Stat>,
    pub convergence: Stat,
    pub train_accuracy: Option<Stat>,
    pub test_accuracy: Option<Stat>,
    pub wall_clock_s: f64,
}

impl ConditionSummary {
    pub fn from_runs(runs: &[RunResult]) -> Option<Self> {
        Some(ConditionSummary {
            performance: Stat::of(runs.iter().map(|r| r.final_p))?,
            distance: Stat::of(runs.iter().map(|r| r.final_d))?,
            time_shift: Stat::of(runs.iter().filter_map(|r| r.final_shift)),
            convergence: Stat::of(runs.iter().map(|r| r.convergence_episode as f64))?,
            train_accuracy: Stat::of(runs.iter().filter_map(|r| r.train_accuracy)),
            test_accuracy: Stat::of(runs.iter().filter_map(|r| r.test_accuracy)),
            wall_clock_s: runs.iter().map(|r| r.wall_clock_s).sum(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub runs: Vec<RunResult>,
    pub summary: Option<ConditionSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub conditions: Vec<ConditionResult>,
    pub interrupted: bool,
}

/// Runs every condition and run of `cfg`, in parallel across runs.
pub fn run_experiment(cfg: &ExperimentConfig, stop: &AtomicBool) -> Result<ExperimentResult> {
    let conditions = cfg.conditions()?;
    let jobs: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..cfg.runs).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    let results: Vec<Result<RunResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_single(&conditions[c].config, r, stop))
            .collect()
    });
    let mut per_condition: Vec<Vec<RunResult>> = vec![Vec::new(); conditions.len()];
    for (&(c, _), res) in jobs.iter().zip(results) {
        per_condition[c].push(res?);
    }
    let mut interrupted = stop.load(Ordering::Relaxed);
    let conditions = conditions
        .into_iter()
        .zip(per_condition)
        .map(|(condition, runs)| {
            interrupted |= runs.iter().any(RunResult::interrupted);
            ConditionResult {
                summary: ConditionSummary::from_runs(&runs),
                condition,
                runs,
            }
        })
        .collect();
    Ok(ExperimentResult {
        config: cfg.clone(),
        conditions,
        interrupted,
    })
}

#[derive(Serialize)]
struct CurveRow {
    episode: usize,
    p_tilde: f64,
    d_tilde: f64,
    dt_shift: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    condition: &'a str,
    experiment: &'a str,
    n_i: usize,
    n_h: usize,
    n_o: usize,
    p: usize,
    c: usize,
    n_s: usize,
    sigma: f64,
    variant: &'a str,
    rule: &'a str,
    episodes: usize,
    runs: usize,
    base_seed: u64,
    performance_mean: Option<f64>,
    performance_std: Option<f64>,
    distance_mean: Option<f64>,
    distance_std: Option<f64>,
    time_shift_mean: Option<f64>,
    time_shift_std: Option<f64>,
    convergence_mean: f64,
    convergence_std: f64,
    train_accuracy_mean: Option<f64>,
    train_accuracy_std: Option<f64>,
    test_accuracy_mean: Option<f64>,
    test_accuracy_std: Option<f64>,
    completed_runs: usize,
    wall_clock_s: f64,
}

#[derive(Serialize)]
struct ManifestRun {
    run: usize,
    seed: u64,
    episodes: usize,
    episodes_completed: usize,
    curve: String,
    network: String,
    patterns: String,
}

#[derive(Serialize)]
struct ManifestCondition<'a> {
    label: &'a str,
    directory: String,
    config: &'a ExperimentConfig,
    runs: Vec<ManifestRun>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'static str,
    base_seed: u64,
    seeds: Vec<u64>,
    interrupted: bool,
    config: &'a ExperimentConfig,
    config_toml: String,
    conditions: Vec<ManifestCondition<'a>>,
    summary: &'static str,
}

/// Files written by [`emit`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub curves: Vec<PathBuf>,
    pub summary: PathBuf,
    pub manifest: PathBuf,
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_curve(path: &Path, run: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for (k, s) in run.curve.iter().enumerate() {
        w.serialize(CurveRow {
            episode: k + 1,
            p_tilde: s.p_tilde,
            d_tilde: s.d_tilde,
            dt_shift: s.dt_shift,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Writes learning curves, network and pattern snapshots per run, one
/// `summary.csv` and `manifest.json` under `out_dir`.
pub fn emit(result: &ExperimentResult, out_dir: &Path) -> Result<EmittedFiles> {
    ensure_dir(out_dir)?;
    let mut curves = Vec::new();
    let mut manifest_conditions = Vec::new();
    let summary_path = out_dir.join("summary.csv");
    let mut summary =
        csv::Writer::from_path(&summary_path).map_err(|e| csv_io(&summary_path, e))?;

    for cond in &result.conditions {
        let dir = out_dir.join(&cond.condition.label);
        ensure_dir(&dir)?;
        let mut runs = Vec::new();
        for run in &cond.runs {
            let curve = dir.join(format!("curve_run{}.csv", run.run));
            write_curve(&curve, run)?;
            let network = dir.join(format!("network_run{}.json", run.run));
            run.network.save(&network)?;
            let patterns = dir.join(format!("patterns_run{}.json", run.run));
            run.patterns.save(&patterns)?;
            let rel = |p: &Path| p.strip_prefix(out_dir).unwrap_or(p).display().to_string();
            runs.push(ManifestRun {
                run: run.run,
                seed: run.seed,
                episodes: run.episodes,
                episodes_completed: run.episodes_completed,
                curve: rel(&curve),
                network: rel(&network),
                patterns: rel(&patterns),
            });
            curves.push(curve);
        }
        let c = &cond.condition.config;
        let s = cond.summary.as_ref();
        let pick = |f: fn(&ConditionSummary) -> Option<Stat>| s.and_then(f);
        summary.serialize(SummaryRow {
            condition: &cond.condition.label,
            experiment: c.experiment.as_str(),
            n_i: c.n_i,
            n_h: if c.variant.is_multilayer() { c.n_h } else { 0 },
            n_o: c.n_o,
            p: c.p,
            c: c.resolved_classes(),
            n_s: c.n_s,
            sigma: c.sigma,
            variant: c.variant.label(),
            rule: c.rule.label(),
            episodes: c.resolved_episodes(),
            runs: c.runs,
            base_seed: c.base_seed,
            performance_mean: pick(|s| Some(s.performance)).map(|x| x.mean),
            performance_std: pick(|s| Some(s.performance)).map(|x| x.std),
            distance_mean: pick(|s| Some(s.distance)).map(|x| x.mean),
            distance_std: pick(|s| Some(s.distance)).map(|x| x.std),
            time_shift_mean: pick(|s| s.time_shift).map(|x| x.mean),
            time_shift_std: pick(|s| s.time_shift).map(|x| x.std),
            // A condition without runs never converged.
            convergence_mean: pick(|s| Some(s.convergence)).map_or(0.0, |x| x.mean),
            convergence_std: pick(|s| Some(s.convergence)).map_or(0.0, |x| x.std),
            train_accuracy_mean: pick(|s| s.train_accuracy).map(|x| x.mean),
            train_accuracy_std: pick(|s| s.train_accuracy).map(|x| x.std),
            test_accuracy_mean: pick(|s| s.test_accuracy).map(|x| x.mean),
            test_accuracy_std: pick(|s| s.test_accuracy).map(|x| x.std),
            completed_runs: cond.runs.iter().filter(|r| !r.interrupted()).count(),
            wall_clock_s: s.map_or(0.0, |s| s.wall_clock_s),
        })?;
        manifest_conditions.push(ManifestCondition {
            label: &cond.condition.label,
            directory: cond.condition.label.clone(),
            config: &cond.condition.config,
            runs,
        });
    }
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;

    let seeds = (0..result.config.runs)
        .map(|r| result.config.base_seed.wrapping_add(r as u64))
        .collect();
    let manifest = Manifest {
        experiment: result.config.experiment.as_str(),
        version: env!("CARGO_PKG_VERSION"),
        base_seed: result.config.base_seed,
        seeds,
        interrupted: result.interrupted,
        config: &result.config,
        config_toml: result.config.to_toml()?,
        conditions: manifest_conditions,
        summary: "summary.csv",
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(EmittedFiles {
        curves,
        summary: summary_path,
        manifest: manifest_path,
    })
}

/// Scalar overrides from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub episodes: Option<usize>,
    pub scale: Option<f64>,
    pub rule: Option<Rule>,
    pub variant: Option<Variant>,
}

/// Preset or config file for `id`, with overrides applied.
pub fn resolve_config(id: ExperimentId, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path, Some(id))?,
        None => ExperimentConfig::preset(id),
    };
    if let Some(s) = o.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = o.runs {
        cfg.runs = r;
    }
    if let Some(e) = o.episodes {
        cfg.episodes = Some(e);
    }
    if let Some(s) = o.scale {
        cfg.scale = s;
    }
    if let Some(r) = o.rule {
        cfg.set_rule(r);
    }
    if let Some(v) = o.variant {
        cfg.set_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Per-condition one-line digests for terminal output.
pub fn describe(result: &ExperimentResult) -> Vec<String> {
    let mut lines = Vec::new();
    for c in &result.conditions {
        let Some(s) = &c.summary else {
            lines.push(format!("{}: no runs", c.condition.label));
            continue;
        };
        let mut fields = BTreeMap::new();
        fields.insert(
            "P",
            format!("{:.1} ± {:.1} %", s.performance.mean, s.performance.std),
        );
        fields.insert(
            "D",
            format!("{:.3} ± {:.3}", s.distance.mean, s.distance.std),
        );
        if let Some(t) = s.time_shift {
            fields.insert("dt", format!("{:.2} ± {:.2} ms", t.mean, t.std));
        }
        fields.insert("conv", format!("{:.0}", s.convergence.mean));
        if let Some(t) = s.test_accuracy {
            fields.insert("test", format!("{:.1} ± {:.1} %", t.mean, t.std));
        }
        let body: Vec<String> = fields
            .into_iter()
            .map(|(k, v)| format!("{k} {v}"))
            .collect();
        lines.push(format!("{}: {}", c.condition.label, body.join(", ")));
    }
    lines
}
