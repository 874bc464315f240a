//! Spike-train distances, the class decision rule and the moving-average
//! performance measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spikes::SpikeTrain;

/// Filter time constant of the van Rossum distance, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VrdParams {
    pub tau_c: f64,
}

impl Default for VrdParams {
    fn default() -> Self {
        VrdParams { tau_c: 10.0 }
    }
}

impl VrdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_c > 0.0) {
            return Err(Error::config("tau_c must be positive"));
        }
        Ok(())
    }
}

fn pair_sum(a: &[f64], b: &[f64], tau: f64) -> f64 {
    let mut s = 0.0;
    for &x in a {
        for &y in b {
            s += (-(x - y).abs() / tau).exp();
        }
    }
    s
}

/// van Rossum distance between exponentially filtered trains, normalized by
/// `tau_c`, evaluated in closed form:
/// `D = (S_aa + S_bb - 2 S_ab) / 2` with `S_xy = sum exp(-|x_f - y_g| / tau_c)`.
pub fn vrd(a: &SpikeTrain, b: &SpikeTrain, params: &VrdParams) -> f64 {
    let tau = params.tau_c;
    let (a, b) = (a.times(), b.times());
    let d = 0.5 * (pair_sum(a, a, tau) + pair_sum(b, b, tau)) - pair_sum(a, b, tau);
    d.max(0.0)
}

/// Sum of per-neuron distances.
pub fn vrd_spatio(a: &[SpikeTrain], b: &[SpikeTrain], params: &VrdParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!(
            "distance between {} and {} spike trains",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| vrd(x, y, params)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Class with the unique minimum distance; `None` on a tie.
    pub winner: Option<usize>,
    pub distances: Vec<f64>,
}

impl Classification {
    pub fn min_distance(&self) -> f64 {
        self.distances.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_correct(&self, label: usize) -> bool {
        self.winner == Some(label)
    }
}

/// Assigns the output to the class whose target is nearest. Exact ties are
/// reported as a miss.
pub fn classify(
    actual: &[SpikeTrain],
    class_targets: &[Vec<SpikeTrain>],
    params: &VrdParams,
) -> Result<Classification> {
    if class_targets.is_empty() {
        return Err(Error::config("classification needs at least one class"));
    }
    let distances = class_targets
        .iter()
        .map(|t| vrd_spatio(actual, t, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(Classification {
        winner: unique_argmin(&distances),
        distances,
    })
}

/// Index of the unique smallest value, `None` if it is shared.
pub fn unique_argmin(values: &[f64]) -> Option<usize> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hits = values.iter().enumerate().filter(|(_, &v)| v == min);
    let first = hits.next()?.0;
    hits.next().is_none().then_some(first)
}

/// Mean absolute offset between each output's lone spike and its nearest
/// target spike. `None` unless every output fired exactly once and every
/// target train is non-empty.
pub fn time_shift(actual: &[SpikeTrain], target: &[SpikeTrain]) -> Option<f64> {
    if actual.is_empty() || actual.len() != target.len() {
        return None;
    }
    let mut total = 0.0;
    for (a, t) in actual.iter().zip(target) {
        if a.len() != 1 || t.is_empty() {
            return None;
        }
        let x = a.times()[0];
        total += t
            .times()
            .iter()
            .map(|&y| (x - y).abs())
            .fold(f64::INFINITY, f64::min);
    }
    Some(total / actual.len() as f64)
}

/// Smoothing factor `2 / (1 + 20 p)` for `p` patterns.
pub fn smoothing_factor(p: usize) -> f64 {
    2.0 / (1.0 + 20.0 * p as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerSample {
    pub p_tilde: f64,
    pub d_tilde: f64,
    /// `None` until the first qualifying episode.
    pub dt_shift: Option<f64>,
}

/// Exponential moving averages of accuracy (percent), distance and time
/// shift. Accuracy starts at 0; the other two start at their first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTracker {
    pub lambda: f64,
    pub p_tilde: f64,
    pub d_tilde: Option<f64>,
    pub dt_shift: Option<f64>,
    pub history: Vec<TrackerSample>,
}

impl PerformanceTracker {
    pub fn new(n_patterns: usize) -> Self {
        Self::with_lambda(smoothing_factor(n_patterns))
    }

    pub fn with_lambda(lambda: f64) -> Self {
        PerformanceTracker {
            lambda,
            p_tilde: 0.0,
            d_tilde: None,
            dt_shift: None,
            history: Vec::new(),
        }
    }

    pub fn update(&mut self, correct: bool, distance: f64, shift: Option<f64>) {
        let l = self.lambda;
        let hit = if correct { 100.0 } else { 0.0 };
        self.p_tilde = (1.0 - l) * self.p_tilde + l * hit;
        self.d_tilde = Some(match self.d_tilde {
            Some(d) => (1.0 - l) * d + l * distance,
            None => distance,
        });
        if let Some(s) = shift {
            self.dt_shift = Some(match self.dt_shift {
                Some(d) => (1.0 - l) * d + l * s,
                None => s,
            });
        }
        self.history.push(TrackerSample {
            p_tilde: self.p_tilde,
            d_tilde: self.d_tilde.unwrap_or(0.0),
            dt_shift: self.dt_shift,
        });
    }

    pub fn p_history(&self) -> Vec<f64> {
        self.history.iter().map(|s| s.p_tilde).collect()
    }
}

/// Functional form of [`PerformanceTracker::update`].
pub fn update_tracker(
    mut tracker: PerformanceTracker,
    correct: bool,
    distance: f64,
    shift: Option<f64>,
) -> PerformanceTracker {
    tracker.update(correct, distance, shift);
    tracker
}

/// 1-based first episode whose accuracy exceeds 99% of the final value, or 0
/// if the final accuracy is 0 (or the history is empty).
pub fn convergence_episode(p_history: &[f64]) -> usize {
    let Some(&last) = p_history.last() else {
        return 0;
    };
    if last <= 0.0 {
        return 0;
    }
    let bar = 0.99 * last;
    p_history
        .iter()
        .position(|&p| p > bar)
        .map_or(p_history.len(), |i| i + 1)
}
