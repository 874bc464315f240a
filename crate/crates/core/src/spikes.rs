use serde::{Deserialize, Serialize};

/// Ordered firing times of one neuron, in ms.
///
/// Simulated and generated trains are always aligned to the simulation grid;
/// the type itself accepts arbitrary non-negative times so that distance
/// computations can be exercised off-grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpikeTrain(Vec<f64>);

impl SpikeTrain {
    pub fn new() -> Self {
        SpikeTrain(Vec::new())
    }

    /// Builds a train from unsorted times.
    pub fn from_times(mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        SpikeTrain(times)
    }

    /// Builds a train from grid step indices.
    pub fn from_steps(steps: &[usize], dt: f64) -> Self {
        let mut times: Vec<f64> = steps.iter().map(|&k| k as f64 * dt).collect();
        times.sort_by(f64::total_cmp);
        SpikeTrain(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Appends a spike; must not precede the last one.
    pub fn push(&mut self, t: f64) {
        debug_assert!(self.0.last().is_none_or(|&last| last <= t));
        self.0.push(t);
    }

    /// Grid step index of every spike (`round(t / dt)`).
    pub fn steps(&self, dt: f64) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .map(move |&t| (t / dt).round().max(0.0) as usize)
    }

    /// Number of spikes falling on each of `n_steps` grid steps; spikes outside
    /// the grid are ignored.
    pub fn step_counts(&self, dt: f64, n_steps: usize) -> Vec<u32> {
        let mut counts = vec![0u32; n_steps];
        for k in self.steps(dt) {
            if k < n_steps {
                counts[k] += 1;
            }
        }
        counts
    }

    /// Mean firing rate in Hz over `duration` ms.
    pub fn rate_hz(&self, duration: f64) -> f64 {
        self.0.len() as f64 * 1000.0 / duration
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for SpikeTrain {
    fn from(times: Vec<f64>) -> Self {
        SpikeTrain::from_times(times)
    }
}

impl<'a> IntoIterator for &'a SpikeTrain {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
