use serde::{Deserialize, Serialize};

/// Linear ε decay clamped at its final value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, t: u64) -> f64 {
        crate::tabular::linear_epsilon(self.start, self.end, self.decay_steps, t)
    }
}

/// Streaming reward standardisation with Welford statistics.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardStandardizer {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RewardStandardizer {
    pub const EPS: f64 = 1e-6;

    pub fn new() -> Self {
        Self::default()
    }

    /// Folds `r` into the statistics, then returns `(r - mean) / sqrt(var + eps)`.
    pub fn standardize(&mut self, r: f64) -> f64 {
        self.count += 1;
        let delta = r - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (r - self.mean);
        (r - self.mean) / (self.variance() + Self::EPS).sqrt()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance of the rewards seen so far.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}
