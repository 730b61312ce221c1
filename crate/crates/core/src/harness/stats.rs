//! Order-fixed, compensated reductions over per-trial values.

use serde::{Deserialize, Serialize};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Standard error of the mean; zero for a single sample.
    pub std_error: f64,
    pub count: usize,
}

impl MeanEstimate {
    /// Two-pass mean and standard error. `None` for an empty slice.
    pub fn from_samples(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().copied().collect::<CompensatedSum>().total() / count as f64;
        let std_error = if count > 1 {
            let ss = values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .total();
            (ss / (count - 1) as f64 / count as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std_error,
            count,
        })
    }

    /// `|mean - target| <= sigmas * std_error + floor`.
    pub fn within(&self, target: f64, sigmas: f64, floor: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.std_error + floor
    }
}
