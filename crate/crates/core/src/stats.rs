//! Batch-means estimation of ergodic averages.

use serde::Serialize;

pub const DEFAULT_BATCHES: usize = 100;

/// Streams samples into equal-size consecutive batches.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_size: u64,
    in_batch: u64,
    current: f64,
    sums: Vec<f64>,
}

impl BatchMeans {
    pub fn new(batch_size: u64) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        BatchMeans {
            batch_size,
            in_batch: 0,
            current: 0.0,
            sums: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, v: f64) {
        self.current += v;
        self.in_batch += 1;
        if self.in_batch == self.batch_size {
            self.sums.push(self.current);
            self.current = 0.0;
            self.in_batch = 0;
        }
    }

    pub fn n_batches(&self) -> usize {
        self.sums.len()
    }

    /// Number of samples in completed batches.
    pub fn count(&self) -> u64 {
        self.sums.len() as u64 * self.batch_size
    }

    pub fn batch_means(&self) -> Vec<f64> {
        let b = self.batch_size as f64;
        self.sums.iter().map(|s| s / b).collect()
    }

    pub fn summary(&self) -> MeanEstimate {
        MeanEstimate::from_batches(&self.batch_means())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanEstimate {
    /// Mean and standard error of equally weighted batch means, centred on
    /// the first batch so that identical batches give `stderr == 0` exactly.
    pub fn from_batches(b: &[f64]) -> Self {
        let k = b.len();
        if k == 0 {
            return MeanEstimate {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let pivot = b[0];
        let dev_mean = b.iter().map(|v| v - pivot).sum::<f64>() / k as f64;
        let mean = pivot + dev_mean;
        if k == 1 {
            return MeanEstimate {
                mean,
                stderr: f64::NAN,
            };
        }
        let ss: f64 = b.iter().map(|v| (v - pivot - dev_mean).powi(2)).sum();
        MeanEstimate {
            mean,
            stderr: (ss / ((k - 1) * k) as f64).sqrt(),
        }
    }

    /// Sample mean and sample standard deviation of independent values.
    pub fn spread(values: &[f64]) -> (f64, f64) {
        let e = Self::from_batches(values);
        (e.mean, e.stderr * (values.len() as f64).sqrt())
    }
}
