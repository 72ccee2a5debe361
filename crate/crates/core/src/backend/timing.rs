use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::stream::RequestKind;

/// Latency/bandwidth model for an emulated device link.
///
/// Every request costs `latency_us`; transfers additionally cost
/// `nbytes / bandwidth_bytes_per_s`. The model only changes reported
/// durations (and wall-clock time when realistic timing is on), never
/// results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub latency_us: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl TimingModel {
    pub fn new(latency_us: f64, bandwidth_bytes_per_s: f64) -> Self {
        TimingModel { latency_us, bandwidth_bytes_per_s }
    }

    pub fn transfer_seconds(&self, nbytes: usize) -> f64 {
        self.latency_us * 1e-6 + nbytes as f64 / self.bandwidth_bytes_per_s
    }

    /// `n / (latency + n / bandwidth)`.
    pub fn effective_bandwidth(&self, nbytes: usize) -> f64 {
        nbytes as f64 / self.transfer_seconds(nbytes)
    }

    pub fn request_duration(&self, kind: RequestKind, nbytes: usize) -> Duration {
        let secs = if kind.is_transfer() { self.transfer_seconds(nbytes) } else { self.latency_us * 1e-6 };
        Duration::from_secs_f64(secs)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingSettings {
    pub model: Option<TimingModel>,
    /// Sleep on the executor so wall-clock time follows the model.
    pub realistic: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_is_monotone_and_saturates() {
        let m = TimingModel::new(50.0, 6e9);
        let mut prev = 0.0;
        for shift in 10..=26 {
            let b = m.effective_bandwidth(1 << shift);
            assert!(b > prev);
            prev = b;
        }
        assert!(m.effective_bandwidth(1 << 10) < 0.01 * 6e9);
        assert!(m.effective_bandwidth(64 << 20) > 0.99 * 6e9);
        assert_eq!(m.request_duration(RequestKind::Alloc, 1 << 20), Duration::from_micros(50));
    }
}
