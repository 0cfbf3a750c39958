// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

//! Spectral feature extraction for multichannel recordings.
//!
//! Recordings are cleaned with [`preprocess`], cut into consecutive
//! one-second Hann windows, and summarized per band by log power
//! ([`extract_log_psd`]) and differential entropy ([`extract_de`]).
//! [`build_feature_tensor`] lays the two families out as one row per
//! window: every channel's bands for log power, then every channel's
//! bands for entropy.

mod features;
mod filter;
mod io;

pub use features::{
    build_feature_tensor, extract_de, extract_log_psd, hann_periodic, segment_features, BandValues,
    DeMethod, DeOutput, FeatureTensor, POWER_FLOOR, VARIANCE_FLOOR,
};
pub use filter::{filtfilt, notch_filter, preprocess, Biquad, NOTCH_Q};
pub use io::{
    read_ftz, read_raw_binary, read_raw_csv, write_ftz, write_raw_binary, FtzFile, FtzSegment,
    Label, LabelKind, FTZ_MAGIC, FTZ_VERSION, RAW_MAGIC, RAW_VERSION,
};

#[cfg(test)]
mod tests;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Multichannel time series, one sample vector per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
}

impl RawRecording {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self, SignalError> {
        let names = (0..channels.len()).map(|i| format!("ch{i}")).collect();
        Self::with_names(channels, sample_rate, names)
    }

    pub fn with_names(
        channels: Vec<Vec<f64>>,
        sample_rate: f64,
        channel_names: Vec<String>,
    ) -> Result<Self, SignalError> {
        let rec = Self {
            channels,
            sample_rate,
            channel_names,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(SignalError::InvalidConfig(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.channels.is_empty() {
            return Err(SignalError::InvalidConfig("recording has no channels".into()));
        }
        if self.channel_names.len() != self.channels.len() {
            return Err(SignalError::InvalidConfig(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.channels.len()
            )));
        }
        let n = self.channels[0].len();
        for (c, ch) in self.channels.iter().enumerate() {
            if ch.len() != n {
                return Err(SignalError::InvalidConfig(format!(
                    "channel {c} has {} samples, channel 0 has {n}",
                    ch.len()
                )));
            }
            if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite { channel: c, index });
            }
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }
}

/// Ordered half-open frequency intervals in Hz.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BandSpec {
    pub bands: Vec<(f64, f64)>,
}

impl BandSpec {
    /// Delta, theta, alpha, beta and gamma.
    pub fn five_band() -> Self {
        Self {
            bands: vec![(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 50.0)],
        }
    }

    /// Twenty-five contiguous 2 Hz bands starting at 0.5 Hz.
    pub fn two_hz(count: usize) -> Self {
        Self {
            bands: (0..count)
                .map(|i| (0.5 + 2.0 * i as f64, 2.5 + 2.0 * i as f64))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), SignalError> {
        if self.bands.is_empty() {
            return Err(SignalError::InvalidConfig("band list is empty".into()));
        }
        let nyquist = sample_rate / 2.0;
        for &(lo, hi) in &self.bands {
            if !(0.0 <= lo && lo < hi && hi <= nyquist) {
                return Err(SignalError::InvalidConfig(format!(
                    "band [{lo}, {hi}) must satisfy 0 <= low < high <= {nyquist}"
                )));
            }
        }
        Ok(())
    }
}
