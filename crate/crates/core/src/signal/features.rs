// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{BandSpec, RawRecording, SignalError};
use crate::tensorcore::Tensor;

pub const POWER_FLOOR: f64 = 1e-12;
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// How the in-band variance behind each entropy value is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeMethod {
    /// Sample variance of the band-isolated signal inside each window.
    #[default]
    BandFiltered,
    /// Band share of the Hann-windowed periodogram.
    Spectral,
}

/// One value per (window, channel, band), stored in that nesting order.
#[derive(Clone, Debug, PartialEq)]
pub struct BandValues {
    pub windows: usize,
    pub channels: usize,
    pub bands: usize,
    pub values: Vec<f64>,
}

impl BandValues {
    pub fn get(&self, window: usize, channel: usize, band: usize) -> f64 {
        self.values[(window * self.channels + channel) * self.bands + band]
    }

    fn zeros(windows: usize, channels: usize, bands: usize) -> Self {
        Self {
            windows,
            channels,
            bands,
            values: vec![0.0; windows * channels * bands],
        }
    }

    fn set(&mut self, window: usize, channel: usize, band: usize, v: f64) {
        self.values[(window * self.channels + channel) * self.bands + band] = v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeOutput {
    pub values: BandValues,
    /// Number of (window, channel, band) cells whose variance hit the floor.
    pub floored: usize,
}

/// Network input for one segment: `windows` rows of `features` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    pub windows: usize,
    pub features: usize,
    pub values: Vec<f64>,
}

impl FeatureTensor {
    pub fn row(&self, window: usize) -> &[f64] {
        &self.values[window * self.features..(window + 1) * self.features]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.windows, self.features], self.values.clone())
            .expect("feature tensor dimensions are consistent")
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn window_len(rec: &RawRecording) -> Result<usize, SignalError> {
    let r = rec.sample_rate.round();
    if (rec.sample_rate - r).abs() > 1e-9 || r < 2.0 {
        return Err(SignalError::InvalidConfig(format!(
            "one-second windows need an integral sample rate, got {}",
            rec.sample_rate
        )));
    }
    Ok(r as usize)
}

/// Periodogram bin indices falling inside each band.
fn band_bins(bands: &BandSpec, n: usize, fs: f64) -> Result<Vec<Vec<usize>>, SignalError> {
    bands.validate(fs)?;
    let df = fs / n as f64;
    bands
        .bands
        .iter()
        .map(|&(lo, hi)| {
            let bins: Vec<usize> = (0..=n / 2)
                .filter(|&k| {
                    let f = k as f64 * df;
                    f >= lo && f < hi
                })
                .collect();
            if bins.is_empty() {
                Err(SignalError::InvalidConfig(format!(
                    "band [{lo}, {hi}) contains no frequency bins at {df} Hz resolution"
                )))
            } else {
                Ok(bins)
            }
        })
        .collect()
}

fn check_windows(rec: &RawRecording, windows: usize, r: usize) -> Result<(), SignalError> {
    rec.validate()?;
    if windows == 0 {
        return Err(SignalError::InvalidConfig("segment length must be at least one second".into()));
    }
    if rec.len() < windows * r {
        return Err(SignalError::InvalidConfig(format!(
            "recording has {} samples, {windows} windows need {}",
            rec.len(),
            windows * r
        )));
    }
    Ok(())
}

struct Periodogram {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    energy: f64,
    buf: Vec<Complex64>,
}

impl Periodogram {
    fn new(n: usize) -> Self {
        let window = hann_periodic(n);
        let energy = window.iter().map(|w| w * w).sum();
        Self {
            fft: FftPlanner::new().plan_fft_forward(n),
            window,
            energy,
            buf: vec![Complex64::default(); n],
        }
    }

    /// `|X_k|^2` of the windowed frame, un-normalized.
    fn power(&mut self, frame: &[f64]) -> Vec<f64> {
        for ((b, &x), &w) in self.buf.iter_mut().zip(frame).zip(&self.window) {
            *b = Complex64::new(x * w, 0.0);
        }
        self.fft.process(&mut self.buf);
        self.buf.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Natural-log band power of the first `windows` one-second Hann windows.
///
/// Band power is the mean over bins in `[low, high)` of `|X_k|^2 / sum(w^2)`,
/// floored at [`POWER_FLOOR`] before the logarithm.
pub fn extract_log_psd(
    rec: &RawRecording,
    windows: usize,
    bands: &BandSpec,
) -> Result<BandValues, SignalError> {
    let r = window_len(rec)?;
    check_windows(rec, windows, r)?;
    let bins = band_bins(bands, r, rec.sample_rate)?;
    let mut pg = Periodogram::new(r);
    let mut out = BandValues::zeros(windows, rec.channel_count(), bands.len());
    for (c, ch) in rec.channels.iter().enumerate() {
        for w in 0..windows {
            let p = pg.power(&ch[w * r..(w + 1) * r]);
            for (b, idx) in bins.iter().enumerate() {
                let mean = idx.iter().map(|&k| p[k]).sum::<f64>() / (idx.len() as f64 * pg.energy);
                out.set(w, c, b, mean.max(POWER_FLOOR).ln());
            }
        }
    }
    Ok(out)
}

/// Differential entropy `0.5 * ln(2 pi e var)` per window and band.
pub fn extract_de(
    rec: &RawRecording,
    windows: usize,
    bands: &BandSpec,
    method: DeMethod,
) -> Result<DeOutput, SignalError> {
    let r = window_len(rec)?;
    check_windows(rec, windows, r)?;
    let mut out = BandValues::zeros(windows, rec.channel_count(), bands.len());
    let mut floored = 0;
    let mut emit = |out: &mut BandValues, w, c, b, var: f64| {
        let var = if var > VARIANCE_FLOOR {
            var
        } else {
            floored += 1;
            VARIANCE_FLOOR
        };
        out.set(w, c, b, 0.5 * (2.0 * PI * E * var).ln());
    };
    match method {
        DeMethod::Spectral => {
            let bins = band_bins(bands, r, rec.sample_rate)?;
            let mut pg = Periodogram::new(r);
            for (c, ch) in rec.channels.iter().enumerate() {
                for w in 0..windows {
                    let p = pg.power(&ch[w * r..(w + 1) * r]);
                    for (b, idx) in bins.iter().enumerate() {
                        let band: f64 = idx.iter().map(|&k| p[k]).sum();
                        emit(&mut out, w, c, b, 2.0 * band / (r as f64 * pg.energy));
                    }
                }
            }
        }
        DeMethod::BandFiltered => {
            let n = windows * r;
            let bins = band_bins(bands, n, rec.sample_rate)?;
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(n);
            let inverse = planner.plan_fft_inverse(n);
            let mut spectrum = vec![Complex64::default(); n];
            let mut masked = vec![Complex64::default(); n];
            for (c, ch) in rec.channels.iter().enumerate() {
                for (s, &x) in spectrum.iter_mut().zip(&ch[..n]) {
                    *s = Complex64::new(x, 0.0);
                }
                forward.process(&mut spectrum);
                for (b, idx) in bins.iter().enumerate() {
                    masked.iter_mut().for_each(|m| *m = Complex64::default());
                    for &k in idx {
                        masked[k] = spectrum[k];
                        if k != 0 {
                            masked[n - k] = spectrum[n - k];
                        }
                    }
                    inverse.process(&mut masked);
                    for w in 0..windows {
                        // The inverse transform is unnormalized.
                        let frame: Vec<f64> =
                            masked[w * r..(w + 1) * r].iter().map(|z| z.re / n as f64).collect();
                        let mean = frame.iter().sum::<f64>() / r as f64;
                        let var = frame.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r as f64;
                        emit(&mut out, w, c, b, var);
                    }
                }
            }
        }
    }
    Ok(DeOutput { values: out, floored })
}

/// Lays out one row per window: log power for every channel's bands, then
/// entropy for every channel's bands.
pub fn build_feature_tensor(psd: &BandValues, de: &BandValues) -> Result<FeatureTensor, SignalError> {
    if (psd.windows, psd.channels, psd.bands) != (de.windows, de.channels, de.bands) {
        return Err(SignalError::InvalidConfig(format!(
            "log-power shape {}x{}x{} differs from entropy shape {}x{}x{}",
            psd.windows, psd.channels, psd.bands, de.windows, de.channels, de.bands
        )));
    }
    let block = psd.channels * psd.bands;
    let features = 2 * block;
    let mut values = Vec::with_capacity(psd.windows * features);
    for w in 0..psd.windows {
        values.extend_from_slice(&psd.values[w * block..(w + 1) * block]);
        values.extend_from_slice(&de.values[w * block..(w + 1) * block]);
    }
    Ok(FeatureTensor {
        windows: psd.windows,
        features,
        values,
    })
}

/// Cuts a recording into consecutive `seconds`-long segments and extracts
/// one feature tensor per segment. Trailing samples that do not fill a
/// segment are dropped.
pub fn segment_features(
    rec: &RawRecording,
    seconds: usize,
    bands: &BandSpec,
    method: DeMethod,
) -> Result<(Vec<FeatureTensor>, usize), SignalError> {
    let r = window_len(rec)?;
    if seconds == 0 {
        return Err(SignalError::InvalidConfig("segment length must be at least one second".into()));
    }
    let segments = rec.len() / (r * seconds);
    if segments == 0 {
        return Err(SignalError::InvalidConfig(format!(
            "recording of {:.3} s is shorter than one {seconds} s segment",
            rec.duration_seconds()
        )));
    }
    let windows = segments * seconds;
    let psd = extract_log_psd(rec, windows, bands)?;
    let de = extract_de(rec, windows, bands, method)?;
    let all = build_feature_tensor(&psd, &de.values)?;
    let per = seconds * all.features;
    let tensors = all
        .values
        .chunks_exact(per)
        .map(|chunk| FeatureTensor {
            windows: seconds,
            features: all.features,
            values: chunk.to_vec(),
        })
        .collect();
    Ok((tensors, de.floored))
}
