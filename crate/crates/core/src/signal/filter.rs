// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use super::{RawRecording, SignalError};

pub const NOTCH_Q: f64 = 30.0;

/// Fraction of the target Nyquist frequency kept by the decimation filter.
const ANTI_ALIAS_FRACTION: f64 = 0.8;

/// Normalized second-order section, `a0 == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

#[derive(Clone, Copy)]
enum Kind {
    Lowpass,
    Highpass,
    Notch,
}

impl Biquad {
    fn design(kind: Kind, freq: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * freq / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let (b0, b1, b2) = match kind {
            Kind::Lowpass => ((1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0),
            Kind::Highpass => ((1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0),
            Kind::Notch => (1.0, -2.0 * cos, 1.0),
        };
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    pub fn lowpass(freq: f64, fs: f64, q: f64) -> Self {
        Self::design(Kind::Lowpass, freq, fs, q)
    }

    pub fn highpass(freq: f64, fs: f64, q: f64) -> Self {
        Self::design(Kind::Highpass, freq, fs, q)
    }

    pub fn notch(freq: f64, fs: f64, q: f64) -> Self {
        Self::design(Kind::Notch, freq, fs, q)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Transposed direct form II over `x`, starting from the steady state
    /// reached by a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let g = self.dc_gain();
        let mut z2 = (self.b2 - self.a2 * g) * x0;
        let mut z1 = (self.b1 - self.a1 * g) * x0 + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + z1;
            z1 = self.b1 * input - self.a1 * y + z2;
            z2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

/// Butterworth section quality factors for an even `order`.
fn butterworth_qs(order: usize) -> Vec<f64> {
    (0..order / 2)
        .map(|k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).cos()))
        .collect()
}

fn butter_lowpass(order: usize, freq: f64, fs: f64) -> Vec<Biquad> {
    butterworth_qs(order)
        .into_iter()
        .map(|q| Biquad::lowpass(freq, fs, q))
        .collect()
}

fn butter_highpass(order: usize, freq: f64, fs: f64) -> Vec<Biquad> {
    butterworth_qs(order)
        .into_iter()
        .map(|q| Biquad::highpass(freq, fs, q))
        .collect()
}

/// Zero-phase forward-backward filtering through a cascade of sections.
///
/// The signal is extended at both ends by odd reflection of
/// `3 * (2 * sections + 1)` samples, clamped to the signal length.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 || sections.is_empty() {
        return x.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase second-order notch at `freq` with quality factor [`NOTCH_Q`].
pub fn notch_filter(x: &[f64], freq: f64, fs: f64) -> Vec<f64> {
    filtfilt(&[Biquad::notch(freq, fs, NOTCH_Q)], x)
}

/// Resamples by an integer factor, band-passes with a zero-phase order 4
/// Butterworth, removes line noise with a notch and rescales every channel
/// into [-1, 1].
pub fn preprocess(
    rec: &RawRecording,
    target_rate: f64,
    bandpass: (f64, f64),
    notch: f64,
) -> Result<RawRecording, SignalError> {
    rec.validate()?;
    if !(target_rate > 0.0 && target_rate <= rec.sample_rate) {
        return Err(SignalError::InvalidConfig(format!(
            "target rate {target_rate} must be positive and at most {}",
            rec.sample_rate
        )));
    }
    let ratio = rec.sample_rate / target_rate;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 {
        return Err(SignalError::InvalidConfig(format!(
            "sample rate {} is not an integer multiple of {target_rate}",
            rec.sample_rate
        )));
    }
    let factor = factor as usize;
    let nyquist = target_rate / 2.0;
    let (lo, hi) = bandpass;
    if !(0.0 < lo && lo < hi && hi < nyquist) {
        return Err(SignalError::InvalidConfig(format!(
            "band-pass [{lo}, {hi}] must lie strictly inside (0, {nyquist})"
        )));
    }
    if !(0.0 < notch && notch < nyquist) {
        return Err(SignalError::InvalidConfig(format!(
            "notch {notch} must lie strictly inside (0, {nyquist})"
        )));
    }

    let anti_alias = butter_lowpass(8, ANTI_ALIAS_FRACTION * nyquist, rec.sample_rate);
    let mut band = butter_highpass(4, lo, target_rate);
    band.extend(butter_lowpass(4, hi, target_rate));
    let notch_section = [Biquad::notch(notch, target_rate, NOTCH_Q)];

    let channels = rec
        .channels
        .iter()
        .map(|ch| {
            let down: Vec<f64> = if factor > 1 {
                filtfilt(&anti_alias, ch)
                    .into_iter()
                    .step_by(factor)
                    .collect()
            } else {
                ch.clone()
            };
            let banded = filtfilt(&band, &down);
            let cleaned = filtfilt(&notch_section, &banded);
            rescale_unit(&cleaned)
        })
        .collect();
    RawRecording::with_names(channels, target_rate, rec.channel_names.clone())
}

/// Min-max scaling into [-1, 1]; constant channels map to zero.
fn rescale_unit(x: &[f64]) -> Vec<f64> {
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    if !(span > 0.0) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| 2.0 * (v - min) / span - 1.0).collect()
}
