// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Provenance, SegmentRecord, Target};
use crate::capsnet::Head;
use crate::signal::{segment_features, BandSpec, DeMethod, RawRecording};

/// Sinusoids summed per band, channel and one-second window.
const COMPONENTS: usize = 3;
/// Lag-one correlation of the regression latent between segments.
const LATENT_RHO: f64 = 0.9;
const LATENT_SD: f64 = 1.5;
const LATENT_LIMIT: f64 = 4.0;

/// Parameters of the synthetic EEG-like generator.
///
/// Every band carries unit baseline amplitude scaled by a per-subject,
/// per-channel log-normal offset. The label modulates one band: class `k`
/// amplifies band `(k + 1) % bands` by `1 + effect`; a regression latent
/// `z` in `[-4, 4]` scales `target_band` by `exp(effect * (z + 4) / 2)` and
/// the target is `sigmoid(z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub task: Head,
    pub subjects: usize,
    pub sessions: usize,
    pub segments_per_session: usize,
    pub channels: usize,
    pub classes: usize,
    /// Seconds per segment.
    pub windows: usize,
    pub sample_rate: f64,
    pub bands: BandSpec,
    /// Standard deviation of additive white noise.
    pub noise: f64,
    /// Log-scale spread of per-subject amplitude offsets.
    pub subject_spread: f64,
    /// Strength of the label-driven modulation.
    pub effect: f64,
    pub target_band: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::classification()
    }
}

impl SynthSpec {
    pub fn classification() -> Self {
        Self {
            task: Head::Classification,
            subjects: 15,
            sessions: 15,
            segments_per_session: 4,
            channels: 62,
            classes: 3,
            windows: 8,
            sample_rate: 200.0,
            bands: BandSpec::five_band(),
            noise: 0.5,
            subject_spread: 0.3,
            effect: 1.0,
            target_band: 2,
            seed: 0,
        }
    }

    pub fn regression() -> Self {
        Self {
            task: Head::Regression,
            channels: 17,
            classes: 0,
            bands: BandSpec::two_hz(25),
            target_band: 4,
            ..Self::classification()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        for (name, v) in [
            ("subjects", self.subjects),
            ("sessions", self.sessions),
            ("segments_per_session", self.segments_per_session),
            ("channels", self.channels),
            ("windows", self.windows),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.task == Head::Classification && self.classes < 2 {
            return bad(format!("classification needs at least 2 classes, got {}", self.classes));
        }
        if self.task == Head::Classification && self.classes > self.bands.len() {
            return bad(format!("{} classes need as many bands, got {}", self.classes, self.bands.len()));
        }
        if self.task == Head::Regression && self.target_band >= self.bands.len() {
            return bad(format!("target band {} out of {} bands", self.target_band, self.bands.len()));
        }
        if !(self.noise >= 0.0 && self.subject_spread >= 0.0 && self.effect >= 0.0) {
            return bad("noise, subject_spread and effect must be non-negative".into());
        }
        if self.sample_rate.fract() != 0.0 || self.sample_rate < 2.0 {
            return bad(format!("sample rate {} must be an integer of at least 2", self.sample_rate));
        }
        self.bands.validate(self.sample_rate).map_err(|e| DataError::InvalidSpec(e.to_string()))
    }

    pub fn segment_count(&self) -> usize {
        self.subjects * self.sessions * self.segments_per_session
    }

    pub fn feature_count(&self) -> usize {
        2 * self.bands.len() * self.channels
    }

    fn modulated_band(&self, target: Target) -> usize {
        match target {
            Target::Class(k) => (k + 1) % self.bands.len(),
            Target::Scalar(_) => self.target_band,
        }
    }
}

/// One subject-session recording and the label of each of its segments.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecording {
    pub subject: usize,
    pub session: usize,
    pub recording: RawRecording,
    pub targets: Vec<Target>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<SynthRecording>, DataError> {
    spec.validate()?;
    let nb = spec.bands.len();
    let rate = spec.sample_rate as usize;
    let seg_len = spec.windows * rate;
    let mut out = Vec::with_capacity(spec.subjects * spec.sessions);
    for subject in 0..spec.subjects {
        let mut srng = stream_rng(spec.seed, (subject as u64 + 1) << 32);
        let lognormal = |rng: &mut ChaCha8Rng| (spec.subject_spread * rng.sample::<f64, _>(StandardNormal)).exp();
        let offsets: Vec<f64> = (0..spec.channels * nb).map(|_| lognormal(&mut srng)).collect();

        for session in 0..spec.sessions {
            let mut rng = stream_rng(spec.seed, ((subject as u64 + 1) << 32) | (session as u64 + 1));
            let mut latent: f64 = LATENT_SD * rng.sample::<f64, _>(StandardNormal);
            let targets: Vec<Target> = (0..spec.segments_per_session)
                .map(|_| match spec.task {
                    Head::Classification => Target::Class(rng.random_range(0..spec.classes)),
                    Head::Regression => {
                        let step: f64 = rng.sample(StandardNormal);
                        latent = (LATENT_RHO * latent + (1.0 - LATENT_RHO * LATENT_RHO).sqrt() * LATENT_SD * step)
                            .clamp(-LATENT_LIMIT, LATENT_LIMIT);
                        Target::Scalar(latent)
                    }
                })
                .collect();

            let mut channels = vec![Vec::with_capacity(seg_len * targets.len()); spec.channels];
            for &target in &targets {
                let band = spec.modulated_band(target);
                for (c, samples) in channels.iter_mut().enumerate() {
                    let mut seg = vec![0.0; seg_len];
                    for (b, &(lo, hi)) in spec.bands.bands.iter().enumerate() {
                        let mut amp = offsets[c * nb + b];
                        if b == band {
                            amp *= match target {
                                Target::Class(_) => 1.0 + spec.effect,
                                Target::Scalar(z) => (spec.effect * (z + LATENT_LIMIT) / 2.0).exp(),
                            };
                        }
                        let a = amp * (2.0 / COMPONENTS as f64).sqrt();
                        for window in seg.chunks_exact_mut(rate) {
                            for _ in 0..COMPONENTS {
                                let f = rng.random_range(lo + 0.25 * (hi - lo)..hi - 0.25 * (hi - lo));
                                let phase = rng.random_range(0.0..2.0 * PI);
                                let w = 2.0 * PI * f / spec.sample_rate;
                                for (i, v) in window.iter_mut().enumerate() {
                                    *v += a * (w * i as f64 + phase).sin();
                                }
                            }
                        }
                    }
                    if spec.noise > 0.0 {
                        for v in seg.iter_mut() {
                            *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                    samples.extend_from_slice(&seg);
                }
            }
            let targets = targets
                .into_iter()
                .map(|t| match t {
                    Target::Scalar(z) => Target::Scalar(sigmoid(z)),
                    other => other,
                })
                .collect();
            out.push(SynthRecording {
                subject,
                session,
                recording: RawRecording::new(channels, spec.sample_rate)?,
                targets,
            });
        }
    }
    Ok(out)
}

/// Generates recordings and extracts one feature tensor per segment.
pub fn synthesize_dataset(spec: &SynthSpec, method: DeMethod) -> Result<Dataset, DataError> {
    let mut records = Vec::with_capacity(spec.segment_count());
    for rec in generate_synthetic(spec)? {
        let (tensors, _) = segment_features(&rec.recording, spec.windows, &spec.bands, method)?;
        for (index, (t, target)) in tensors.into_iter().zip(rec.targets).enumerate() {
            records.push(SegmentRecord {
                features: t.to_tensor(),
                target,
                provenance: Provenance {
                    subject: rec.subject,
                    session: rec.session,
                    index,
                },
            });
        }
    }
    Dataset::new(spec.task, spec.windows, spec.feature_count(), records)
}
