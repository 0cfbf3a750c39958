// Copyright 2026 The capsdistill Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

fn tone(freq: f64, fs: f64, seconds: f64, amp: f64, phase: f64) -> Vec<f64> {
    let n = (fs * seconds).round() as usize;
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / fs + phase).sin())
        .collect()
}

fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Direct O(n^2) DFT power `|X_k|^2`.
fn dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn rms_via_fft(x: &[f64]) -> f64 {
    use rustfft::num_complex::Complex64;
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    rustfft::FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    let n = x.len() as f64;
    (buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / (n * n)).sqrt()
}

fn rec(channels: Vec<Vec<f64>>, fs: f64) -> RawRecording {
    RawRecording::new(channels, fs).unwrap()
}

#[test]
fn zero_recording_stays_zero() {
    let r = rec(vec![vec![0.0; 5000]; 3], 1000.0);
    let out = preprocess(&r, 200.0, (0.5, 70.0), 50.0).unwrap();
    assert_eq!(out.len(), 1000);
    assert!(out.channels.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn decimation_divides_length_and_scales_into_unit_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = rec(vec![noise(10_000, &mut rng), tone(12.0, 1000.0, 10.0, 40.0, 0.3)], 1000.0);
    let out = preprocess(&r, 200.0, (0.5, 70.0), 50.0).unwrap();
    assert_eq!(out.sample_rate, 200.0);
    assert_eq!(out.len(), 10_000 / 5);
    for ch in &out.channels {
        let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
    }
}

#[test]
fn bandpass_keeps_passband_and_rejects_stopband() {
    let fs = 1000.0;
    let pass = tone(20.0, fs, 8.0, 1.0, 0.0);
    let stop = tone(90.0, fs, 8.0, 1.0, 0.0);
    let mixed: Vec<f64> = pass.iter().zip(&stop).map(|(a, b)| a + b).collect();
    let out = preprocess(&rec(vec![mixed], fs), 200.0, (0.5, 70.0), 50.0).unwrap();
    let p = dft_power(&out.channels[0]);
    // 8 s at 200 Hz gives 0.125 Hz bins: 20 Hz is bin 160, 90 Hz is bin 720.
    let measured = p[720] / p[160];
    // Bilinear Butterworth magnitude, squared twice by the forward-backward pass.
    let gain = |f: f64, fc: f64, fs: f64, order: i32| {
        let r = (PI * f / fs).tan() / (PI * fc / fs).tan();
        (1.0 / (1.0 + r.powi(2 * order))).powi(2)
    };
    let predicted = gain(90.0, 80.0, 1000.0, 8) * gain(90.0, 70.0, 200.0, 4);
    assert!(predicted < 1e-9);
    // Edge transients put a floor under the measurement well above the design value.
    assert!(measured < 1e-5, "{measured}");
}

#[test]
fn notch_removes_line_frequency() {
    let x = tone(50.0, 200.0, 60.0, 1.0, 0.0);
    let y = notch_filter(&x, 50.0, 200.0);
    let ratio = rms_via_fft(&y) / rms_via_fft(&x);
    assert!(ratio < 0.05, "residual {ratio}");
    let x = tone(10.0, 200.0, 10.0, 1.0, 0.0);
    let y = notch_filter(&x, 50.0, 200.0);
    assert!(rms_via_fft(&y) / rms_via_fft(&x) > 0.99);
}

#[test]
fn preprocess_rejects_bad_input() {
    let r = RawRecording {
        channels: vec![vec![0.0, f64::NAN, 1.0]],
        sample_rate: 200.0,
        channel_names: vec!["a".into()],
    };
    assert!(matches!(
        preprocess(&r, 200.0, (0.5, 70.0), 50.0),
        Err(SignalError::NonFinite { channel: 0, index: 1 })
    ));
    let r = rec(vec![vec![0.0; 1000]], 200.0);
    assert!(matches!(preprocess(&r, 200.0, (0.5, 120.0), 50.0), Err(SignalError::InvalidConfig(_))));
    assert!(matches!(preprocess(&r, 300.0, (0.5, 70.0), 50.0), Err(SignalError::InvalidConfig(_))));
    let r = rec(vec![vec![0.0; 1000]], 500.0);
    assert!(matches!(preprocess(&r, 200.0, (0.5, 70.0), 50.0), Err(SignalError::InvalidConfig(_))));
    assert!(RawRecording::new(vec![], 200.0).is_err());
    assert!(RawRecording::new(vec![vec![0.0; 3], vec![0.0; 4]], 200.0).is_err());
}

#[test]
fn alpha_dominates_for_ten_hertz_tone() {
    let r = rec(vec![tone(10.0, 200.0, 4.0, 1.0, 0.0)], 200.0);
    let bands = BandSpec::five_band();
    let psd = extract_log_psd(&r, 4, &bands).unwrap();
    for w in 0..4 {
        for b in [0, 1, 3, 4] {
            assert!(psd.get(w, 0, 2) > psd.get(w, 0, b));
        }
    }
}

#[test]
fn log_psd_matches_direct_dft() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = noise(600, &mut rng);
    let r = rec(vec![x.clone()], 200.0);
    let bands = BandSpec::five_band();
    let psd = extract_log_psd(&r, 3, &bands).unwrap();
    for w in 0..3 {
        let frame: Vec<f64> = (0..200)
            .map(|i| x[w * 200 + i] * (0.5 - 0.5 * (2.0 * PI * i as f64 / 200.0).cos()))
            .collect();
        let energy: f64 = (0..200)
            .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / 200.0).cos()).powi(2))
            .sum();
        let p = dft_power(&frame);
        for (b, &(lo, hi)) in bands.bands.iter().enumerate() {
            let bins: Vec<usize> = (0..=100).filter(|&k| (k as f64) >= lo && (k as f64) < hi).collect();
            let mean = bins.iter().map(|&k| p[k]).sum::<f64>() / (bins.len() as f64 * energy);
            assert!((psd.get(w, 0, b) - mean.ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn white_noise_gives_equal_power_in_equal_width_bands() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let windows = 200;
    let r = rec(vec![noise(200 * windows, &mut rng)], 200.0);
    let bands = BandSpec { bands: vec![(10.0, 20.0), (60.0, 70.0)] };
    let psd = extract_log_psd(&r, windows, &bands).unwrap();
    let d: Vec<f64> = (0..windows)
        .map(|w| psd.get(w, 0, 0).exp() - psd.get(w, 0, 1).exp())
        .collect();
    let mean = d.iter().sum::<f64>() / windows as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (windows - 1) as f64).sqrt();
    assert!(mean.abs() < 3.0 * sd / (windows as f64).sqrt(), "{mean} vs se {}", sd / (windows as f64).sqrt());
}

#[test]
fn doubling_amplitude_adds_log_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = noise(1000, &mut rng);
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let bands = BandSpec::two_hz(25);
    let a = extract_log_psd(&rec(vec![x.clone()], 200.0), 5, &bands).unwrap();
    let b = extract_log_psd(&rec(vec![x2.clone()], 200.0), 5, &bands).unwrap();
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!((v - u - 4f64.ln()).abs() < 1e-9);
    }
    for method in [DeMethod::BandFiltered, DeMethod::Spectral] {
        let a = extract_de(&rec(vec![x.clone()], 200.0), 5, &bands, method).unwrap();
        let b = extract_de(&rec(vec![x2.clone()], 200.0), 5, &bands, method).unwrap();
        for (u, v) in a.values.values.iter().zip(&b.values.values) {
            assert!((v - u - 2f64.ln()).abs() < 1e-9);
        }
    }
}

#[test]
fn log_psd_is_shift_invariant_for_stationary_tone() {
    let bands = BandSpec::five_band();
    let base = extract_log_psd(&rec(vec![tone(10.0, 200.0, 1.0, 1.0, 0.0)], 200.0), 1, &bands).unwrap();
    let x = tone(10.0, 200.0, 1.0, 1.0, 0.0);
    for shift in [1, 7, 33, 150] {
        let shifted: Vec<f64> = (0..200).map(|i| x[(i + shift) % 200]).collect();
        let s = extract_log_psd(&rec(vec![shifted], 200.0), 1, &bands).unwrap();
        for (u, v) in base.values.iter().zip(&s.values) {
            let (pu, pv) = (u.exp(), v.exp());
            if pu > 1e-9 {
                assert!(((pu - pv) / pu).abs() < 1e-6, "shift {shift}: {pu} vs {pv}");
            }
        }
    }
}

#[test]
fn hann_window_energy_anchor() {
    for n in [8, 200, 256] {
        let w = hann_periodic(n);
        let energy: f64 = w.iter().map(|v| v * v).sum();
        assert!((energy - 3.0 * n as f64 / 8.0).abs() < 1e-9);
        // Constant input: Parseval on the windowed frame recovers the same energy.
        let via_dft = dft_power(&w).iter().sum::<f64>() / n as f64;
        assert!((via_dft - energy).abs() < 1e-9);
    }
    let w = hann_periodic(4);
    assert!((w[0] - 0.0).abs() < 1e-15 && (w[2] - 1.0).abs() < 1e-15);
}

/// Unit-variance Gaussian process confined to `[lo, hi)`, built as a sum of
/// grid-frequency cosines with Gaussian amplitudes and scaled to unit sample
/// variance.
fn band_limited(lo: f64, hi: f64, fs: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let df = fs / n as f64;
    let k0 = (lo / df).ceil() as usize;
    let k1 = (hi / df).ceil() as usize;
    let mut x = vec![0.0; n];
    for k in k0..k1 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        for (i, v) in x.iter_mut().enumerate() {
            let ph = 2.0 * PI * (k * i % n) as f64 / n as f64;
            *v += a * ph.cos() + b * ph.sin();
        }
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean) / var.sqrt()).collect()
}

#[test]
fn unit_variance_band_noise_has_closed_form_entropy() {
    let expected = 0.5 * (2.0 * PI * E).ln();
    assert!((expected - 1.4189).abs() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let windows = 200;
    let x = band_limited(13.0, 30.0, 200.0, 200 * windows, &mut rng);
    let r = rec(vec![x], 200.0);
    let bands = BandSpec { bands: vec![(13.0, 30.0)] };
    for method in [DeMethod::BandFiltered, DeMethod::Spectral] {
        let de = extract_de(&r, windows, &bands, method).unwrap();
        let mean = de.values.values.iter().sum::<f64>() / windows as f64;
        assert!((mean - expected).abs() < 0.05, "{method:?}: {mean}");
        assert_eq!(de.floored, 0);
    }
}

#[test]
fn entropy_increases_with_in_band_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = band_limited(8.0, 13.0, 200.0, 2000, &mut rng);
    let bands = BandSpec::five_band();
    let mut prev: Option<DeOutput> = None;
    for scale in [0.5, 1.0, 1.5, 4.0] {
        let y: Vec<f64> = x.iter().map(|v| v * scale).collect();
        let de = extract_de(&rec(vec![y], 200.0), 10, &bands, DeMethod::BandFiltered).unwrap();
        if let Some(p) = &prev {
            for w in 0..10 {
                assert!(de.values.get(w, 0, 2) > p.values.get(w, 0, 2));
            }
        }
        prev = Some(de);
    }
}

#[test]
fn silent_channel_is_floored_and_flagged() {
    let r = rec(vec![vec![0.0; 400]], 200.0);
    for method in [DeMethod::BandFiltered, DeMethod::Spectral] {
        let de = extract_de(&r, 2, &BandSpec::five_band(), method).unwrap();
        assert_eq!(de.floored, 10);
        assert!(de.values.values.iter().all(|v| v.is_finite()));
    }
    let psd = extract_log_psd(&r, 2, &BandSpec::five_band()).unwrap();
    assert!(psd.values.iter().all(|&v| v == POWER_FLOOR.ln()));
}

#[test]
fn feature_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for (channels, bands, width) in [(62, BandSpec::five_band(), 620), (17, BandSpec::two_hz(25), 850)] {
        let r = rec((0..channels).map(|_| noise(1600, &mut rng)).collect(), 200.0);
        let (segments, _) = segment_features(&r, 8, &bands, DeMethod::BandFiltered).unwrap();
        assert_eq!(segments.len(), 1);
        assert_eq!(segments[0].features, width);
        assert_eq!(segments[0].to_tensor().shape(), &[8, width]);
    }
}

#[test]
fn feature_layout_is_channel_major_band_minor_psd_first() {
    let psd = BandValues {
        windows: 2,
        channels: 2,
        bands: 3,
        values: (0..12).map(|v| v as f64).collect(),
    };
    let de = BandValues {
        values: (100..112).map(|v| v as f64).collect(),
        ..psd.clone()
    };
    let t = build_feature_tensor(&psd, &de).unwrap();
    assert_eq!(t.row(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 100.0, 101.0, 102.0, 103.0, 104.0, 105.0]);
    assert_eq!(t.row(1)[0], 6.0);
    assert_eq!(t.row(1)[6], 106.0);
    let short = BandValues { windows: 1, values: vec![0.0; 6], ..psd.clone() };
    assert!(build_feature_tensor(&psd, &short).is_err());
}

#[test]
fn windows_partition_exactly() {
    let r = rec(vec![vec![1.0; 200 * 17 + 199]], 200.0);
    let (segments, _) = segment_features(&r, 8, &BandSpec::five_band(), DeMethod::Spectral).unwrap();
    assert_eq!(segments.len(), 2);
    assert!(segments.iter().all(|s| s.windows == 8));
    assert!(extract_log_psd(&rec(vec![vec![0.0; 399]], 200.0), 2, &BandSpec::five_band()).is_err());
    assert!(segment_features(&rec(vec![vec![0.0; 100]], 200.0), 1, &BandSpec::five_band(), DeMethod::Spectral).is_err());
}

#[test]
fn band_configuration_errors() {
    let r = rec(vec![vec![0.0; 400]], 200.0);
    let empty_bins = BandSpec { bands: vec![(10.2, 10.8)] };
    assert!(matches!(extract_log_psd(&r, 2, &empty_bins), Err(SignalError::InvalidConfig(_))));
    assert!(BandSpec { bands: vec![] }.validate(200.0).is_err());
    assert!(BandSpec { bands: vec![(5.0, 5.0)] }.validate(200.0).is_err());
    assert!(BandSpec { bands: vec![(5.0, 120.0)] }.validate(200.0).is_err());
    assert!(BandSpec::two_hz(25).validate(200.0).is_ok());
    let non_integral = RawRecording::new(vec![vec![0.0; 400]], 200.5).unwrap();
    assert!(extract_log_psd(&non_integral, 1, &BandSpec::five_band()).is_err());
}

#[test]
fn ftz_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for kind in [LabelKind::Class, LabelKind::Scalar] {
        let mut f = FtzFile::new(8, 10, kind);
        for i in 0..5 {
            let values = (0..80).map(|_| rng.random::<f32>() * 100.0 - 50.0).collect();
            let label = match kind {
                LabelKind::Class => Label::Class(i % 3),
                LabelKind::Scalar => Label::Scalar(rng.random()),
            };
            f.push(FtzSegment { values, label }).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ftz");
        write_ftz(&path, &f).unwrap();
        let back = read_ftz(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes().unwrap());
        for (a, b) in f.segments.iter().zip(&back.segments) {
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn ftz_rejects_corruption() {
    let mut f = FtzFile::new(2, 2, LabelKind::Class);
    f.push(FtzSegment { values: vec![1.0; 4], label: Label::Class(1) }).unwrap();
    assert!(f.push(FtzSegment { values: vec![1.0; 3], label: Label::Class(1) }).is_err());
    assert!(f.push(FtzSegment { values: vec![1.0; 4], label: Label::Scalar(0.5) }).is_err());
    let bytes = f.to_bytes().unwrap();
    assert!(FtzFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(FtzFile::from_bytes(&bad).is_err());
    let mut bad = bytes;
    bad[20] = 7;
    assert!(FtzFile::from_bytes(&bad).is_err());
}

#[test]
fn raw_binary_and_csv_readers() {
    let dir = tempfile::tempdir().unwrap();
    let r = rec(vec![vec![0.5, -1.25, 3.0], vec![2.0, 0.0, -0.75]], 250.0);
    let path = dir.path().join("r.bin");
    write_raw_binary(&path, &r).unwrap();
    let back = read_raw_binary(&path).unwrap();
    assert_eq!(back.channels, r.channels);
    assert_eq!(back.sample_rate, 250.0);
    assert_eq!(std::fs::read(&path).unwrap().len(), 16 + 4 * 6);

    let csv = dir.path().join("r.csv");
    std::fs::write(&csv, "Fp1,Fp2\n0.5,2\n-1.25,0\n3,-0.75\n").unwrap();
    let c = read_raw_csv(&csv, 250.0).unwrap();
    assert_eq!(c.channels, r.channels);
    assert_eq!(c.channel_names, vec!["Fp1", "Fp2"]);

    std::fs::write(&csv, "a,b\n1,2\n3,oops\n").unwrap();
    assert!(matches!(read_raw_csv(&csv, 250.0), Err(SignalError::Format(_))));
    std::fs::write(&csv, "a,b\n1,2\n3,inf\n").unwrap();
    assert!(matches!(read_raw_csv(&csv, 250.0), Err(SignalError::NonFinite { .. })));
    std::fs::write(&path, b"nope").unwrap();
    assert!(read_raw_binary(&path).is_err());
}
