//! DE and band-pass behaviour against analytic Gaussian and sinusoid results.

use std::f64::consts::{E, PI};

use pst_core::features::{bandpass, differential_entropy, extract_de, sample_variance, BandSet, RawRecording};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn sinusoid(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn gaussian_entropy_matches_closed_form() {
    let unit = 0.5 * (2.0 * PI * E).ln();
    assert!((unit - 1.41894).abs() < 1e-5);
    for seed in 0..5 {
        let x = gaussian(seed, 20000, 1.0);
        assert!((differential_entropy(&x) - unit).abs() < 0.02);
        let y = gaussian(seed + 100, 20000, 2.0);
        assert!((differential_entropy(&y) - unit - 2f64.ln()).abs() < 0.02);
    }
}

#[test]
fn scaling_law_holds_on_the_same_segment() {
    let x = gaussian(7, 20000, 1.0);
    let base = differential_entropy(&x);
    for a in [2.0, 10.0, 0.5, -3.0] {
        let scaled: Vec<f64> = x.iter().map(|v| a * v).collect();
        let diff = differential_entropy(&scaled) - base - f64::ln(f64::abs(a));
        assert!(diff.abs() < 1e-12, "a={a}: {diff}");
    }
}

#[test]
fn out_of_band_rejection_exceeds_60_db() {
    let fs = 200.0;
    for n in [200, 400, 1000] {
        for &(freq, low, high) in &[(10.0, 1.0, 4.0), (40.0, 8.0, 14.0), (3.0, 31.0, 51.0), (20.0, 4.0, 8.0)] {
            let x = sinusoid(freq, fs, n);
            let y = bandpass(&x, fs, low, high).unwrap();
            let db = 10.0 * (power(&x) / power(&y).max(1e-300)).log10();
            assert!(db >= 60.0, "{freq} Hz through [{low}, {high}] at n={n}: {db:.1} dB");
        }
    }
}

#[test]
fn in_band_power_preserved() {
    let x = sinusoid(10.0, 200.0, 400);
    let y = bandpass(&x, 200.0, 8.0, 14.0).unwrap();
    assert!((power(&y) / power(&x) - 1.0).abs() < 0.01);
}

#[test]
fn nine_second_recording_gives_nine_frames() {
    let fs = 200.0;
    let channels: Vec<String> = (0..4).map(|c| format!("C{c}")).collect();
    let samples: Vec<Vec<f64>> = (0..4).map(|c| gaussian(c, 9 * 200 + 150, 1.0)).collect();
    let rec = RawRecording::new(channels, samples, fs).unwrap();
    let frames = extract_de(&rec, &BandSet::default(), 1.0).unwrap();
    assert_eq!(frames.len(), 9);
    for (i, f) in frames.iter().enumerate() {
        assert_eq!((f.n_channels, f.n_bands, f.slice_index), (4, 5, i));
        assert!(f.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn white_noise_entropy_follows_bandwidth() {
    let rec = RawRecording::new(vec!["C0".into()], vec![gaussian(3, 24000, 1.0)], 200.0).unwrap();
    let bands = BandSet::default();
    let frames = extract_de(&rec, &bands, 120.0).unwrap();
    let mut by_width: Vec<(f64, f64)> = bands
        .bands()
        .iter()
        .enumerate()
        .map(|(i, b)| (b.high_hz - b.low_hz, frames[0].get(0, i)))
        .collect();
    by_width.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(by_width.windows(2).all(|w| w[0].1 < w[1].1), "{by_width:?}");
}

#[test]
fn empty_recording_gives_no_frames() {
    let rec = RawRecording::new(vec![], vec![], 200.0).unwrap();
    assert!(extract_de(&rec, &BandSet::default(), 1.0).unwrap().is_empty());
}

proptest! {
    #[test]
    fn entropy_ignores_offset(seed in any::<u64>(), shift in -1e3f64..1e3) {
        let x = gaussian(seed, 256, 1.0);
        let y: Vec<f64> = x.iter().map(|v| v + shift).collect();
        prop_assert!((differential_entropy(&x) - differential_entropy(&y)).abs() < 1e-9);
    }

    #[test]
    fn bandpass_is_idempotent(seed in any::<u64>(), band in 0usize..5) {
        let bands = BandSet::default();
        let b = &bands.bands()[band];
        let x = gaussian(seed, 400, 1.0);
        let once = bandpass(&x, 200.0, b.low_hz, b.high_hz).unwrap();
        let twice = bandpass(&once, 200.0, b.low_hz, b.high_hz).unwrap();
        let rms = (once.iter().zip(&twice).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 400.0).sqrt();
        prop_assert!(rms < 1e-9);
    }

    #[test]
    fn frame_count_is_floor(n in 0usize..2000, slice in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let rec = RawRecording::new(vec!["C0".into()], vec![vec![0.5; n]], 200.0).unwrap();
        let want = (n as f64 / (slice * 200.0)).floor() as usize;
        match extract_de(&rec, &BandSet::default(), slice) {
            Ok(frames) => prop_assert_eq!(frames.len(), want),
            Err(_) => prop_assert!(want == 0 && n > 0),
        }
    }

    #[test]
    fn variance_is_nonnegative(x in prop::collection::vec(-1e6f64..1e6, 0..50)) {
        prop_assert!(sample_variance(&x) >= 0.0);
        prop_assert!(differential_entropy(&x).is_finite());
    }
}
