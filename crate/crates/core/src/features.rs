//! Per-band differential-entropy (DE) features from raw multichannel EEG.

use std::f64::consts::{E, PI};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Variance floor applied before the logarithm so silent channels stay finite.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Multichannel signal, one row of samples per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    channels: Vec<String>,
    samples: Vec<Vec<f64>>,
    sample_rate: f64,
}

impl RawRecording {
    pub fn new(channels: Vec<String>, samples: Vec<Vec<f64>>, sample_rate: f64) -> Result<Self> {
        if channels.len() != samples.len() {
            return Err(Error::Count {
                what: "channel rows",
                expected: channels.len(),
                actual: samples.len(),
            });
        }
        if let Some(first) = samples.first() {
            if let Some(bad) = samples.iter().find(|r| r.len() != first.len()) {
                return Err(Error::Count {
                    what: "samples per channel",
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            channels,
            samples,
            sample_rate,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

/// Ordered set of frequency bands forming the spectral axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet(Vec<Band>);

impl BandSet {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Empty("band set"));
        }
        for b in &bands {
            if !(b.low_hz > 0.0 && b.low_hz < b.high_hz) {
                return Err(Error::Config(format!(
                    "band {} [{}, {}] Hz is degenerate",
                    b.name, b.low_hz, b.high_hz
                )));
            }
        }
        Ok(Self(bands))
    }

    pub fn bands(&self) -> &[Band] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_high_hz(&self) -> f64 {
        self.0.iter().map(|b| b.high_hz).fold(0.0, f64::max)
    }
}

impl Default for BandSet {
    /// δ, θ, α, β, γ.
    fn default() -> Self {
        let b = |name: &str, low_hz, high_hz| Band {
            name: name.to_string(),
            low_hz,
            high_hz,
        };
        Self(vec![
            b("delta", 1.0, 4.0),
            b("theta", 4.0, 8.0),
            b("alpha", 8.0, 14.0),
            b("beta", 14.0, 31.0),
            b("gamma", 31.0, 51.0),
        ])
    }
}

/// DE values of one time slice, `C × S` row-major (channel-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DeFeatureFrame {
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub n_bands: usize,
    pub slice_index: usize,
    pub slice_length_s: f64,
}

impl DeFeatureFrame {
    pub fn get(&self, channel: usize, band: usize) -> f64 {
        self.values[channel * self.n_bands + band]
    }

    /// Values of one band across all channels.
    pub fn band_column(&self, band: usize) -> Vec<f64> {
        (0..self.n_channels).map(|c| self.get(c, band)).collect()
    }
}

/// FFT brick-wall band-pass for a fixed signal length, reusable across calls.
pub struct BandpassFilter {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    len: usize,
}

impl BandpassFilter {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// Zeroes every bin whose frequency (mirrored for the negative half)
    /// lies outside `[low, high]`, then transforms back.
    pub fn apply(&self, signal: &[f64], sample_rate: f64, low: f64, high: f64) -> Result<Vec<f64>> {
        check_band(sample_rate, low, high)?;
        assert_eq!(signal.len(), self.len, "filter planned for a different length");
        let n = self.len;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut buf);
        let df = sample_rate / n as f64;
        for (k, bin) in buf.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * df;
            if f < low || f > high {
                *bin = Complex64::new(0.0, 0.0);
            }
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        Ok(buf.iter().map(|c| c.re * scale).collect())
    }
}

fn check_band(sample_rate: f64, low: f64, high: f64) -> Result<()> {
    if low > 0.0 && low < high && high < sample_rate / 2.0 {
        Ok(())
    } else {
        Err(Error::Band {
            low,
            high,
            sample_rate,
        })
    }
}

/// One-shot band-pass of `signal` to `[low, high]` Hz.
pub fn bandpass(signal: &[f64], sample_rate: f64, low: f64, high: f64) -> Result<Vec<f64>> {
    BandpassFilter::new(signal.len()).apply(signal, sample_rate, low, high)
}

/// Unbiased (n − 1) sample variance; 0 for fewer than two samples.
pub fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// Gaussian differential entropy `½·ln(2πe·σ²)` of a segment.
pub fn differential_entropy(segment: &[f64]) -> f64 {
    let var = sample_variance(segment).max(VARIANCE_FLOOR);
    0.5 * (2.0 * PI * E * var).ln()
}

/// Cuts `recording` into consecutive non-overlapping slices of
/// `slice_length_s` seconds (a trailing partial slice is dropped) and
/// computes the DE of every channel in every band for each slice.
pub fn extract_de(
    recording: &RawRecording,
    bands: &BandSet,
    slice_length_s: f64,
) -> Result<Vec<DeFeatureFrame>> {
    let n = recording.n_samples();
    if n == 0 || recording.channels().is_empty() {
        return Ok(Vec::new());
    }
    let fs = recording.sample_rate();
    for b in bands.bands() {
        check_band(fs, b.low_hz, b.high_hz)?;
    }
    let slice_len = (slice_length_s * fs).round() as usize;
    if slice_len < 2 {
        return Err(Error::Config(format!(
            "slice of {slice_length_s} s at {fs} Hz has fewer than 2 samples"
        )));
    }
    if n < slice_len {
        return Err(Error::TooShort {
            samples: n,
            needed: slice_len,
        });
    }
    let filter = BandpassFilter::new(slice_len);
    let n_ch = recording.channels().len();
    let n_bands = bands.len();
    let mut frames = Vec::with_capacity(n / slice_len);
    for slice in 0..n / slice_len {
        let mut values = Vec::with_capacity(n_ch * n_bands);
        for row in recording.samples() {
            let seg = &row[slice * slice_len..(slice + 1) * slice_len];
            for b in bands.bands() {
                let filtered = filter.apply(seg, fs, b.low_hz, b.high_hz)?;
                values.push(differential_entropy(&filtered));
            }
        }
        frames.push(DeFeatureFrame {
            values,
            n_channels: n_ch,
            n_bands,
            slice_index: slice,
            slice_length_s,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoid(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn alpha_band_passes_10hz() {
        let x = sinusoid(10.0, 200.0, 200, 1.0);
        let y = bandpass(&x, 200.0, 8.0, 14.0).unwrap();
        let (vx, vy) = (sample_variance(&x), sample_variance(&y));
        assert!((vy / vx - 1.0).abs() < 0.01);
    }

    #[test]
    fn delta_band_rejects_10hz() {
        let x = sinusoid(10.0, 200.0, 200, 1.0);
        let y = bandpass(&x, 200.0, 1.0, 4.0).unwrap();
        assert!(sample_variance(&y) < 1e-6 * sample_variance(&x));
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&[0.0; 64], 128.0, 4.0, 8.0).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nyquist_violations_rejected() {
        let x = [0.0; 16];
        assert!(bandpass(&x, 100.0, 31.0, 51.0).is_err());
        assert!(bandpass(&x, 200.0, 0.0, 4.0).is_err());
        assert!(bandpass(&x, 200.0, 8.0, 8.0).is_err());
    }

    #[test]
    fn unit_variance_entropy() {
        // ±1 alternating: unbiased variance n/(n-1); build exact unit variance instead
        let n = 1000;
        let raw: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let scale = ((n - 1) as f64 / n as f64).sqrt();
        let x: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        assert!((sample_variance(&x) - 1.0).abs() < 1e-12);
        assert!((differential_entropy(&x) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn scaling_adds_log_factor() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 7919) % 101) as f64 / 17.0).collect();
        for a in [2.0, 10.0, 0.5, -3.0] {
            let y: Vec<f64> = x.iter().map(|v| a * v).collect();
            let delta = differential_entropy(&y) - differential_entropy(&x);
            assert!((delta - f64::ln(f64::abs(a))).abs() < 1e-12, "a={a}");
        }
    }

    #[test]
    fn entropy_ignores_mean() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        assert!((differential_entropy(&x) - differential_entropy(&y)).abs() < 1e-9);
    }

    #[test]
    fn constant_signal_hits_variance_floor() {
        let floor = 0.5 * (2.0 * PI * E * VARIANCE_FLOOR).ln();
        assert_eq!(differential_entropy(&[3.0; 10]), floor);
        let rec = RawRecording::new(vec!["A".into()], vec![vec![5.0; 400]], 200.0).unwrap();
        let frames = extract_de(&rec, &BandSet::default(), 1.0).unwrap();
        assert_eq!(frames.len(), 2);
        for f in &frames {
            assert!(f.values.iter().all(|&v| (v - floor).abs() < 1e-9));
        }
    }

    #[test]
    fn frame_count_floors_partial_slice() {
        let rec = RawRecording::new(
            vec!["A".into(), "B".into()],
            vec![vec![0.0; 9 * 200 + 150], vec![1.0; 9 * 200 + 150]],
            200.0,
        )
        .unwrap();
        let frames = extract_de(&rec, &BandSet::default(), 1.0).unwrap();
        assert_eq!(frames.len(), 9);
        assert!(frames.iter().all(|f| f.n_channels == 2 && f.n_bands == 5));
        assert_eq!(frames[8].slice_index, 8);
    }

    #[test]
    fn short_and_empty_recordings() {
        let rec = RawRecording::new(vec!["A".into()], vec![vec![0.0; 150]], 200.0).unwrap();
        assert!(matches!(
            extract_de(&rec, &BandSet::default(), 1.0),
            Err(Error::TooShort { samples: 150, needed: 200 })
        ));
        let empty = RawRecording::new(vec!["A".into()], vec![vec![]], 200.0).unwrap();
        assert!(extract_de(&empty, &BandSet::default(), 1.0).unwrap().is_empty());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(RawRecording::new(vec!["A".into(), "B".into()], vec![vec![0.0; 3], vec![0.0; 4]], 10.0).is_err());
        assert!(RawRecording::new(vec!["A".into()], vec![vec![0.0; 3]], 0.0).is_err());
    }

    #[test]
    fn default_bands() {
        let b = BandSet::default();
        assert_eq!(b.len(), 5);
        assert_eq!(b.max_high_hz(), 51.0);
        assert!(BandSet::new(vec![Band { name: "x".into(), low_hz: 5.0, high_hz: 2.0 }]).is_err());
    }
}
