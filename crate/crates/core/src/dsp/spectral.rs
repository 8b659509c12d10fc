use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ingest::Window;
use crate::{Class, Error, Result};

/// Number of spectral magnitudes in a feature vector.
pub const FEATURE_LEN: usize = 100;

/// RMS block length.
pub const RMS_BLOCK_MS: f64 = 10.0;

/// First 100 one-sided spectral magnitudes (1..=100 Hz for a 1 s window) of
/// one sensor's window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub sensor_index: usize,
    pub start_s: f64,
}

/// Cached forward transform for one window length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    len: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumAnalyzer").field("len", &self.len).finish()
    }
}

impl SpectrumAnalyzer {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        Self { len, fft }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// One-sided amplitude spectrum `|DFT(x - mean)| * 2/N` for bins
    /// `1..=N/2`.
    pub fn magnitudes(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != self.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                actual: samples.len(),
            });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let n = self.len;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<Complex<f64>> = samples
            .iter()
            .map(|v| Complex::new(v - mean, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let scale = 2.0 / n as f64;
        Ok(buf[1..=n / 2].iter().map(|c| c.norm() * scale).collect())
    }
}

/// One-sided amplitude spectrum of a mean-removed window; see
/// [`SpectrumAnalyzer::magnitudes`].
pub fn fft_mag(samples: &[f64]) -> Result<Vec<f64>> {
    SpectrumAnalyzer::new(samples.len()).magnitudes(samples)
}

/// Signal energy `sum x^2` recovered from one-sided magnitudes of an
/// `n`-sample window. Bins below Nyquist stand for a conjugate pair; the
/// Nyquist bin of an even-length window stands alone.
pub fn spectral_energy(magnitudes: &[f64], n: usize) -> f64 {
    let nf = n as f64;
    magnitudes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let k = i + 1;
            if n.is_multiple_of(2) && k == n / 2 {
                nf * a * a / 4.0
            } else {
                nf * a * a / 2.0
            }
        })
        .sum()
}

/// Feature vector of a 1 s window: bins 1..=100 of [`fft_mag`].
pub fn feature_fft100(window: &Window) -> Result<FeatureVector> {
    feature_fft100_with(&SpectrumAnalyzer::new(window.samples.len()), window)
}

/// [`feature_fft100`] reusing a prepared analyzer.
pub fn feature_fft100_with(analyzer: &SpectrumAnalyzer, window: &Window) -> Result<FeatureVector> {
    let n = window.samples.len();
    if n != window.sample_rate_hz as usize {
        return Err(Error::InvalidConfig(format!(
            "feature window must span 1 s ({} samples), got {n}",
            window.sample_rate_hz
        )));
    }
    if n / 2 < FEATURE_LEN {
        return Err(Error::InvalidConfig(format!(
            "{} Hz sampling leaves fewer than {FEATURE_LEN} spectral bins",
            window.sample_rate_hz
        )));
    }
    let mut mags = analyzer.magnitudes(&window.samples)?;
    mags.truncate(FEATURE_LEN);
    Ok(FeatureVector {
        values: mags,
        sensor_index: window.sensor_index,
        start_s: window.start_s,
    })
}

/// Zero crossings per second of a mean-removed window.
pub fn zero_crossing_rate(samples: &[f64], sample_rate_hz: u32) -> f64 {
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let crossings = samples
        .windows(2)
        .filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0)
        .count();
    crossings as f64 * sample_rate_hz as f64 / samples.len() as f64
}

/// Energy of consecutive blocks of `block` samples.
pub fn time_energy(samples: &[f64], block: usize) -> Vec<f64> {
    if block == 0 {
        return Vec::new();
    }
    samples
        .chunks_exact(block)
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect()
}

/// Per-10 ms RMS envelope of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsSeries {
    pub sensor_index: usize,
    pub values: Vec<f64>,
    pub window_ms: f64,
}

/// Samples per RMS block at `sample_rate_hz`.
pub fn rms_block_len(sample_rate_hz: u32) -> usize {
    ((RMS_BLOCK_MS / 1000.0) * sample_rate_hz as f64).round().max(1.0) as usize
}

/// RMS over consecutive 10 ms blocks; a trailing partial block is dropped.
pub fn rms_series(samples: &[f64], sample_rate_hz: u32) -> Result<RmsSeries> {
    if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let block = rms_block_len(sample_rate_hz);
    if samples.len() < block {
        return Err(Error::InsufficientData(format!(
            "channel of {} samples is shorter than one {block}-sample RMS block",
            samples.len()
        )));
    }
    let values = samples
        .chunks_exact(block)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / block as f64).sqrt())
        .collect();
    Ok(RmsSeries {
        sensor_index: 0,
        values,
        window_ms: RMS_BLOCK_MS,
    })
}

/// First-order exponential smoother `y[k] = a*x[k] + (1-a)*y[k-1]`,
/// `y[0] = x[0]`.
pub fn lowpass(series: &RmsSeries, alpha: f64) -> Result<RmsSeries> {
    Ok(RmsSeries {
        sensor_index: series.sensor_index,
        values: lowpass_values(&series.values, alpha)?,
        window_ms: series.window_ms,
    })
}

pub fn lowpass_values(values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing factor must lie in (0, 1], got {alpha}"
        )));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut prev = None;
    for &x in values {
        let y = match prev {
            None => x,
            Some(p) => alpha * x + (1.0 - alpha) * p,
        };
        out.push(y);
        prev = Some(y);
    }
    Ok(out)
}

/// Per-bin mean and sample standard deviation of one class's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStats {
    pub class: Class,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Spectrum statistics for every class present, Excavator first.
pub fn spectrum_stats(features: &[(FeatureVector, Class)]) -> Result<Vec<SpectrumStats>> {
    let mut out = Vec::new();
    for class in [Class::Excavator, Class::Other] {
        let rows: Vec<&[f64]> = features
            .iter()
            .filter(|(_, c)| *c == class)
            .map(|(f, _)| f.values.as_slice())
            .collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {class:?} has {} sample; statistics need at least 2",
                rows.len()
            )));
        }
        let dims = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dims];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
        out.push(SpectrumStats {
            class,
            count: rows.len(),
            mean,
            std,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn window(samples: Vec<f64>, rate: u32) -> Window {
        Window {
            sensor_index: 3,
            start_s: 5.0,
            sample_rate_hz: rate,
            samples,
        }
    }

    fn tone(freq: f64, amp: f64, rate: u32, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn constant_window_has_no_spectrum() {
        let m = fft_mag(&vec![3.5; 256]).unwrap();
        assert_eq!(m.len(), 128);
        assert!(m.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tone_reads_its_amplitude() {
        let m = fft_mag(&tone(10.0, 1.7, 2000, 2000)).unwrap();
        assert!((m[9] - 1.7).abs() < 1e-9);
        for (i, v) in m.iter().enumerate() {
            if i != 9 {
                assert!(v.abs() < 1e-9, "bin {} = {v}", i + 1);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(
            fft_mag(&[0.0, f64::INFINITY, 1.0]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn feature_vector_band() {
        let f = feature_fft100(&window(vec![0.0; 2000], 2000)).unwrap();
        assert_eq!(f.values.len(), FEATURE_LEN);
        assert!(f.values.iter().all(|v| *v == 0.0));
        assert_eq!((f.sensor_index, f.start_s), (3, 5.0));

        let f = feature_fft100(&window(tone(50.0, 0.8, 2000, 2000), 2000)).unwrap();
        assert!((f.values[49] - 0.8).abs() < 1e-9);
        assert!(f
            .values
            .iter()
            .enumerate()
            .all(|(i, v)| i == 49 || v.abs() < 1e-9));

        let f = feature_fft100(&window(tone(500.0, 2.0, 2000, 2000), 2000)).unwrap();
        assert!(f.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn feature_needs_one_second_window() {
        assert!(feature_fft100(&window(vec![0.0; 1000], 2000)).is_err());
        assert!(feature_fft100(&window(vec![0.0; 150], 150)).is_err());
    }

    #[test]
    fn zero_crossings_of_tone() {
        let z = zero_crossing_rate(&tone(10.25, 1.0, 2000, 2000), 2000);
        assert!((z - 20.0).abs() <= 1.0, "{z}");
        assert_eq!(time_energy(&[1.0, 1.0, 2.0, 0.0, 5.0], 2), vec![2.0, 4.0]);
    }

    #[test]
    fn rms_of_constant_and_zero() {
        let r = rms_series(&vec![-2.0; 100], 2000).unwrap();
        assert_eq!(r.values, vec![2.0; 5]);
        let r = rms_series(&vec![0.0; 45], 2000).unwrap();
        assert_eq!(r.values, vec![0.0; 2]);
        assert!(rms_series(&[1.0; 19], 2000).is_err());
    }

    #[test]
    fn rms_of_full_period_sinusoid() {
        // 200 Hz at 2 kHz: exactly two periods per 20-sample block.
        let x = tone(200.0, 1.3, 2000, 400);
        let direct = (x[..20].iter().map(|v| v * v).sum::<f64>() / 20.0).sqrt();
        let r = rms_series(&x, 2000).unwrap();
        for v in r.values {
            assert!((v - 1.3 / 2f64.sqrt()).abs() < 1e-6);
            assert!((v - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn lowpass_cases() {
        let x = vec![0.3, 1.0, -2.0, 4.0];
        assert_eq!(lowpass_values(&x, 1.0).unwrap(), x);
        assert_eq!(lowpass_values(&[2.0; 6], 0.3).unwrap(), vec![2.0; 6]);
        let step = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let y = lowpass_values(&step, 0.5).unwrap();
        for k in 0..4 {
            assert!((y[k + 2] - (1.0 - 0.5f64.powi(k as i32 + 1))).abs() < 1e-15);
        }
        assert!(lowpass_values(&x, 0.0).is_err());
        assert!(lowpass_values(&x, 1.5).is_err());
    }

    #[test]
    fn spectrum_stats_arithmetic() {
        let fv = |v: f64| FeatureVector {
            values: vec![v; 3],
            sensor_index: 0,
            start_s: 0.0,
        };
        let stats = spectrum_stats(&[(fv(0.0), Class::Other), (fv(2.0), Class::Other)]).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].mean, vec![1.0; 3]);
        for s in &stats[0].std {
            assert!((s - 2f64.sqrt()).abs() < 1e-15);
        }
        let same = spectrum_stats(&[(fv(1.5), Class::Excavator), (fv(1.5), Class::Excavator)]).unwrap();
        assert_eq!(same[0].std, vec![0.0; 3]);
        assert!(spectrum_stats(&[(fv(1.0), Class::Excavator)]).is_err());
    }
}
