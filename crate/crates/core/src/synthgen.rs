//! Labeled synthetic DAS scenes.
//!
//! Each source produces one unit-scale signature time series which is scaled
//! by [`attenuate`] for every virtual sensor and summed with white Gaussian
//! noise. Signatures:
//!
//! * excavator: bucket impacts repeating at 0.5–2 Hz, each a damped sinusoid
//!   at 20–60 Hz, over a continuous diesel-engine tone (25–45 Hz plus its
//!   second harmonic);
//! * highway: Gaussian noise band-limited to 5–50 Hz with slow traffic-density
//!   modulation;
//! * walking: light footfall impulses at 1.5–2.5 Hz, 8–20 Hz carrier.
//!
//! Every random draw comes from a ChaCha stream keyed by (seed, source index)
//! or (seed, channel index), so the output does not depend on thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ingest::{LabelCell, LabelMask, RawTrace};
use crate::{Error, Result, SourceKind};

/// Distance floor of the geometric spreading term, metres.
pub const ATTENUATION_FLOOR_M: f64 = 1.0;

/// Stream offset separating source RNG streams from channel noise streams.
const SOURCE_STREAM_BASE: u64 = 1 << 40;

/// One acoustic source in a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Position along the fiber.
    pub position_m: f64,
    pub start_s: f64,
    pub end_s: f64,
    /// Peak pressure at 1 m.
    pub amplitude: f64,
    /// Perpendicular distance from the fiber.
    #[serde(default)]
    pub offset_m: f64,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, position_m: f64, start_s: f64, end_s: f64, amplitude: f64) -> Self {
        Self {
            kind,
            position_m,
            start_s,
            end_s,
            amplitude,
            offset_m: 0.0,
        }
    }

    pub fn with_offset(mut self, offset_m: f64) -> Self {
        self.offset_m = offset_m;
        self
    }

    /// Highest frequency with significant energy in this kind's signature.
    pub fn top_frequency_hz(&self) -> f64 {
        match self.kind {
            SourceKind::Excavator => 100.0,
            SourceKind::Highway => 50.0,
            SourceKind::Walking => 40.0,
            SourceKind::None => 0.0,
        }
    }

    /// True if the source is emitting at any time in `[t0, t1)`.
    pub fn active_in(&self, t0: f64, t1: f64) -> bool {
        self.start_s < t1 && self.end_s > t0
    }

    /// Distance from the source to a point on the fiber.
    pub fn distance_to(&self, fiber_position_m: f64) -> f64 {
        (fiber_position_m - self.position_m).hypot(self.offset_m)
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("source {idx}: {msg}")));
        if !(self.start_s < self.end_s) {
            return bad("start_s must precede end_s");
        }
        if !(self.position_m >= 0.0) {
            return bad("position_m must be non-negative");
        }
        if !(self.amplitude >= 0.0) {
            return bad("amplitude must be non-negative");
        }
        if !(self.offset_m >= 0.0) {
            return bad("offset_m must be non-negative");
        }
        Ok(())
    }
}

fn default_spacing() -> f64 {
    4.0
}

fn default_rate() -> u32 {
    2000
}

fn default_alpha() -> f64 {
    0.15
}

/// Scene description; the JSON form mirrors these fields one-to-one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub sensor_count: usize,
    #[serde(default = "default_spacing")]
    pub sensor_spacing_m: f64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_alpha")]
    pub attenuation_alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// Labeling threshold on attenuated amplitude; `3 * noise_std` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_threshold: Option<f64>,
}

impl SceneConfig {
    pub fn new(sensor_count: usize, duration_s: f64) -> Self {
        Self {
            sensor_count,
            sensor_spacing_m: default_spacing(),
            sample_rate_hz: default_rate(),
            duration_s,
            sources: Vec::new(),
            noise_std: 0.0,
            attenuation_alpha: default_alpha(),
            seed: 0,
            label_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_count == 0 {
            return Err(Error::InvalidConfig("sensor_count must be at least 1".into()));
        }
        if !(self.sensor_spacing_m > 0.0) {
            return Err(Error::InvalidConfig("sensor_spacing_m must be positive".into()));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::InvalidConfig("duration_s must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("noise_std must be non-negative".into()));
        }
        if !(self.attenuation_alpha >= 0.0) {
            return Err(Error::InvalidConfig("attenuation_alpha must be non-negative".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            s.validate(i)?;
        }
        let top_hz = self
            .sources
            .iter()
            .map(SourceSpec::top_frequency_hz)
            .fold(0.0, f64::max);
        if (self.sample_rate_hz as f64) < 2.0 * top_hz {
            return Err(Error::Aliasing {
                sample_rate_hz: self.sample_rate_hz,
                top_hz,
            });
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn seconds(&self) -> usize {
        self.duration_s.ceil() as usize
    }

    pub fn sensor_position_m(&self, sensor: usize) -> f64 {
        sensor as f64 * self.sensor_spacing_m
    }

    pub fn effective_label_threshold(&self) -> f64 {
        self.label_threshold
            .unwrap_or(3.0 * self.noise_std)
            .max(f64::MIN_POSITIVE)
    }

    /// Attenuated peak amplitude of `source` at `sensor`.
    pub fn amplitude_at(&self, source: &SourceSpec, sensor: usize) -> f64 {
        attenuate(
            source.amplitude,
            source.distance_to(self.sensor_position_m(sensor)),
            self.attenuation_alpha,
        )
    }
}

/// Amplitude after propagating `distance_m`: exponential absorption times
/// geometric spreading, with spreading floored at 1 m.
pub fn attenuate(amplitude: f64, distance_m: f64, alpha: f64) -> f64 {
    amplitude * (-alpha * distance_m).exp() / distance_m.max(ATTENUATION_FLOOR_M).sqrt()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Adds a damped sinusoid starting at sample `at` into `buf`.
fn add_damped(buf: &mut [f64], at: usize, rate: f64, freq: f64, tau: f64, amp: f64, phase: f64) {
    let len = ((6.0 * tau) * rate) as usize;
    for (k, v) in buf.iter_mut().skip(at).take(len).enumerate() {
        let t = k as f64 / rate;
        *v += amp * (-t / tau).exp() * (2.0 * PI * freq * t + phase).sin();
    }
}

fn impulse_train(
    rng: &mut ChaCha8Rng,
    buf: &mut [f64],
    rate: f64,
    rep_hz: f64,
    carrier: (f64, f64),
    tau: f64,
) {
    let n = buf.len();
    let period = 1.0 / rep_hz;
    let mut t = rng.gen_range(0.0..period);
    while ((t * rate) as usize) < n {
        let freq = rng.gen_range(carrier.0..carrier.1);
        let amp = rng.gen_range(0.7..1.0);
        let phase = rng.gen_range(0.0..2.0 * PI);
        add_damped(buf, (t * rate) as usize, rate, freq, tau, amp, phase);
        t += period * rng.gen_range(0.9..1.1);
    }
}

fn excavator_signature(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let mut buf = vec![0.0; n];
    let rep_hz = rng.gen_range(0.5..2.0);
    let center = rng.gen_range(25.0..55.0);
    impulse_train(rng, &mut buf, rate, rep_hz, (center - 5.0, center + 5.0), 0.06);
    let engine_hz: f64 = rng.gen_range(25.0..45.0);
    let ph1 = rng.gen_range(0.0..2.0 * PI);
    let ph2 = rng.gen_range(0.0..2.0 * PI);
    let wobble_hz = rng.gen_range(0.05..0.2);
    for (k, v) in buf.iter_mut().enumerate() {
        let t = k as f64 / rate;
        let load = 1.0 + 0.2 * (2.0 * PI * wobble_hz * t).sin();
        *v += 0.3
            * load
            * ((2.0 * PI * engine_hz * t + ph1).sin() + 0.5 * (4.0 * PI * engine_hz * t + ph2).sin());
    }
    buf
}

fn walking_signature(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let mut buf = vec![0.0; n];
    let step_hz = rng.gen_range(1.5..2.5);
    impulse_train(rng, &mut buf, rate, step_hz, (8.0, 20.0), 0.03);
    buf
}

fn highway_signature(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut spec: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut spec);
    for (k, c) in spec.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64;
        let f = bin * rate / n as f64;
        if !(5.0..=50.0).contains(&f) {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let density_hz = rng.gen_range(0.02..0.1);
    let ph = rng.gen_range(0.0..2.0 * PI);
    if rms > 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            let t = k as f64 / rate;
            let density = 0.8 + 0.2 * (2.0 * PI * density_hz * t + ph).sin();
            // Unit peak corresponds to roughly 3 sigma of the band noise.
            *v *= density * 0.35 / rms;
        }
    }
    out
}

/// Unit-scale signature of one source over its active span, with the first
/// sample index it occupies in the trace.
fn source_signature(config: &SceneConfig, idx: usize) -> (usize, Vec<f64>) {
    let src = &config.sources[idx];
    let rate = config.sample_rate_hz as f64;
    let total = config.sample_count();
    let first = ((src.start_s.max(0.0) * rate).round() as usize).min(total);
    let last = ((src.end_s.min(config.duration_s) * rate).round() as usize).min(total);
    let n = last.saturating_sub(first);
    let mut rng = stream_rng(config.seed, SOURCE_STREAM_BASE + idx as u64);
    let sig = match src.kind {
        SourceKind::Excavator => excavator_signature(&mut rng, n, rate),
        SourceKind::Highway => highway_signature(&mut rng, n, rate),
        SourceKind::Walking => walking_signature(&mut rng, n, rate),
        SourceKind::None => vec![0.0; n],
    };
    (first, sig)
}

/// Synthesizes the scene's raw trace. Deterministic for a fixed config.
pub fn synth_scene(config: &SceneConfig) -> Result<RawTrace> {
    config.validate()?;
    let n = config.sample_count();
    let sensors = config.sensor_count;
    let signatures: Vec<(usize, Vec<f64>)> = (0..config.sources.len())
        .into_par_iter()
        .map(|i| source_signature(config, i))
        .collect();

    let columns: Vec<Vec<f32>> = (0..sensors)
        .into_par_iter()
        .map(|sensor| {
            let mut col = vec![0.0f64; n];
            for (src, (first, sig)) in config.sources.iter().zip(&signatures) {
                let gain = config.amplitude_at(src, sensor);
                if gain == 0.0 {
                    continue;
                }
                for (c, s) in col[*first..].iter_mut().zip(sig) {
                    *c += gain * s;
                }
            }
            if config.noise_std > 0.0 {
                let mut rng = stream_rng(config.seed, sensor as u64);
                for c in col.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *c += config.noise_std * z;
                }
            }
            col.into_iter().map(|v| v as f32).collect()
        })
        .collect();

    let mut samples = vec![0.0f32; n * sensors];
    for (sensor, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            samples[t * sensors + sensor] = *v;
        }
    }
    RawTrace::new(sensors, config.sample_rate_hz, samples)
}

/// Ground-truth label grid: each (sensor, second) cell carries the active
/// source with the largest attenuated amplitude, provided that amplitude
/// reaches the labeling threshold.
pub fn label_grid(config: &SceneConfig) -> Result<LabelMask> {
    config.validate()?;
    let seconds = config.seconds();
    let threshold = config.effective_label_threshold();
    let mut mask = LabelMask::empty(config.sensor_count, seconds);
    for sensor in 0..config.sensor_count {
        for second in 0..seconds {
            let t0 = second as f64;
            let best = config
                .sources
                .iter()
                .enumerate()
                .filter(|(_, s)| s.kind != SourceKind::None && s.active_in(t0, t0 + 1.0))
                .map(|(i, s)| (i, s, config.amplitude_at(s, sensor)))
                .filter(|(_, _, a)| *a >= threshold)
                .fold(None::<(usize, &SourceSpec, f64)>, |acc, cur| match acc {
                    Some(a) if a.2 >= cur.2 => Some(a),
                    _ => Some(cur),
                });
            if let Some((i, s, _)) = best {
                mask.set(
                    sensor,
                    second,
                    LabelCell {
                        kind: s.kind,
                        source_id: Some(i),
                    },
                );
            }
        }
    }
    Ok(mask)
}

/// Largest fiber distance at which `source` still reaches `threshold`, found
/// by bisection on the monotone attenuation curve.
pub fn label_radius_m(source: &SourceSpec, alpha: f64, threshold: f64) -> f64 {
    if attenuate(source.amplitude, 0.0, alpha) < threshold {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while attenuate(source.amplitude, hi, alpha) >= threshold && hi < 1e9 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if attenuate(source.amplitude, mid, alpha) >= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
