//! Trace storage: the DAS1 binary format, the JSON-lines label sidecar and
//! per-sensor windowing.
//!
//! DAS1 layout (all integers little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | ASCII `"DAS1"`             |
//! | 4      | 4    | `u32` version (= 1)        |
//! | 8      | 4    | `u32` sensor count         |
//! | 12     | 4    | `u32` sample rate [Hz]     |
//! | 16     | 8    | `u64` sample count         |
//! | 24     | ...  | `f32` samples, time-major  |

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SourceKind};

pub const DAS1_MAGIC: [u8; 4] = *b"DAS1";
pub const DAS1_VERSION: u32 = 1;
pub const DAS1_HEADER_LEN: usize = 24;

/// Time-major matrix of acoustic samples, one column per virtual sensor.
///
/// Samples are held as `f32`, the on-disk precision, so a trace survives a
/// write/read cycle unchanged. Computation widens to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    sensor_count: usize,
    sample_rate_hz: u32,
    samples: Vec<f32>,
}

impl RawTrace {
    pub fn new(sensor_count: usize, sample_rate_hz: u32, samples: Vec<f32>) -> Result<Self> {
        if sensor_count == 0 {
            return Err(Error::InvalidConfig("sensor_count must be at least 1".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        if !samples.len().is_multiple_of(sensor_count) {
            return Err(Error::DimensionMismatch {
                expected: (samples.len() / sensor_count + 1) * sensor_count,
                actual: samples.len(),
            });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            sensor_count,
            sample_rate_hz,
            samples,
        })
    }

    /// All-zero trace of the given shape.
    pub fn zeros(sensor_count: usize, sample_rate_hz: u32, sample_count: usize) -> Result<Self> {
        Self::new(
            sensor_count,
            sample_rate_hz,
            vec![0.0; sensor_count * sample_count],
        )
    }

    /// Builds a trace without checking finiteness. Used by the writer's
    /// error-path tests, which need to hold a NaN in a trace.
    #[doc(hidden)]
    pub fn from_raw_unchecked(sensor_count: usize, sample_rate_hz: u32, samples: Vec<f32>) -> Self {
        Self {
            sensor_count,
            sample_rate_hz,
            samples,
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_count
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    /// Number of time rows.
    pub fn sample_count(&self) -> usize {
        self.samples.len() / self.sensor_count
    }

    pub fn duration_s(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate_hz as f64
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// One time row (all sensors at a sample index).
    pub fn row(&self, t: usize) -> &[f32] {
        &self.samples[t * self.sensor_count..(t + 1) * self.sensor_count]
    }

    pub fn at(&self, t: usize, sensor: usize) -> f32 {
        self.samples[t * self.sensor_count + sensor]
    }

    /// Copies `len` samples of one sensor starting at sample `start`, widened to f64.
    pub fn channel_slice(&self, sensor: usize, start: usize, len: usize) -> Vec<f64> {
        (start..start + len)
            .map(|t| self.samples[t * self.sensor_count + sensor] as f64)
            .collect()
    }

    /// Full channel of one sensor, widened to f64.
    pub fn channel(&self, sensor: usize) -> Vec<f64> {
        self.channel_slice(sensor, 0, self.sample_count())
    }
}

/// Writes `trace` in DAS1 format; returns the number of bytes written.
///
/// The whole trace is validated before the first byte goes out, so a
/// non-finite sample leaves the destination untouched.
pub fn write_trace<W: Write>(trace: &RawTrace, mut dst: W) -> Result<u64> {
    if let Some(index) = trace.samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut buf = Vec::with_capacity(DAS1_HEADER_LEN + 4 * trace.samples.len());
    buf.extend_from_slice(&DAS1_MAGIC);
    buf.extend_from_slice(&DAS1_VERSION.to_le_bytes());
    buf.extend_from_slice(&(trace.sensor_count as u32).to_le_bytes());
    buf.extend_from_slice(&trace.sample_rate_hz.to_le_bytes());
    buf.extend_from_slice(&(trace.sample_count() as u64).to_le_bytes());
    for v in &trace.samples {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    dst.write_all(&buf)?;
    dst.flush()?;
    Ok(buf.len() as u64)
}

/// Reads a DAS1 trace. Bad magic, version mismatch and truncation are
/// reported as distinct errors.
pub fn read_trace<R: Read>(mut src: R) -> Result<RawTrace> {
    let mut header = [0u8; DAS1_HEADER_LEN];
    let got = read_up_to(&mut src, &mut header)?;
    if got >= 4 && header[..4] != DAS1_MAGIC {
        return Err(Error::BadMagic {
            expected: DAS1_MAGIC,
            found: [header[0], header[1], header[2], header[3]],
        });
    }
    if got < DAS1_HEADER_LEN {
        return Err(Error::Truncated {
            expected: DAS1_HEADER_LEN as u64,
            actual: got as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DAS1_VERSION {
        return Err(Error::VersionMismatch {
            expected: DAS1_VERSION,
            found: version,
        });
    }
    let sensor_count = u32_at(8) as usize;
    let sample_rate_hz = u32_at(12);
    let sample_count = u64::from_le_bytes(header[16..24].try_into().unwrap());

    let payload_len = sample_count
        .checked_mul(sensor_count as u64)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidConfig("header dimensions overflow".into()))?;
    let mut payload = Vec::new();
    src.take(payload_len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < payload_len {
        return Err(Error::Truncated {
            expected: payload_len,
            actual: payload.len() as u64,
        });
    }
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RawTrace::new(sensor_count, sample_rate_hz, samples)
}

fn read_up_to<R: Read>(src: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Ground-truth label of one (sensor, second) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelCell {
    pub kind: SourceKind,
    pub source_id: Option<usize>,
}

impl LabelCell {
    pub const NONE: LabelCell = LabelCell {
        kind: SourceKind::None,
        source_id: None,
    };
}

/// Per (sensor, second) ground truth, sensor-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    sensor_count: usize,
    seconds: usize,
    cells: Vec<LabelCell>,
}

impl LabelMask {
    pub fn empty(sensor_count: usize, seconds: usize) -> Self {
        Self {
            sensor_count,
            seconds,
            cells: vec![LabelCell::NONE; sensor_count * seconds],
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.sensor_count
    }

    pub fn seconds(&self) -> usize {
        self.seconds
    }

    pub fn get(&self, sensor: usize, second: usize) -> LabelCell {
        self.cells[sensor * self.seconds + second]
    }

    pub fn set(&mut self, sensor: usize, second: usize, cell: LabelCell) {
        self.cells[sensor * self.seconds + second] = cell;
    }

    /// Labeled (non-`None`) cells as sidecar records in (sensor, second) order.
    pub fn records(&self) -> Vec<LabelRecord> {
        let mut out = Vec::new();
        for sensor in 0..self.sensor_count {
            for second in 0..self.seconds {
                let cell = self.get(sensor, second);
                if cell.kind != SourceKind::None {
                    out.push(LabelRecord {
                        sensor,
                        second,
                        label: cell.kind,
                        source_id: cell.source_id,
                    });
                }
            }
        }
        out
    }
}

/// One line of the label sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub sensor: usize,
    pub second: usize,
    pub label: SourceKind,
    pub source_id: Option<usize>,
}

pub fn write_labels<W: Write>(mask: &LabelMask, mut dst: W) -> Result<()> {
    for rec in mask.records() {
        serde_json::to_writer(&mut dst, &rec)?;
        dst.write_all(b"\n")?;
    }
    dst.flush()?;
    Ok(())
}

/// Reads a sidecar into a mask of the given dimensions. Records outside the
/// grid are rejected.
pub fn read_labels<R: BufRead>(src: R, sensor_count: usize, seconds: usize) -> Result<LabelMask> {
    let mut mask = LabelMask::empty(sensor_count, seconds);
    for line in src.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line)?;
        if rec.sensor >= sensor_count || rec.second >= seconds {
            return Err(Error::InvalidConfig(format!(
                "label cell ({}, {}) outside {}x{} grid",
                rec.sensor, rec.second, sensor_count, seconds
            )));
        }
        mask.set(
            rec.sensor,
            rec.second,
            LabelCell {
                kind: rec.label,
                source_id: rec.source_id,
            },
        );
    }
    Ok(mask)
}

/// A fixed-length slice of one sensor's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub sensor_index: usize,
    pub start_s: f64,
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
}

impl Window {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Iterator over windows in (start time, sensor) order.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    trace: &'a RawTrace,
    window_len: usize,
    hop_len: usize,
    count_per_sensor: usize,
    step: usize,
    sensor: usize,
}

impl<'a> Windows<'a> {
    /// Total number of windows the iterator yields.
    pub fn total(&self) -> usize {
        self.count_per_sensor * self.trace.sensor_count
    }

    pub fn windows_per_sensor(&self) -> usize {
        self.count_per_sensor
    }
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        if self.step >= self.count_per_sensor {
            return None;
        }
        let start = self.step * self.hop_len;
        let w = Window {
            sensor_index: self.sensor,
            start_s: start as f64 / self.trace.sample_rate_hz as f64,
            sample_rate_hz: self.trace.sample_rate_hz,
            samples: self.trace.channel_slice(self.sensor, start, self.window_len),
        };
        self.sensor += 1;
        if self.sensor == self.trace.sensor_count {
            self.sensor = 0;
            self.step += 1;
        }
        Some(w)
    }
}

/// Converts a duration to a whole number of samples, rejecting fractional results.
pub fn seconds_to_samples(seconds: f64, sample_rate_hz: u32) -> Result<usize> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "duration must be positive, got {seconds}"
        )));
    }
    let exact = seconds * sample_rate_hz as f64;
    let n = exact.round();
    if (exact - n).abs() > 1e-9 * exact.max(1.0) || n < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "{seconds} s is not a whole number of samples at {sample_rate_hz} Hz"
        )));
    }
    Ok(n as usize)
}

/// Windows every sensor with `window_s` length and `hop_s` stride. A window
/// longer than the trace yields an empty sequence.
pub fn window_iter(trace: &RawTrace, window_s: f64, hop_s: f64) -> Result<Windows<'_>> {
    let window_len = seconds_to_samples(window_s, trace.sample_rate_hz)?;
    let hop_len = seconds_to_samples(hop_s, trace.sample_rate_hz)?;
    let n = trace.sample_count();
    let count_per_sensor = if window_len > n {
        0
    } else {
        (n - window_len) / hop_len + 1
    };
    Ok(Windows {
        trace,
        window_len,
        hop_len,
        count_per_sensor,
        step: 0,
        sensor: 0,
    })
}
