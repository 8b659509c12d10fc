use std::io::Write;

use rayon::prelude::*;

use super::spectral::{lowpass_values, rms_block_len};
use crate::ingest::{LabelMask, RawTrace};
use crate::{Class, Error, Result, SourceKind};

/// Sensor rows per patch.
pub const PATCH_SENSORS: usize = 32;
/// Time columns per patch.
pub const PATCH_COLS: usize = 60;
/// Waterfall columns per second (250 ms each).
pub const COLS_PER_SECOND: usize = 4;
/// Patch hop along the sensor axis (50% overlap).
pub const PATCH_SENSOR_HOP: usize = PATCH_SENSORS / 2;
/// Patch hop along the time axis (50% overlap).
pub const PATCH_COL_HOP: usize = PATCH_COLS / 2;
/// Seconds of data covered by one patch.
pub const PATCH_SECONDS: f64 = PATCH_COLS as f64 / COLS_PER_SECOND as f64;
/// Seconds between consecutive patch starts.
pub const PATCH_HOP_SECONDS: f64 = PATCH_COL_HOP as f64 / COLS_PER_SECOND as f64;
/// Default smoothing factor for the RMS low-pass.
pub const DEFAULT_LOWPASS_ALPHA: f64 = 0.2;

/// Row-major grey image.
#[derive(Debug, Clone, PartialEq)]
pub struct GreyImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GreyImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> GreyImage {
        let mut out = GreyImage::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Copies the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> GreyImage {
        let mut data = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            data.extend_from_slice(&self.data[r * self.cols + c0..r * self.cols + c0 + cols]);
        }
        GreyImage { rows, cols, data }
    }
}

/// Euclidean Sobel gradient magnitude with edge-replicated borders.
pub fn sobel_mag(image: &GreyImage) -> Result<GreyImage> {
    if image.rows < 3 || image.cols < 3 {
        return Err(Error::InvalidConfig(format!(
            "Sobel needs at least 3x3 pixels, got {}x{}",
            image.rows, image.cols
        )));
    }
    let (rows, cols) = (image.rows as isize, image.cols as isize);
    let px = |r: isize, c: isize| image.get(r.clamp(0, rows - 1) as usize, c.clamp(0, cols - 1) as usize);
    let mut out = GreyImage::zeros(image.rows, image.cols);
    for r in 0..rows {
        for c in 0..cols {
            let gx = (px(r - 1, c + 1) + 2.0 * px(r, c + 1) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r, c - 1) + px(r + 1, c - 1));
            let gy = (px(r + 1, c - 1) + 2.0 * px(r + 1, c) + px(r + 1, c + 1))
                - (px(r - 1, c - 1) + 2.0 * px(r - 1, c) + px(r - 1, c + 1));
            out.set(r as usize, c as usize, gx.hypot(gy));
        }
    }
    Ok(out)
}

/// Smoothed, decimated RMS envelope of every sensor: rows are sensors,
/// columns are 250 ms steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfall {
    pub envelope: GreyImage,
}

impl Waterfall {
    pub fn from_trace(trace: &RawTrace, alpha: f64) -> Result<Self> {
        let rate = trace.sample_rate_hz();
        let block = rms_block_len(rate);
        let blocks_per_col = (1000.0 / (COLS_PER_SECOND as f64 * super::spectral::RMS_BLOCK_MS))
            .round() as usize;
        let n_blocks = trace.sample_count() / block;
        let cols = n_blocks / blocks_per_col;
        if cols == 0 {
            return Ok(Self {
                envelope: GreyImage::zeros(trace.sensor_count(), 0),
            });
        }
        let sensors = trace.sensor_count();
        // RMS blocks in one time-major pass; per sensor the summation order
        // matches `rms_series`.
        let blocks: Vec<Vec<f64>> = (0..n_blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0f64; sensors];
                for t in b * block..(b + 1) * block {
                    for (a, &v) in acc.iter_mut().zip(trace.row(t)) {
                        let v = f64::from(v);
                        *a += v * v;
                    }
                }
                acc.iter_mut().for_each(|a| *a = (*a / block as f64).sqrt());
                acc
            })
            .collect();
        if blocks.iter().flatten().any(|v| !v.is_finite()) {
            let index = trace.samples().iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite { index });
        }
        let rows: Vec<Vec<f64>> = (0..sensors)
            .into_par_iter()
            .map(|s| -> Result<Vec<f64>> {
                let rms: Vec<f64> = blocks.iter().map(|b| b[s]).collect();
                let smooth = lowpass_values(&rms, alpha)?;
                Ok(smooth
                    .chunks_exact(blocks_per_col)
                    .take(cols)
                    .map(|c| c.iter().sum::<f64>() / blocks_per_col as f64)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let data = rows.into_iter().flatten().collect();
        Ok(Self {
            envelope: GreyImage::new(trace.sensor_count(), cols, data)?,
        })
    }

    pub fn sensors(&self) -> usize {
        self.envelope.rows
    }

    pub fn columns(&self) -> usize {
        self.envelope.cols
    }

    /// Sensor with the largest mean envelope inside a patch footprint;
    /// the lowest index wins ties.
    pub fn peak_sensor(&self, first_sensor: usize, start_col: usize) -> usize {
        let mut best = (first_sensor, f64::NEG_INFINITY);
        for s in first_sensor..first_sensor + PATCH_SENSORS {
            let row = &self.envelope.data[s * self.envelope.cols + start_col..][..PATCH_COLS];
            let mean = row.iter().sum::<f64>() / PATCH_COLS as f64;
            if mean > best.1 {
                best = (s, mean);
            }
        }
        best.0
    }
}

/// 32 x 60 grey tile of the gradient waterfall, pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterfallPatch {
    pub pixels: GreyImage,
    pub first_sensor: usize,
    pub start_s: f64,
    pub label: Option<Class>,
}

impl WaterfallPatch {
    pub fn start_col(&self) -> usize {
        (self.start_s * COLS_PER_SECOND as f64).round() as usize
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + PATCH_SECONDS
    }
}

/// Min-max scales to `[0, 1]`; a constant image maps to all zeros.
pub fn normalize_min_max(image: &mut GreyImage) {
    let (lo, hi) = image
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = hi - lo;
    if !(span > 0.0) {
        image.data.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    image
        .data
        .iter_mut()
        .for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
}

/// Patch origins `(first_sensor, start_col)` in (time, sensor) order.
pub fn patch_origins(sensors: usize, cols: usize) -> Vec<(usize, usize)> {
    if sensors < PATCH_SENSORS || cols < PATCH_COLS {
        return Vec::new();
    }
    let mut out = Vec::new();
    for c0 in (0..=cols - PATCH_COLS).step_by(PATCH_COL_HOP) {
        for s0 in (0..=sensors - PATCH_SENSORS).step_by(PATCH_SENSOR_HOP) {
            out.push((s0, c0));
        }
    }
    out
}

/// Majority class among labeled cells under a patch footprint. Cells with no
/// source do not vote; a footprint with no labeled cell is `Other`.
pub fn patch_label(labels: &LabelMask, first_sensor: usize, start_s: f64) -> Class {
    let s0 = start_s.floor() as usize;
    let s1 = ((start_s + PATCH_SECONDS).ceil() as usize).min(labels.seconds());
    let (mut exc, mut other) = (0usize, 0usize);
    for sensor in first_sensor..(first_sensor + PATCH_SENSORS).min(labels.sensor_count()) {
        for second in s0..s1 {
            match labels.get(sensor, second).kind {
                SourceKind::None => {}
                SourceKind::Excavator => exc += 1,
                _ => other += 1,
            }
        }
    }
    if exc > other {
        Class::Excavator
    } else {
        Class::Other
    }
}

/// Cuts a gradient waterfall into normalized patches.
pub fn patches_from_waterfall(
    waterfall: &Waterfall,
    labels: Option<&LabelMask>,
) -> Result<Vec<WaterfallPatch>> {
    let origins = patch_origins(waterfall.sensors(), waterfall.columns());
    if origins.is_empty() {
        return Ok(Vec::new());
    }
    let gradient = sobel_mag(&waterfall.envelope)?;
    Ok(origins
        .into_par_iter()
        .map(|(s0, c0)| {
            let mut pixels = gradient.crop(s0, c0, PATCH_SENSORS, PATCH_COLS);
            normalize_min_max(&mut pixels);
            let start_s = c0 as f64 / COLS_PER_SECOND as f64;
            WaterfallPatch {
                pixels,
                first_sensor: s0,
                start_s,
                label: labels.map(|l| patch_label(l, s0, start_s)),
            }
        })
        .collect())
}

/// Trace to labeled patches: RMS, low-pass, 250 ms decimation, Sobel
/// magnitude, tiling with 50% overlap, per-patch normalization.
pub fn build_patches(
    trace: &RawTrace,
    labels: Option<&LabelMask>,
    alpha: f64,
) -> Result<Vec<WaterfallPatch>> {
    if trace.sensor_count() < PATCH_SENSORS {
        return Ok(Vec::new());
    }
    let wf = Waterfall::from_trace(trace, alpha)?;
    patches_from_waterfall(&wf, labels)
}

/// Writes a patch as binary PGM (P5), pixel = round(255 * value).
pub fn write_pgm<W: Write>(patch: &GreyImage, mut dst: W) -> Result<()> {
    write!(dst, "P5\n{} {}\n255\n", patch.cols, patch.rows)?;
    let bytes: Vec<u8> = patch
        .data
        .iter()
        .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    dst.write_all(&bytes)?;
    Ok(())
}
