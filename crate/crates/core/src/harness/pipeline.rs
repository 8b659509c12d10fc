use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::datasets::trace_features;
use crate::classic::ClassicModel;
use crate::cnn::{predict_image, CnnModel};
use crate::dsp::{patches_from_waterfall, spectral_energy, Waterfall, DEFAULT_LOWPASS_ALPHA, FEATURE_LEN, PATCH_SENSORS};
use crate::ingest::RawTrace;
use crate::tracker::{track_stream, AlarmPolicy, Detection, EventRecord, Pipeline};
use crate::{Class, Error, Result};

/// Events and timing of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub pipeline: Pipeline,
    pub events: Vec<EventRecord>,
    pub detections: usize,
    pub elapsed_s: f64,
    pub samples: usize,
}

impl RunOutput {
    pub fn throughput(&self) -> f64 {
        if self.elapsed_s > 0.0 {
            self.samples as f64 / self.elapsed_s
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    sensor: usize,
    probability: f64,
    energy: f64,
}

/// Keeps the strongest sensor of each run of adjacent detecting sensors.
fn suppress_neighbours(mut hits: Vec<Candidate>) -> Vec<Candidate> {
    hits.sort_by_key(|c| c.sensor);
    let mut out: Vec<Candidate> = Vec::new();
    let mut prev_sensor = None;
    for c in hits {
        match (prev_sensor, out.last_mut()) {
            (Some(p), Some(best)) if c.sensor == p + 1 => {
                if c.energy > best.energy {
                    *best = c;
                }
            }
            _ => out.push(c),
        }
        prev_sensor = Some(c.sensor);
    }
    out
}

/// Spectral-feature pipeline: per sensor and second, classify, suppress
/// adjacent duplicates, then track with `policy`.
pub fn run_classic(
    trace: &RawTrace,
    model: &ClassicModel,
    policy: &AlarmPolicy,
    sensor_spacing_m: f64,
) -> Result<RunOutput> {
    if model.dims() != FEATURE_LEN {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_LEN,
            actual: model.dims(),
        });
    }
    policy.validate()?;
    let started = Instant::now();
    let n = trace.sample_rate_hz() as usize;
    let feats = trace_features(trace)?;
    let seconds = feats.first().map_or(0, Vec::len);
    // [sensor][second] -> candidate
    let per_sensor: Vec<Vec<Option<Candidate>>> = feats
        .par_iter()
        .enumerate()
        .map(|(sensor, row)| {
            row.iter()
                .map(|f| {
                    let p = model.predict(&f.values)?;
                    Ok((p.label == Class::Excavator && p.probability >= policy.min_probability).then(|| {
                        Candidate {
                            sensor,
                            probability: p.probability,
                            energy: spectral_energy(&f.values, n),
                        }
                    }))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut detections = Vec::new();
    for second in 0..seconds {
        let hits: Vec<Candidate> = per_sensor.iter().filter_map(|row| row[second]).collect();
        for c in suppress_neighbours(hits) {
            // A window is reported when it completes.
            detections.push(Detection {
                time_s: (second + 1) as f64,
                position_m: c.sensor as f64 * sensor_spacing_m,
                probability: c.probability,
                pipeline: Pipeline::Classic,
            });
        }
    }
    let events = track_stream(&detections, policy)?;
    Ok(RunOutput {
        pipeline: Pipeline::Classic,
        events,
        detections: detections.len(),
        elapsed_s: started.elapsed().as_secs_f64(),
        samples: trace.samples().len(),
    })
}

/// Waterfall-image pipeline: build patches, classify each, localize hits at
/// the brightest sensor of the patch, then track with `policy`.
pub fn run_image(
    trace: &RawTrace,
    model: &CnnModel,
    policy: &AlarmPolicy,
    sensor_spacing_m: f64,
) -> Result<RunOutput> {
    policy.validate()?;
    if trace.sensor_count() < PATCH_SENSORS {
        return Err(Error::InvalidConfig(format!(
            "image pipeline needs at least {PATCH_SENSORS} sensors, trace has {}",
            trace.sensor_count()
        )));
    }
    let started = Instant::now();
    let waterfall = Waterfall::from_trace(trace, DEFAULT_LOWPASS_ALPHA)?;
    let patches = patches_from_waterfall(&waterfall, None)?;
    let hits: Vec<Option<Detection>> = patches
        .par_iter()
        .map(|p| {
            let pred = predict_image(model, p)?;
            if pred.label != Class::Excavator || pred.probability < policy.min_probability {
                return Ok(None);
            }
            let sensor = waterfall.peak_sensor(p.first_sensor, p.start_col());
            Ok(Some(Detection {
                time_s: p.end_s(),
                position_m: sensor as f64 * sensor_spacing_m,
                probability: pred.probability,
                pipeline: Pipeline::Image,
            }))
        })
        .collect::<Result<_>>()?;
    let detections: Vec<Detection> = hits.into_iter().flatten().collect();
    let events = track_stream(&detections, policy)?;
    Ok(RunOutput {
        pipeline: Pipeline::Image,
        events,
        detections: detections.len(),
        elapsed_s: started.elapsed().as_secs_f64(),
        samples: trace.samples().len(),
    })
}

/// A true event: when and where a source started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub onset_s: f64,
    pub position_m: f64,
}

/// Seconds from onset to the first confirmed event within `radius_m` of the
/// true position, or `None` for a miss.
pub fn detection_delay(events: &[EventRecord], truth: &[GroundTruth], radius_m: f64) -> Vec<Option<f64>> {
    truth
        .iter()
        .map(|g| {
            events
                .iter()
                .filter(|e| e.t_confirmed >= g.onset_s && (e.position_m - g.position_m).abs() <= radius_m)
                .map(|e| e.t_confirmed - g.onset_s)
                .min_by(f64::total_cmp)
        })
        .collect()
}

/// Mean over matched delays; `None` when every event was missed.
pub fn mean_delay(delays: &[Option<f64>]) -> Option<f64> {
    let hits: Vec<f64> = delays.iter().flatten().copied().collect();
    (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64)
}
