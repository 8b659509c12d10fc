//! Association of per-second detections into position-stable tracks and
//! alarm confirmation.
//!
//! A track is confirmed once it has collected `confirm_count` detections
//! without a silence longer than `gap_tolerance_s`. Each confirmation emits
//! one [`EventRecord`].

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Upper clamp on track probability so the complement never underflows to 0.
pub const MAX_TRACK_PROBABILITY: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Classic,
    Image,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Classic => "classic",
            Pipeline::Image => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time_s: f64,
    pub position_m: f64,
    pub probability: f64,
    pub pipeline: Pipeline,
}

impl Detection {
    pub fn new(time_s: f64, position_m: f64, probability: f64, pipeline: Pipeline) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidConfig(format!(
                "detection probability {probability} outside [0, 1]"
            )));
        }
        if !(position_m >= 0.0) || !time_s.is_finite() || !position_m.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "detection at t={time_s}, x={position_m} is not a valid placement"
            )));
        }
        Ok(Self {
            time_s,
            position_m,
            probability,
            pipeline,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackState {
    Open,
    Confirmed,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlarmPolicy {
    pub radius_m: f64,
    /// Detections required before a track raises an alarm.
    pub confirm_count: usize,
    pub gap_tolerance_s: f64,
    /// Detections below this probability are discarded upstream.
    pub min_probability: f64,
}

impl Default for AlarmPolicy {
    fn default() -> Self {
        Self::classic()
    }
}

impl AlarmPolicy {
    pub fn classic() -> Self {
        Self {
            radius_m: 5.0,
            confirm_count: 90,
            gap_tolerance_s: 3.0,
            min_probability: 0.5,
        }
    }

    /// One patch hit confirms; patches of the same sensor band arrive one
    /// hop apart, so the gap tolerance is a hop.
    pub fn image() -> Self {
        Self {
            radius_m: 5.0,
            confirm_count: 1,
            gap_tolerance_s: crate::dsp::PATCH_HOP_SECONDS,
            min_probability: 0.5,
        }
    }

    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        match pipeline {
            Pipeline::Classic => Self::classic(),
            Pipeline::Image => Self::image(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.confirm_count == 0 {
            return Err(Error::InvalidConfig("confirm_count must be at least 1".into()));
        }
        if !(self.radius_m > 0.0) || !self.radius_m.is_finite() {
            return Err(Error::InvalidConfig(format!("radius {} must be positive", self.radius_m)));
        }
        if !(self.gap_tolerance_s >= 0.0) {
            return Err(Error::InvalidConfig("gap tolerance must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.min_probability) {
            return Err(Error::InvalidConfig("min_probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub detections: Vec<Detection>,
    pub centroid_m: f64,
    pub state: TrackState,
    pub confirmed_at: Option<f64>,
}

impl Track {
    fn start(id: u64, d: Detection) -> Self {
        Self {
            id,
            detections: vec![d],
            centroid_m: d.position_m,
            state: TrackState::Open,
            confirmed_at: None,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        self.detections.last().map_or(f64::NEG_INFINITY, |d| d.time_s)
    }

    fn push(&mut self, d: Detection) {
        self.detections.push(d);
        let n = self.detections.len() as f64;
        self.centroid_m += (d.position_m - self.centroid_m) / n;
    }

    pub fn probability(&self) -> f64 {
        track_probability(&self.detections)
    }
}

/// `1 - prod(1 - p_i)`, clamped to `[0, 1 - 1e-12]`.
pub fn track_probability(detections: &[Detection]) -> f64 {
    let miss: f64 = detections.iter().map(|d| 1.0 - d.probability).product();
    (1.0 - miss).clamp(0.0, MAX_TRACK_PROBABILITY)
}

/// Whether `track` satisfies the confirmation rule, and when.
pub fn confirm(track: &Track, policy: &AlarmPolicy) -> Option<f64> {
    let k = policy.confirm_count;
    if track.detections.len() < k {
        return None;
    }
    let gaps_ok = track
        .detections
        .windows(2)
        .take(k.saturating_sub(1))
        .all(|w| w[1].time_s - w[0].time_s <= policy.gap_tolerance_s);
    gaps_ok.then(|| track.detections[k - 1].time_s)
}

/// Expected false alarms from independent per-cell false positives:
/// `sensors * horizon * (1 - p) * p^K`, the expected number of runs of at
/// least `K` hits per starting second.
pub fn far_estimate(p_fp: f64, confirm_count: usize, sensors: usize, horizon_s: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p_fp) {
        return Err(Error::InvalidConfig(format!("false-positive rate {p_fp} outside [0, 1)")));
    }
    if confirm_count == 0 {
        return Err(Error::InvalidConfig("confirm_count must be at least 1".into()));
    }
    Ok(sensors as f64 * horizon_s * (1.0 - p_fp) * p_fp.powi(confirm_count as i32))
}

/// Confirmed-event line of the JSONL event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t_confirmed: f64,
    pub position_m: f64,
    pub probability: f64,
    pub pipeline: Pipeline,
    pub track_length: usize,
}

pub fn write_events<W: Write>(events: &[EventRecord], mut dst: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut dst, e)?;
        dst.write_all(b"\n")?;
    }
    dst.flush()?;
    Ok(())
}

pub fn read_events<R: BufRead>(src: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for line in src.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Single-owner track store, fed one time step at a time.
#[derive(Debug, Clone)]
pub struct Tracker {
    policy: AlarmPolicy,
    active: Vec<Track>,
    closed: Vec<Track>,
    events: Vec<EventRecord>,
    next_id: u64,
    last_step: Option<f64>,
}

fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    a.position_m
        .total_cmp(&b.position_m)
        .then(b.probability.total_cmp(&a.probability))
        .then(a.pipeline.cmp(&b.pipeline))
}

impl Tracker {
    pub fn new(policy: AlarmPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            active: Vec::new(),
            closed: Vec::new(),
            events: Vec::new(),
            next_id: 0,
            last_step: None,
        })
    }

    pub fn policy(&self) -> &AlarmPolicy {
        &self.policy
    }

    pub fn active_tracks(&self) -> &[Track] {
        &self.active
    }

    pub fn closed_tracks(&self) -> &[Track] {
        &self.closed
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    /// Closes tracks that have been silent longer than the gap tolerance as
    /// of time `t`.
    fn expire(&mut self, t: f64) {
        let tol = self.policy.gap_tolerance_s;
        let (keep, done): (Vec<Track>, Vec<Track>) = std::mem::take(&mut self.active)
            .into_iter()
            .partition(|tr| t - tr.last_time() <= tol);
        self.active = keep;
        self.closed.extend(done.into_iter().map(|mut tr| {
            tr.state = TrackState::Closed;
            tr
        }));
    }

    /// Index of the track a detection at `x` joins: nearest anchor within
    /// the radius, then longer track, then lower anchor. `anchors[i]` is the
    /// centroid of track `i` frozen at the start of the step.
    fn nearest(&self, anchors: &[f64], x: f64) -> Option<usize> {
        self.active
            .iter()
            .zip(anchors)
            .enumerate()
            .map(|(i, (tr, a))| (i, (a - x).abs(), tr.len(), *a))
            .filter(|(_, dist, _, _)| *dist <= self.policy.radius_m)
            .min_by(|(_, da, la, ca), (_, db, lb, cb)| da.total_cmp(db).then(lb.cmp(la)).then(ca.total_cmp(cb)))
            .map(|(i, ..)| i)
    }

    /// Associates all detections of time `t`, then confirms. Returns the
    /// events raised at this step. Steps must arrive in increasing time.
    pub fn step(&mut self, t: f64, detections: &[Detection]) -> Result<Vec<EventRecord>> {
        if let Some(prev) = self.last_step {
            if t <= prev {
                return Err(Error::InvalidConfig(format!(
                    "tracker steps must increase in time ({t} after {prev})"
                )));
            }
        }
        if let Some(d) = detections.iter().find(|d| d.time_s != t) {
            return Err(Error::InvalidConfig(format!(
                "detection at {} delivered in step {t}",
                d.time_s
            )));
        }
        self.last_step = Some(t);
        self.expire(t);
        let mut sorted = detections.to_vec();
        sorted.sort_by(detection_order);
        // Distances are measured to centroids as they stood before this
        // step, so several same-second hits cannot drag a track along.
        let mut anchors: Vec<f64> = self.active.iter().map(|tr| tr.centroid_m).collect();
        for d in sorted {
            match self.nearest(&anchors, d.position_m) {
                Some(i) => self.active[i].push(d),
                None => {
                    self.active.push(Track::start(self.next_id, d));
                    anchors.push(d.position_m);
                    self.next_id += 1;
                }
            }
        }
        let mut raised = Vec::new();
        for tr in self.active.iter_mut().filter(|tr| tr.state == TrackState::Open) {
            if let Some(at) = confirm(tr, &self.policy) {
                tr.state = TrackState::Confirmed;
                tr.confirmed_at = Some(at);
                let k = self.policy.confirm_count;
                raised.push(EventRecord {
                    t_confirmed: at,
                    position_m: tr.centroid_m,
                    probability: track_probability(&tr.detections[..k]),
                    pipeline: tr.detections[0].pipeline,
                    track_length: k,
                });
            }
        }
        raised.sort_by(|a, b| a.position_m.total_cmp(&b.position_m));
        self.events.extend_from_slice(&raised);
        Ok(raised)
    }

    /// Closes every remaining track and returns all events raised.
    pub fn finish(mut self) -> (Vec<EventRecord>, Vec<Track>) {
        self.expire(f64::INFINITY);
        (self.events, self.closed)
    }
}

/// Runs a detection stream, grouped by time, through a fresh tracker.
pub fn track_stream(detections: &[Detection], policy: &AlarmPolicy) -> Result<Vec<EventRecord>> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(detection_order(a, b)));
    let mut tracker = Tracker::new(*policy)?;
    for group in sorted.chunk_by(|a, b| a.time_s == b.time_s) {
        tracker.step(group[0].time_s, group)?;
    }
    Ok(tracker.finish().0)
}

/// Confirmed-track count when every (sensor, second) cell fires
/// independently with probability `p_fp`. Sensors are spaced far beyond the
/// radius and the gap tolerance is one second, so tracks are runs of
/// consecutive hits on one sensor.
pub fn simulate_false_alarms(
    p_fp: f64,
    confirm_count: usize,
    sensors: usize,
    horizon_s: usize,
    seed: u64,
) -> Result<usize> {
    let policy = AlarmPolicy {
        radius_m: 5.0,
        confirm_count,
        gap_tolerance_s: 1.0,
        min_probability: 0.0,
    };
    let spacing = 100.0 * policy.radius_m;
    let mut tracker = Tracker::new(policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut confirmed = 0;
    let mut hits = Vec::new();
    for t in 0..horizon_s {
        hits.clear();
        for s in 0..sensors {
            if rng.gen::<f64>() < p_fp {
                hits.push(Detection {
                    time_s: t as f64,
                    position_m: s as f64 * spacing,
                    probability: 0.5,
                    pipeline: Pipeline::Classic,
                });
            }
        }
        confirmed += tracker.step(t as f64, &hits)?.len();
    }
    Ok(confirmed)
}
