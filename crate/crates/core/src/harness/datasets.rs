//! Labeled training sets cut from synthetic scenes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classic::Dataset;
use crate::dsp::{build_patches, FeatureVector, SpectrumAnalyzer, WaterfallPatch, DEFAULT_LOWPASS_ALPHA, PATCH_SECONDS, PATCH_SENSORS};
use crate::ingest::{LabelMask, RawTrace, Window};
use crate::synthgen::{label_grid, synth_scene, SceneConfig, SourceSpec};
use crate::{Class, Error, Result, SourceKind};

/// Upper bound on generated scenes before a builder gives up.
const MAX_SCENES: usize = 10_000;

/// FFT features of every whole second of every sensor, indexed
/// `[sensor][second]`.
pub fn trace_features(trace: &RawTrace) -> Result<Vec<Vec<FeatureVector>>> {
    let rate = trace.sample_rate_hz();
    let n = rate as usize;
    let seconds = trace.sample_count() / n.max(1);
    let analyzer = SpectrumAnalyzer::new(n);
    (0..trace.sensor_count())
        .into_par_iter()
        .map(|sensor| {
            let channel = trace.channel(sensor);
            (0..seconds)
                .map(|s| {
                    let w = Window {
                        sensor_index: sensor,
                        start_s: s as f64,
                        sample_rate_hz: rate,
                        samples: channel[s * n..(s + 1) * n].to_vec(),
                    };
                    crate::dsp::feature_fft100_with(&analyzer, &w)
                })
                .collect()
        })
        .collect()
}

/// Feature rows for every cell of a labeled trace. Cells labeled with a
/// non-excavator source or with no source are both class `Other`.
pub fn labeled_features(trace: &RawTrace, labels: &LabelMask) -> Result<Vec<(FeatureVector, SourceKind)>> {
    let feats = trace_features(trace)?;
    let mut out = Vec::new();
    for (sensor, row) in feats.into_iter().enumerate() {
        for f in row {
            let second = f.start_s as usize;
            let kind = if sensor < labels.sensor_count() && second < labels.seconds() {
                labels.get(sensor, second).kind
            } else {
                SourceKind::None
            };
            out.push((f, kind));
        }
    }
    Ok(out)
}

/// Parameters of the randomized scenes that training sets are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSuite {
    pub sensor_count: usize,
    pub duration_s: f64,
    pub noise_std: f64,
    /// Source amplitudes are drawn log-uniformly from this range.
    pub amplitude_range: (f64, f64),
    pub seed: u64,
}

impl Default for SceneSuite {
    fn default() -> Self {
        Self {
            sensor_count: 48,
            duration_s: 45.0,
            noise_std: 0.01,
            amplitude_range: (0.2, 5.0),
            seed: 0,
        }
    }
}

impl SceneSuite {
    fn amplitude(&self, rng: &mut ChaCha8Rng) -> f64 {
        let (lo, hi) = self.amplitude_range;
        (rng.gen_range(lo.ln()..=hi.ln())).exp()
    }

    /// Scene `index` of the suite. Even indices carry an excavator; every
    /// scene gets a random mix of highway and walking distractors.
    pub fn scene(&self, index: usize) -> SceneConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut cfg = SceneConfig::new(self.sensor_count, self.duration_s);
        cfg.noise_std = self.noise_std;
        cfg.seed = self.seed.wrapping_mul(0x9e37_79b9).wrapping_add(index as u64);
        let span = self.sensor_count as f64 * cfg.sensor_spacing_m;
        let dur = self.duration_s;
        let place = |rng: &mut ChaCha8Rng, kind: SourceKind, amp: f64| {
            let start = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..dur * 0.5) };
            let end = if rng.gen_bool(0.5) { dur } else { rng.gen_range(start + 5.0..=dur.max(start + 5.0)) };
            SourceSpec::new(kind, rng.gen_range(0.1 * span..0.9 * span), start, end, amp)
                .with_offset(rng.gen_range(0.0..4.0))
        };
        if index.is_multiple_of(2) {
            let amp = self.amplitude(&mut rng);
            cfg.sources.push(place(&mut rng, SourceKind::Excavator, amp));
        }
        let distractors = if index.is_multiple_of(2) { rng.gen_range(0..=2) } else { rng.gen_range(1..=3) };
        for _ in 0..distractors {
            let kind = if rng.gen_bool(0.5) { SourceKind::Highway } else { SourceKind::Walking };
            let amp = self.amplitude(&mut rng);
            cfg.sources.push(place(&mut rng, kind, amp));
        }
        cfg
    }
}

fn synth_labeled(cfg: &SceneConfig) -> Result<(RawTrace, LabelMask)> {
    Ok((synth_scene(cfg)?, label_grid(cfg)?))
}

/// Feature dataset with the requested class counts. `Other` rows are drawn
/// half from distractor-labeled cells and half from unlabeled cells where
/// both are available.
pub fn feature_dataset(suite: &SceneSuite, excavator: usize, other: usize) -> Result<Dataset> {
    let mut exc = Vec::new();
    let mut distract = Vec::new();
    let mut quiet = Vec::new();
    let mut scene = 0;
    let enough = |e: &Vec<_>, d: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        e.len() >= excavator && d.len() + q.len() >= other && d.len().min(q.len()) >= other / 2
    };
    while !enough(&exc, &distract, &quiet) {
        if scene >= MAX_SCENES {
            return Err(Error::InsufficientData(format!(
                "{MAX_SCENES} scenes did not yield {excavator}/{other} samples"
            )));
        }
        // Scenes are synthesized in small parallel batches.
        let batch: Vec<usize> = (scene..scene + 4).collect();
        scene += batch.len();
        let rows: Vec<Vec<(FeatureVector, SourceKind)>> = batch
            .par_iter()
            .map(|&i| {
                let (trace, labels) = synth_labeled(&suite.scene(i))?;
                labeled_features(&trace, &labels)
            })
            .collect::<Result<_>>()?;
        for (f, kind) in rows.into_iter().flatten() {
            match kind {
                SourceKind::Excavator => exc.push(f.values),
                SourceKind::None => quiet.push(f.values),
                _ => distract.push(f.values),
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed ^ 0xda7a);
    exc.shuffle(&mut rng);
    distract.shuffle(&mut rng);
    quiet.shuffle(&mut rng);
    let n_distract = (other - other / 2).min(distract.len());
    let n_quiet = other - n_distract;
    let mut features = Vec::with_capacity(excavator + other);
    let mut targets = Vec::with_capacity(excavator + other);
    features.extend(exc.into_iter().take(excavator));
    targets.extend(std::iter::repeat_n(Class::Excavator, excavator));
    features.extend(distract.into_iter().take(n_distract));
    features.extend(quiet.into_iter().take(n_quiet));
    targets.extend(std::iter::repeat_n(Class::Other, other));
    // Interleave classes so that prefixes are mixed.
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    Dataset::new(
        order.iter().map(|&i| features[i].clone()).collect(),
        order.iter().map(|&i| targets[i]).collect(),
    )
}

/// Seconds of the patch footprint in which an excavator holds at least one
/// labeled cell, and whether any cell of the footprint is an excavator.
fn excavator_coverage(labels: &LabelMask, patch: &WaterfallPatch) -> (usize, bool) {
    let s0 = patch.start_s.floor() as usize;
    let s1 = (patch.end_s().ceil() as usize).min(labels.seconds());
    let sensors = patch.first_sensor..(patch.first_sensor + PATCH_SENSORS).min(labels.sensor_count());
    let covered = (s0..s1)
        .filter(|&t| sensors.clone().any(|s| labels.get(s, t).kind == SourceKind::Excavator))
        .count();
    (covered, covered > 0)
}

/// Labeled waterfall patches, `per_class` of each class. Only unambiguous
/// patches are kept: excavator patches show the excavator for at least
/// `2/3` of the patch duration, other patches contain no excavator cell.
pub fn patch_dataset(suite: &SceneSuite, per_class: usize) -> Result<Vec<WaterfallPatch>> {
    if suite.sensor_count < PATCH_SENSORS {
        return Err(Error::InvalidConfig(format!(
            "patch scenes need at least {PATCH_SENSORS} sensors"
        )));
    }
    let mut pools: [Vec<WaterfallPatch>; 2] = [Vec::new(), Vec::new()];
    let mut scene = 0;
    while pools.iter().any(|p| p.len() < per_class) {
        if scene >= MAX_SCENES {
            return Err(Error::InsufficientData(format!(
                "{MAX_SCENES} scenes did not yield {per_class} patches per class"
            )));
        }
        let batch: Vec<usize> = (scene..scene + 4).collect();
        scene += batch.len();
        let patches: Vec<Vec<WaterfallPatch>> = batch
            .par_iter()
            .map(|&i| {
                let (trace, labels) = synth_labeled(&suite.scene(i))?;
                let patches = build_patches(&trace, Some(&labels), DEFAULT_LOWPASS_ALPHA)?;
                Ok(patches
                    .into_iter()
                    .filter(|p| {
                        let (covered, any) = excavator_coverage(&labels, p);
                        match p.label {
                            Some(Class::Excavator) => covered as f64 >= PATCH_SECONDS * 2.0 / 3.0,
                            _ => !any,
                        }
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for p in patches.into_iter().flatten() {
            let class = p.label.unwrap_or(Class::Other);
            if pools[class.index()].len() < per_class {
                pools[class.index()].push(p);
            }
        }
    }
    let [exc, other] = pools;
    // Alternate classes.
    Ok(exc.into_iter().zip(other).flat_map(|(a, b)| [a, b]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_dataset_has_requested_counts() {
        let suite = SceneSuite {
            sensor_count: 16,
            duration_s: 10.0,
            ..SceneSuite::default()
        };
        let d = feature_dataset(&suite, 30, 60).unwrap();
        assert_eq!(d.class_counts(), [30, 60]);
        assert_eq!(d.dims(), 100);
        let again = feature_dataset(&suite, 30, 60).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn patch_dataset_is_balanced() {
        let suite = SceneSuite {
            sensor_count: 32,
            duration_s: 15.0,
            ..SceneSuite::default()
        };
        let p = patch_dataset(&suite, 3).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.iter().filter(|p| p.label == Some(Class::Excavator)).count(), 3);
        assert!(p.iter().all(|p| p.pixels.rows == 32 && p.pixels.cols == 60));
    }

    #[test]
    fn trace_features_cover_whole_seconds() {
        let mut cfg = SceneConfig::new(3, 2.5);
        cfg.noise_std = 0.1;
        let t = synth_scene(&cfg).unwrap();
        let f = trace_features(&t).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|row| row.len() == 2));
        assert_eq!(f[2][1].start_s, 1.0);
    }
}
