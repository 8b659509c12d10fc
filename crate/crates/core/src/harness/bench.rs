//! Benchmark comparing the two pipelines on a shared synthetic suite, in the
//! shape of a delay / false-alarm / runtime / range table.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::datasets::{feature_dataset, patch_dataset, SceneSuite};
use super::pipeline::{detection_delay, mean_delay, run_classic, run_image, GroundTruth, RunOutput};
use crate::classic::{ClassicModel, ClassifierKind, TrainSettings};
use crate::cnn::{train_cnn, CnnModel, TrainConfig};
use crate::ingest::RawTrace;
use crate::synthgen::{synth_scene, SceneConfig, SourceSpec};
use crate::tracker::{AlarmPolicy, EventRecord, Pipeline};
use crate::{Error, Result, SourceKind};

pub const REPORT_SCHEMA: &str = "das-metrics-report/1";

/// JSON schema the report validates against.
pub const REPORT_JSON_SCHEMA: &str = include_str!("../../schema/metrics_report.schema.json");

pub const SECONDS_PER_MONTH: f64 = 30.0 * 86_400.0;

/// Detection rate an offset must reach to count towards the range metric.
pub const RANGE_RELIABILITY: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seed: u64,
    pub sensor_count: usize,
    pub sensor_spacing_m: f64,
    pub duration_s: f64,
    pub noise_std: f64,
    /// Fiber length the runtime is extrapolated to.
    pub fiber_length_m: f64,
    pub onset_s: f64,
    pub excavator_amplitude: f64,
    /// Perpendicular source offsets probed for the range metric.
    pub offsets_m: Vec<f64>,
    pub trials_per_offset: usize,
    /// Excavator-free scenes run for the false-alarm count.
    pub false_alarm_scenes: usize,
    pub classifier: ClassifierKind,
    pub classic_train: [usize; 2],
    pub cnn_patches_per_class: usize,
    pub cnn: TrainConfig,
    pub training_suite: SceneSuite,
    pub classic_policy: AlarmPolicy,
    pub image_policy: AlarmPolicy,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sensor_count: 64,
            sensor_spacing_m: 4.0,
            duration_s: 150.0,
            noise_std: 0.01,
            fiber_length_m: 17_000.0,
            onset_s: 30.0,
            excavator_amplitude: 2.0,
            offsets_m: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0],
            trials_per_offset: 2,
            false_alarm_scenes: 2,
            classifier: ClassifierKind::Mlp,
            classic_train: [2000, 5500],
            cnn_patches_per_class: 200,
            cnn: TrainConfig::default(),
            training_suite: SceneSuite::default(),
            classic_policy: AlarmPolicy::classic(),
            image_policy: AlarmPolicy::image(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sensor_count < crate::dsp::PATCH_SENSORS {
            return Err(Error::InsufficientData(format!(
                "benchmark scenes need at least {} sensors",
                crate::dsp::PATCH_SENSORS
            )));
        }
        if !(self.duration_s > self.onset_s + self.classic_policy.confirm_count as f64) {
            return Err(Error::InsufficientData(format!(
                "a {} s scene cannot confirm a classic track started at {} s",
                self.duration_s, self.onset_s
            )));
        }
        if self.offsets_m.is_empty() || self.trials_per_offset == 0 || self.false_alarm_scenes == 0 {
            return Err(Error::InsufficientData("benchmark suite has no range or false-alarm scenes".into()));
        }
        self.classic_policy.validate()?;
        self.image_policy.validate()
    }

    /// Seed with the config seed replaced, propagated to training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.cnn.seed = seed;
        self.training_suite.seed = seed;
        self
    }

    fn base_scene(&self, seed: u64) -> SceneConfig {
        let mut cfg = SceneConfig::new(self.sensor_count, self.duration_s);
        cfg.sensor_spacing_m = self.sensor_spacing_m;
        cfg.noise_std = self.noise_std;
        cfg.seed = seed;
        cfg
    }

    fn centre_m(&self) -> f64 {
        // On a sensor, so position errors are measured against a grid point.
        (self.sensor_count / 2) as f64 * self.sensor_spacing_m
    }

    fn fiber_sensors(&self) -> f64 {
        self.fiber_length_m / self.sensor_spacing_m
    }
}

/// Published reference values, reported next to the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedFigures {
    pub delay_s: f64,
    pub execution_time_s: f64,
    pub max_distance_m: f64,
}

pub fn published_figures(pipeline: Pipeline) -> PublishedFigures {
    match pipeline {
        Pipeline::Classic => PublishedFigures {
            delay_s: 90.0,
            execution_time_s: 60.0,
            max_distance_m: 30.0,
        },
        Pipeline::Image => PublishedFigures {
            delay_s: 15.0,
            execution_time_s: 5.0,
            max_distance_m: 10.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub pipeline: Pipeline,
    pub model: String,
    /// Confirmation time minus onset on the delay scene; `None` on a miss.
    pub detection_delay_s: Option<f64>,
    pub position_error_m: Option<f64>,
    pub false_alarms: usize,
    pub false_alarm_seconds: f64,
    pub false_alarms_per_month: f64,
    /// Extrapolated from the simulated array to the full fiber.
    pub false_alarms_per_month_fiber: f64,
    /// Mean wall clock of one scene run over the whole suite.
    pub execution_time_s: f64,
    /// Wall clock per 60 s of data at the simulated sensor count.
    pub execution_time_per_60s_s: f64,
    /// Linear extrapolation of the previous figure to the full fiber.
    pub execution_time_fiber_60s_s: f64,
    pub max_detection_distance_m: Option<f64>,
    pub detection_rate_by_offset: Vec<(f64, f64)>,
    pub throughput_samples_per_s: f64,
    pub published: PublishedFigures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub seed: u64,
    pub sensor_count: usize,
    pub sensor_spacing_m: f64,
    pub duration_s: f64,
    pub fiber_length_m: f64,
    pub pipelines: Vec<PipelineMetrics>,
    /// Classic over image execution time.
    pub speedup: f64,
}

/// Report plus every event raised, grouped by run in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub report: MetricsReport,
    pub events: Vec<EventRecord>,
}

/// Models the benchmark runs with.
pub struct TrainedModels {
    pub classic: ClassicModel,
    pub cnn: CnnModel,
}

pub fn train_models(config: &BenchConfig) -> Result<TrainedModels> {
    let [exc, other] = config.classic_train;
    let data = feature_dataset(&config.training_suite, exc, other)?;
    let (train, holdout, _) = data.split3(0.8, 0.2, config.seed);
    let classic = ClassicModel::train(config.classifier, &train, Some(&holdout), &TrainSettings::default())?;
    let patches = patch_dataset(&config.training_suite, config.cnn_patches_per_class)?;
    let (cnn, _) = train_cnn(&patches, &config.cnn)?;
    Ok(TrainedModels { classic, cnn })
}

struct Runs {
    classic: RunOutput,
    image: RunOutput,
}

/// Wall clock and samples summed over every run, `[classic, image]`.
#[derive(Default)]
struct Timing {
    elapsed_s: [f64; 2],
    samples: [usize; 2],
    runs: usize,
}

fn run_both(config: &BenchConfig, models: &TrainedModels, trace: &RawTrace, timing: &mut Timing) -> Result<Runs> {
    let runs = Runs {
        classic: run_classic(trace, &models.classic, &config.classic_policy, config.sensor_spacing_m)?,
        image: run_image(trace, &models.cnn, &config.image_policy, config.sensor_spacing_m)?,
    };
    for (i, run) in [&runs.classic, &runs.image].into_iter().enumerate() {
        timing.elapsed_s[i] += run.elapsed_s;
        timing.samples[i] += run.samples;
    }
    timing.runs += 1;
    Ok(runs)
}

fn first_match<'a>(events: &'a [EventRecord], truth: &GroundTruth, radius: f64) -> Option<&'a EventRecord> {
    events
        .iter()
        .filter(|e| e.t_confirmed >= truth.onset_s && (e.position_m - truth.position_m).abs() <= radius)
        .min_by(|a, b| a.t_confirmed.total_cmp(&b.t_confirmed))
}

/// Runs the full suite with already trained models.
pub fn benchmark_with(config: &BenchConfig, models: &TrainedModels) -> Result<BenchOutput> {
    config.validate()?;
    let mut events = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut timing = Timing::default();

    // Delay scene: one excavator at the array centre plus a distant highway.
    let truth = GroundTruth {
        onset_s: config.onset_s,
        position_m: config.centre_m(),
    };
    let mut scene = config.base_scene(rng.gen());
    scene.sources.push(SourceSpec::new(
        SourceKind::Excavator,
        truth.position_m,
        truth.onset_s,
        config.duration_s,
        config.excavator_amplitude,
    ));
    scene.sources.push(
        SourceSpec::new(SourceKind::Highway, 0.1 * config.centre_m(), 0.0, config.duration_s, 1.0).with_offset(3.0),
    );
    let delay_runs = run_both(config, models, &synth_scene(&scene)?, &mut timing)?;
    events.extend_from_slice(&delay_runs.classic.events);
    events.extend_from_slice(&delay_runs.image.events);

    // Noise-only scenes for false alarms.
    let mut fa = [0usize; 2];
    for _ in 0..config.false_alarm_scenes {
        let scene = config.base_scene(rng.gen());
        let runs = run_both(config, models, &synth_scene(&scene)?, &mut timing)?;
        fa[0] += runs.classic.events.len();
        fa[1] += runs.image.events.len();
        events.extend_from_slice(&runs.classic.events);
        events.extend_from_slice(&runs.image.events);
    }
    let fa_seconds = config.false_alarm_scenes as f64 * config.duration_s;

    // Range: detection rate per perpendicular offset.
    let mut rates = [Vec::new(), Vec::new()];
    for &offset in &config.offsets_m {
        let mut hits = [0usize; 2];
        for _ in 0..config.trials_per_offset {
            let mut scene = config.base_scene(rng.gen());
            let jitter = rng.gen_range(-4i64..=4) as f64 * config.sensor_spacing_m;
            let g = GroundTruth {
                onset_s: config.onset_s,
                position_m: config.centre_m() + jitter,
            };
            scene.sources.push(
                SourceSpec::new(SourceKind::Excavator, g.position_m, g.onset_s, config.duration_s, config.excavator_amplitude)
                    .with_offset(offset),
            );
            let runs = run_both(config, models, &synth_scene(&scene)?, &mut timing)?;
            for (i, (run, policy)) in [(&runs.classic, &config.classic_policy), (&runs.image, &config.image_policy)]
                .into_iter()
                .enumerate()
            {
                if detection_delay(&run.events, &[g], policy.radius_m)[0].is_some() {
                    hits[i] += 1;
                }
            }
            events.extend_from_slice(&runs.classic.events);
            events.extend_from_slice(&runs.image.events);
        }
        for i in 0..2 {
            rates[i].push((offset, hits[i] as f64 / config.trials_per_offset as f64));
        }
    }

    let scale_60 = 60.0 / config.duration_s;
    let fiber_scale = config.fiber_sensors() / config.sensor_count as f64;
    let metrics = |run: &RunOutput, policy: &AlarmPolicy, fa: usize, rates: Vec<(f64, f64)>, model: String| {
        let i = usize::from(run.pipeline == Pipeline::Image);
        let mean_elapsed = timing.elapsed_s[i] / timing.runs as f64;
        let throughput = if timing.elapsed_s[i] > 0.0 {
            timing.samples[i] as f64 / timing.elapsed_s[i]
        } else {
            0.0
        };
        let delay = mean_delay(&detection_delay(&run.events, &[truth], policy.radius_m));
        let position_error_m =
            first_match(&run.events, &truth, policy.radius_m).map(|e| (e.position_m - truth.position_m).abs());
        let mut sorted = rates.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let max_detection_distance_m = sorted
            .iter()
            .take_while(|(_, r)| *r >= RANGE_RELIABILITY)
            .last()
            .map(|(d, _)| *d);
        let per_month = fa as f64 * SECONDS_PER_MONTH / fa_seconds;
        PipelineMetrics {
            pipeline: run.pipeline,
            model,
            detection_delay_s: delay,
            position_error_m,
            false_alarms: fa,
            false_alarm_seconds: fa_seconds,
            false_alarms_per_month: per_month,
            false_alarms_per_month_fiber: per_month * fiber_scale,
            execution_time_s: mean_elapsed,
            execution_time_per_60s_s: mean_elapsed * scale_60,
            execution_time_fiber_60s_s: mean_elapsed * scale_60 * fiber_scale,
            max_detection_distance_m,
            detection_rate_by_offset: rates,
            throughput_samples_per_s: throughput,
            published: published_figures(run.pipeline),
        }
    };
    let [classic_rates, image_rates] = rates;
    let classic = metrics(
        &delay_runs.classic,
        &config.classic_policy,
        fa[0],
        classic_rates,
        config.classifier.name().to_string(),
    );
    let image = metrics(&delay_runs.image, &config.image_policy, fa[1], image_rates, "cnn".to_string());
    let speedup = if image.execution_time_s > 0.0 {
        classic.execution_time_s / image.execution_time_s
    } else {
        0.0
    };
    Ok(BenchOutput {
        report: MetricsReport {
            schema: REPORT_SCHEMA.to_string(),
            seed: config.seed,
            sensor_count: config.sensor_count,
            sensor_spacing_m: config.sensor_spacing_m,
            duration_s: config.duration_s,
            fiber_length_m: config.fiber_length_m,
            pipelines: vec![classic, image],
            speedup,
        },
        events,
    })
}

/// Trains both models and runs the suite.
pub fn benchmark(config: &BenchConfig) -> Result<BenchOutput> {
    config.validate()?;
    let models = train_models(config)?;
    benchmark_with(config, &models)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "miss".to_string(), |x| format!("{x:.digits$}"))
}

/// Aligned text table of the report, measured rows then published rows.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    let header = [
        "pipeline",
        "delay [s]",
        "FA/month",
        "exec/60s [s]",
        "exec fiber/60s [s]*",
        "max dist [m]",
        "samples/s",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for p in &report.pipelines {
        rows.push(vec![
            format!("{} ({})", p.pipeline.name(), p.model),
            opt(p.detection_delay_s, 0),
            format!("{:.2}", p.false_alarms_per_month),
            format!("{:.3}", p.execution_time_per_60s_s),
            format!("{:.1}", p.execution_time_fiber_60s_s),
            opt(p.max_detection_distance_m, 0),
            format!("{:.3e}", p.throughput_samples_per_s),
        ]);
    }
    for p in &report.pipelines {
        rows.push(vec![
            format!("{} (published)", p.pipeline.name()),
            format!("{:.0}", p.published.delay_s),
            "<1".to_string(),
            "-".to_string(),
            format!("{:.0}", p.published.execution_time_s),
            format!("{:.0}", p.published.max_distance_m),
            "-".to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    let _ = writeln!(
        out,
        "* extrapolated linearly from {} sensors to {:.0} m of fiber; classic/image time ratio {:.1}",
        report.sensor_count, report.fiber_length_m, report.speedup
    );
    out
}
