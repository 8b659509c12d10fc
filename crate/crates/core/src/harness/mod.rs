//! End-to-end pipelines, training-set builders, delay metrics and the
//! benchmark report.

pub mod datasets;
mod pipeline;

pub use datasets::{feature_dataset, labeled_features, patch_dataset, trace_features, SceneSuite};
pub use pipeline::{detection_delay, mean_delay, run_classic, run_image, GroundTruth, RunOutput};
pub mod bench;

pub use bench::{benchmark, benchmark_with, render_table, train_models, BenchConfig, BenchOutput, MetricsReport, PipelineMetrics, TrainedModels};
