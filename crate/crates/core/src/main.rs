use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use das_core::classic::{ClassicModel, ClassifierKind, Dataset, TrainSettings};
use das_core::cnn::{read_checkpoint, train_cnn, write_checkpoint, TrainConfig};
use das_core::dsp::{build_patches, FeatureVector, DEFAULT_LOWPASS_ALPHA};
use das_core::harness::{benchmark, patch_dataset, render_table, run_classic, run_image, trace_features, BenchConfig, SceneSuite};
use das_core::ingest::{read_labels, read_trace, write_labels, write_trace, LabelMask, RawTrace};
use das_core::synthgen::{label_grid, synth_scene, SceneConfig};
use das_core::tracker::{write_events, AlarmPolicy, EventRecord};
use das_core::{Class, Error};

/// Excavation event detection on distributed acoustic sensing traces.
#[derive(Parser, Debug)]
#[command(name = "das", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = PipelineChoice::Both)]
    pipeline: PipelineChoice,
    /// Output path (a directory for `bench`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PipelineChoice {
    Classic,
    Image,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Svm,
    Tree,
    PrunedTree,
    Mlp,
}

impl From<ClassifierArg> for ClassifierKind {
    fn from(c: ClassifierArg) -> Self {
        match c {
            ClassifierArg::Svm => ClassifierKind::Svm,
            ClassifierArg::Tree => ClassifierKind::Tree,
            ClassifierArg::PrunedTree => ClassifierKind::PrunedTree,
            ClassifierArg::Mlp => ClassifierKind::Mlp,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Scene JSON to a DAS1 trace plus a JSONL label file.
    Synth {
        /// Label output; defaults to the trace path with a `.labels.jsonl` suffix.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// DAS1 trace to JSONL feature rows, labeled when a label file is given.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Labeled feature rows to a classic model JSON.
    TrainClassic {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ClassifierArg::Svm)]
        classifier: ClassifierArg,
    },
    /// Waterfall patches to a CNN1 checkpoint. Patches come from a labeled
    /// trace when `--input` is given, otherwise from the synthetic suite.
    TrainCnn {
        #[arg(long, requires = "labels")]
        input: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// DAS1 trace plus models to JSONL events.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        classic_model: Option<PathBuf>,
        #[arg(long)]
        cnn_model: Option<PathBuf>,
    },
    /// Trains both pipelines and writes the metrics report, the event log
    /// and a text table.
    Bench,
}

/// `train-classic` configuration.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ClassicJob {
    settings: TrainSettings,
    seed: u64,
}

/// `train-cnn` configuration.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct CnnJob {
    train: TrainConfig,
    suite: SceneSuite,
    patches_per_class: usize,
}

impl Default for CnnJob {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            suite: SceneSuite::default(),
            patches_per_class: 200,
        }
    }
}

/// `detect` configuration.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct DetectJob {
    sensor_spacing_m: f64,
    classic_policy: AlarmPolicy,
    image_policy: AlarmPolicy,
}

impl Default for DetectJob {
    fn default() -> Self {
        Self {
            sensor_spacing_m: 4.0,
            classic_policy: AlarmPolicy::classic(),
            image_policy: AlarmPolicy::image(),
        }
    }
}

/// One line of the `features` output.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    #[serde(flatten)]
    feature: FeatureVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<Class>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core { source, .. } if source.is_numeric() => 3,
            CliError::Core { .. } => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<Error>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Core {
            context: what(),
            source: e.into(),
        })
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).map(BufWriter::new).context(|| format!("creating {}", path.display()))
}

fn parse_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).context(|| format!("parsing {}", path.display()))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), parse_json)
}

fn required_out(common: &Common) -> CliResult<&Path> {
    common.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn load_trace(path: &Path) -> CliResult<RawTrace> {
    read_trace(open(path)?).context(|| format!("reading {}", path.display()))
}

fn load_labels(path: &Path, trace: &RawTrace) -> CliResult<LabelMask> {
    let seconds = trace.sample_count() / trace.sample_rate_hz() as usize;
    read_labels(open(path)?, trace.sensor_count(), seconds).context(|| format!("reading {}", path.display()))
}

fn synth(common: &Common, labels: Option<&Path>) -> CliResult<()> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("synth needs a scene --config".into()))?;
    let mut scene: SceneConfig = parse_json(path)?;
    if let Some(seed) = common.seed {
        scene.seed = seed;
    }
    let out = required_out(common)?;
    let trace = synth_scene(&scene).context(|| "synthesizing scene".into())?;
    let mask = label_grid(&scene).context(|| "labeling scene".into())?;
    write_trace(&trace, create(out)?).context(|| format!("writing {}", out.display()))?;
    let label_path = labels.map_or_else(|| out.with_extension("labels.jsonl"), Path::to_path_buf);
    write_labels(&mask, create(&label_path)?).context(|| format!("writing {}", label_path.display()))?;
    eprintln!(
        "wrote {} ({} sensors, {} samples) and {}",
        out.display(),
        trace.sensor_count(),
        trace.sample_count(),
        label_path.display()
    );
    Ok(())
}

fn features(common: &Common, input: &Path, labels: Option<&Path>) -> CliResult<()> {
    let trace = load_trace(input)?;
    let mask = labels.map(|p| load_labels(p, &trace)).transpose()?;
    let feats = trace_features(&trace).context(|| "extracting features".into())?;
    let out = required_out(common)?;
    let mut dst = create(out)?;
    let mut rows = 0;
    for feature in feats.into_iter().flatten() {
        let class = mask
            .as_ref()
            .map(|m| Class::from_kind(m.get(feature.sensor_index, feature.start_s as usize).kind));
        let line = serde_json::to_string(&FeatureRow { feature, class }).context(|| "encoding row".into())?;
        writeln!(dst, "{line}").context(|| format!("writing {}", out.display()))?;
        rows += 1;
    }
    dst.flush().context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {rows} feature rows to {}", out.display());
    Ok(())
}

fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureRow =
            serde_json::from_str(&line).context(|| format!("{}:{}", path.display(), i + 1))?;
        let class = row
            .class
            .ok_or_else(|| CliError::Usage(format!("{}:{}: row has no class; pass --labels to `features`", path.display(), i + 1)))?;
        features.push(row.feature.values);
        targets.push(class);
    }
    Dataset::new(features, targets).context(|| format!("loading {}", path.display()))
}

fn train_classic(common: &Common, input: &Path, kind: ClassifierKind) -> CliResult<()> {
    let mut job: ClassicJob = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        job.seed = seed;
    }
    let out = required_out(common)?;
    let data = read_dataset(input)?;
    let (train, holdout, test) = data.split3(0.7, 0.15, job.seed);
    let model = ClassicModel::train(kind, &train, Some(&holdout), &job.settings).context(|| format!("training {}", kind.name()))?;
    let metrics = model.evaluate(&test).context(|| "evaluating".into())?;
    model.to_writer(create(out)?).context(|| format!("writing {}", out.display()))?;
    println!(
        "{}: test accuracy {:.4} on {} rows ({} train, {} holdout)",
        kind.name(),
        metrics.accuracy,
        test.len(),
        train.len(),
        holdout.len()
    );
    Ok(())
}

fn train_cnn_cmd(common: &Common, input: Option<&Path>, labels: Option<&Path>) -> CliResult<()> {
    let mut job: CnnJob = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        job.train.seed = seed;
        job.suite.seed = seed;
    }
    let out = required_out(common)?;
    let patches = match (input, labels) {
        (Some(input), Some(labels)) => {
            let trace = load_trace(input)?;
            let mask = load_labels(labels, &trace)?;
            build_patches(&trace, Some(&mask), DEFAULT_LOWPASS_ALPHA).context(|| "building patches".into())?
        }
        _ => patch_dataset(&job.suite, job.patches_per_class).context(|| "building patches".into())?,
    };
    let (model, report) = train_cnn(&patches, &job.train).context(|| "training cnn".into())?;
    write_checkpoint(&model, create(out)?).context(|| format!("writing {}", out.display()))?;
    println!(
        "cnn: {} patches, {} epochs, training accuracy {:.4}, final loss {:.4}",
        patches.len(),
        report.epochs_run,
        report.train_accuracy,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn detect(common: &Common, input: &Path, classic: Option<&Path>, cnn: Option<&Path>) -> CliResult<()> {
    let job: DetectJob = load_config(common.config.as_deref())?;
    let out = required_out(common)?;
    let trace = load_trace(input)?;
    let want = |p: PipelineChoice| common.pipeline == p || common.pipeline == PipelineChoice::Both;
    let mut events: Vec<EventRecord> = Vec::new();
    if want(PipelineChoice::Classic) {
        let path = classic.ok_or_else(|| CliError::Usage("classic pipeline needs --classic-model".into()))?;
        let model = ClassicModel::from_reader(open(path)?).context(|| format!("reading {}", path.display()))?;
        let run = run_classic(&trace, &model, &job.classic_policy, job.sensor_spacing_m).context(|| "classic pipeline".into())?;
        eprintln!("classic: {} detections, {} events, {:.3} s", run.detections, run.events.len(), run.elapsed_s);
        events.extend(run.events);
    }
    if want(PipelineChoice::Image) {
        let path = cnn.ok_or_else(|| CliError::Usage("image pipeline needs --cnn-model".into()))?;
        let model = read_checkpoint(open(path)?).context(|| format!("reading {}", path.display()))?;
        let run = run_image(&trace, &model, &job.image_policy, job.sensor_spacing_m).context(|| "image pipeline".into())?;
        eprintln!("image: {} detections, {} events, {:.3} s", run.detections, run.events.len(), run.elapsed_s);
        events.extend(run.events);
    }
    // Merged log in confirmation order; the sort is stable so ties keep
    // pipeline order.
    events.sort_by(|a, b| a.t_confirmed.total_cmp(&b.t_confirmed));
    write_events(&events, create(out)?).context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn bench(common: &Common) -> CliResult<()> {
    let mut config: BenchConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("bench-out"));
    let result = benchmark(&config).context(|| "benchmark".into())?;
    let report_path = out.join("report.json");
    let mut dst = create(&report_path)?;
    serde_json::to_writer_pretty(&mut dst, &result.report).context(|| "encoding report".into())?;
    writeln!(dst).and_then(|_| dst.flush()).context(|| format!("writing {}", report_path.display()))?;
    let events_path = out.join("events.jsonl");
    write_events(&result.events, create(&events_path)?).context(|| format!("writing {}", events_path.display()))?;
    print!("{}", render_table(&result.report));
    eprintln!("wrote {} and {}", report_path.display(), events_path.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let c = &cli.common;
    match &cli.command {
        Command::Synth { labels } => synth(c, labels.as_deref()),
        Command::Features { input, labels } => features(c, input, labels.as_deref()),
        Command::TrainClassic { input, classifier } => train_classic(c, input, (*classifier).into()),
        Command::TrainCnn { input, labels } => train_cnn_cmd(c, input.as_deref(), labels.as_deref()),
        Command::Detect {
            input,
            classic_model,
            cnn_model,
        } => detect(c, input, classic_model.as_deref(), cnn_model.as_deref()),
        Command::Bench => bench(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
