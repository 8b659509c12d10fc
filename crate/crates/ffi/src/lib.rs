//! C ABI over `das-core`.
//!
//! Every fallible call returns a [`DasStatus`]; on failure the message is
//! kept per thread and read with [`das_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_read`/`*_load` calls and released with the
//! matching `*_free`, which accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use das_core::classic::ClassicModel;
use das_core::cnn::{read_checkpoint, write_checkpoint, CnnModel};
use das_core::dsp::{feature_fft100, FEATURE_LEN};
use das_core::harness::{run_classic, run_image};
use das_core::ingest::{read_trace, write_trace, RawTrace, Window};
use das_core::synthgen::{attenuate, synth_scene, SceneConfig};
use das_core::tracker::{far_estimate, AlarmPolicy, Detection, EventRecord, Pipeline, Tracker};
use das_core::{Class, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// Pipeline selector; also the class of detections and events.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DasPipeline {
    Classic = 0,
    Image = 1,
}

impl From<DasPipeline> for Pipeline {
    fn from(p: DasPipeline) -> Self {
        match p {
            DasPipeline::Classic => Pipeline::Classic,
            DasPipeline::Image => Pipeline::Image,
        }
    }
}

impl From<Pipeline> for DasPipeline {
    fn from(p: Pipeline) -> Self {
        match p {
            Pipeline::Classic => DasPipeline::Classic,
            Pipeline::Image => DasPipeline::Image,
        }
    }
}

/// Single-sensor detection fed to a tracker.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DasDetection {
    pub time_s: f64,
    pub position_m: f64,
    pub probability: f64,
}

/// Confirmed event.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DasEvent {
    pub t_confirmed: f64,
    pub position_m: f64,
    pub probability: f64,
    pub pipeline: DasPipeline,
    pub track_length: usize,
}

impl From<&EventRecord> for DasEvent {
    fn from(e: &EventRecord) -> Self {
        Self {
            t_confirmed: e.t_confirmed,
            position_m: e.position_m,
            probability: e.probability,
            pipeline: e.pipeline.into(),
            track_length: e.track_length,
        }
    }
}

/// Opaque DAS1 trace.
pub struct DasTrace(RawTrace);
/// Opaque spectral-feature classifier.
pub struct DasClassicModel(ClassicModel);
/// Opaque CNN.
pub struct DasCnnModel(CnnModel);
/// Opaque incremental tracker.
pub struct DasTracker {
    inner: Tracker,
    pipeline: Pipeline,
    events: Vec<EventRecord>,
}
/// Opaque list of events produced by a pipeline run.
pub struct DasEvents(Vec<EventRecord>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DasStatus {
    match e {
        Error::Io(_) => DasStatus::Io,
        Error::Json(_) | Error::BadMagic { .. } | Error::VersionMismatch { .. } | Error::Truncated { .. } => {
            DasStatus::Format
        }
        Error::NonConvergence { .. } | Error::Divergence { .. } => DasStatus::Numeric,
        _ => DasStatus::InvalidArgument,
    }
}

struct Fail(DasStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn null(what: &str) -> Fail {
    Fail(DasStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DasStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording its error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DasStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DasStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn das_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn das_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Synthesizes a trace from a scene description in JSON.
///
/// # Safety
/// `scene_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_synth_scene(scene_json: *const c_char, out: *mut *mut DasTrace) -> DasStatus {
    guard(|| {
        let cfg: SceneConfig = serde_json::from_str(str_arg(scene_json, "scene_json")?).map_err(Error::from)?;
        let trace = synth_scene(&cfg)?;
        write_out(out, boxed(DasTrace(trace)), "out")
    })
}

/// Reads a DAS1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_trace_read(path: *const c_char, out: *mut *mut DasTrace) -> DasStatus {
    guard(|| {
        let f = File::open(str_arg(path, "path")?)?;
        let trace = read_trace(BufReader::new(f))?;
        write_out(out, boxed(DasTrace(trace)), "out")
    })
}

/// Writes a DAS1 file.
///
/// # Safety
/// `trace` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn das_trace_write(trace: *const DasTrace, path: *const c_char) -> DasStatus {
    guard(|| {
        let trace = ref_arg(trace, "trace")?;
        let f = File::create(str_arg(path, "path")?)?;
        write_trace(&trace.0, BufWriter::new(f))?;
        Ok(())
    })
}

/// Shape of a trace. Any output pointer may be null.
///
/// # Safety
/// `trace` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_trace_info(
    trace: *const DasTrace,
    sensor_count: *mut usize,
    sample_rate_hz: *mut u32,
    sample_count: *mut usize,
) -> DasStatus {
    guard(|| {
        let t = &ref_arg(trace, "trace")?.0;
        if !sensor_count.is_null() {
            sensor_count.write(t.sensor_count());
        }
        if !sample_rate_hz.is_null() {
            sample_rate_hz.write(t.sample_rate_hz());
        }
        if !sample_count.is_null() {
            sample_count.write(t.sample_count());
        }
        Ok(())
    })
}

/// Time-major samples; `sample_count * sensor_count` values.
///
/// # Safety
/// `trace` must come from this library. The pointer lives as long as the trace.
#[no_mangle]
pub unsafe extern "C" fn das_trace_samples(trace: *const DasTrace) -> *const f32 {
    trace.as_ref().map_or(ptr::null(), |t| t.0.samples().as_ptr())
}

/// # Safety
/// `trace` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn das_trace_free(trace: *mut DasTrace) {
    free(trace)
}

/// Amplitude of a source seen at `distance_m` with attenuation `alpha` (1/m).
#[no_mangle]
pub extern "C" fn das_attenuate(amplitude: f64, distance_m: f64, alpha: f64) -> f64 {
    attenuate(amplitude, distance_m, alpha)
}

/// First 100 one-sided spectral magnitudes of a window. `out` receives
/// [`DAS_FEATURE_LEN`] values.
///
/// # Safety
/// `samples` must hold `len` values and `out` room for 100.
#[no_mangle]
pub unsafe extern "C" fn das_feature_fft100(
    samples: *const f64,
    len: usize,
    sample_rate_hz: u32,
    out: *mut f64,
) -> DasStatus {
    guard(|| {
        let samples = slice_arg(samples, len, "samples")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let f = feature_fft100(&Window {
            sensor_index: 0,
            start_s: 0.0,
            sample_rate_hz,
            samples: samples.to_vec(),
        })?;
        std::slice::from_raw_parts_mut(out, FEATURE_LEN).copy_from_slice(&f.values);
        Ok(())
    })
}

/// Length of a feature vector.
pub const DAS_FEATURE_LEN: usize = 100;
const _: () = assert!(DAS_FEATURE_LEN == FEATURE_LEN);

/// Loads a classic model from its JSON document.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_classic_model_from_json(json: *const c_char, out: *mut *mut DasClassicModel) -> DasStatus {
    guard(|| {
        let model = ClassicModel::from_reader(str_arg(json, "json")?.as_bytes())?;
        write_out(out, boxed(DasClassicModel(model)), "out")
    })
}

/// Loads a classic model JSON file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_classic_model_read(path: *const c_char, out: *mut *mut DasClassicModel) -> DasStatus {
    guard(|| {
        let f = File::open(str_arg(path, "path")?)?;
        let model = ClassicModel::from_reader(BufReader::new(f))?;
        write_out(out, boxed(DasClassicModel(model)), "out")
    })
}

/// Classifies one feature vector. `is_excavator` receives 1 or 0 and
/// `probability` the excavator probability; either may be null.
///
/// # Safety
/// `model` must come from this library and `features` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn das_classic_predict(
    model: *const DasClassicModel,
    features: *const f64,
    len: usize,
    is_excavator: *mut i32,
    probability: *mut f64,
) -> DasStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let p = model.predict(slice_arg(features, len, "features")?)?;
        write_prediction(p.label, p.probability, is_excavator, probability);
        Ok(())
    })
}

unsafe fn write_prediction(label: Class, p: f64, is_excavator: *mut i32, probability: *mut f64) {
    if !is_excavator.is_null() {
        is_excavator.write(i32::from(label == Class::Excavator));
    }
    if !probability.is_null() {
        probability.write(p);
    }
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn das_classic_model_free(model: *mut DasClassicModel) {
    free(model)
}

/// Reads a CNN1 checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_cnn_model_read(path: *const c_char, out: *mut *mut DasCnnModel) -> DasStatus {
    guard(|| {
        let f = File::open(str_arg(path, "path")?)?;
        let model = read_checkpoint(BufReader::new(f))?;
        write_out(out, boxed(DasCnnModel(model)), "out")
    })
}

/// Writes a CNN1 checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn das_cnn_model_write(model: *const DasCnnModel, path: *const c_char) -> DasStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let f = File::create(str_arg(path, "path")?)?;
        write_checkpoint(&model.0, BufWriter::new(f))?;
        Ok(())
    })
}

/// Classifies one `rows x cols` row-major patch.
///
/// # Safety
/// `model` must come from this library and `pixels` hold `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn das_cnn_predict(
    model: *const DasCnnModel,
    pixels: *const f64,
    rows: usize,
    cols: usize,
    is_excavator: *mut i32,
    probability: *mut f64,
) -> DasStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        if rows != model.shape.in_h || cols != model.shape.in_w {
            return Err(invalid(format!(
                "patch is {rows}x{cols}, model expects {}x{}",
                model.shape.in_h, model.shape.in_w
            )));
        }
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("patch size overflows"))?;
        let p = model.probabilities(slice_arg(pixels, len, "pixels")?)?;
        let exc = p[Class::Excavator.index()];
        let label = if exc > p[Class::Other.index()] { Class::Excavator } else { Class::Other };
        write_prediction(label, exc, is_excavator, probability);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn das_cnn_model_free(model: *mut DasCnnModel) {
    free(model)
}

/// Expected false confirmations of a `confirm_count`-detection rule over
/// `sensors` independent sensors and `horizon_s` seconds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_far_estimate(
    p_false: f64,
    confirm_count: usize,
    sensors: usize,
    horizon_s: f64,
    out: *mut f64,
) -> DasStatus {
    guard(|| write_out(out, far_estimate(p_false, confirm_count, sensors, horizon_s)?, "out"))
}

/// Tracker with the default policy of `pipeline`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_tracker_new(pipeline: DasPipeline, out: *mut *mut DasTracker) -> DasStatus {
    guard(|| {
        let pipeline = Pipeline::from(pipeline);
        let inner = Tracker::new(AlarmPolicy::for_pipeline(pipeline))?;
        write_out(
            out,
            boxed(DasTracker {
                inner,
                pipeline,
                events: Vec::new(),
            }),
            "out",
        )
    })
}

/// Tracker with an explicit policy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_tracker_new_with_policy(
    pipeline: DasPipeline,
    radius_m: f64,
    confirm_count: usize,
    gap_tolerance_s: f64,
    min_probability: f64,
    out: *mut *mut DasTracker,
) -> DasStatus {
    guard(|| {
        let policy = AlarmPolicy {
            radius_m,
            confirm_count,
            gap_tolerance_s,
            min_probability,
        };
        let inner = Tracker::new(policy)?;
        write_out(
            out,
            boxed(DasTracker {
                inner,
                pipeline: pipeline.into(),
                events: Vec::new(),
            }),
            "out",
        )
    })
}

/// Feeds all detections of time step `t_s`. Every detection must carry
/// `time_s == t_s`, and steps must be strictly increasing. `new_events`
/// (nullable) receives the number of events confirmed by this step.
///
/// # Safety
/// `tracker` must come from this library and `detections` hold `count` items.
#[no_mangle]
pub unsafe extern "C" fn das_tracker_step(
    tracker: *mut DasTracker,
    t_s: f64,
    detections: *const DasDetection,
    count: usize,
    new_events: *mut usize,
) -> DasStatus {
    guard(|| {
        let tracker = tracker.as_mut().ok_or_else(|| null("tracker"))?;
        let dets = slice_arg(detections, count, "detections")?
            .iter()
            .map(|d| Detection::new(d.time_s, d.position_m, d.probability, tracker.pipeline))
            .collect::<Result<Vec<_>, _>>()?;
        let fresh = tracker.inner.step(t_s, &dets)?;
        if !new_events.is_null() {
            new_events.write(fresh.len());
        }
        tracker.events.extend(fresh);
        Ok(())
    })
}

/// Number of events confirmed so far.
///
/// # Safety
/// `tracker` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn das_tracker_event_count(tracker: *const DasTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.events.len())
}

/// Event `index` in confirmation order.
///
/// # Safety
/// `tracker` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_tracker_event(tracker: *const DasTracker, index: usize, out: *mut DasEvent) -> DasStatus {
    guard(|| {
        let t = ref_arg(tracker, "tracker")?;
        let e = t
            .events
            .get(index)
            .ok_or_else(|| invalid(format!("event {index} out of range ({} events)", t.events.len())))?;
        write_out(out, e.into(), "out")
    })
}

/// # Safety
/// `tracker` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn das_tracker_free(tracker: *mut DasTracker) {
    free(tracker)
}

/// Runs the spectral-feature pipeline with its default policy.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_run_classic(
    trace: *const DasTrace,
    model: *const DasClassicModel,
    sensor_spacing_m: f64,
    out: *mut *mut DasEvents,
) -> DasStatus {
    guard(|| {
        let trace = &ref_arg(trace, "trace")?.0;
        let model = &ref_arg(model, "model")?.0;
        let run = run_classic(trace, model, &AlarmPolicy::classic(), sensor_spacing_m)?;
        write_out(out, boxed(DasEvents(run.events)), "out")
    })
}

/// Runs the waterfall-image pipeline with its default policy.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_run_image(
    trace: *const DasTrace,
    model: *const DasCnnModel,
    sensor_spacing_m: f64,
    out: *mut *mut DasEvents,
) -> DasStatus {
    guard(|| {
        let trace = &ref_arg(trace, "trace")?.0;
        let model = &ref_arg(model, "model")?.0;
        let run = run_image(trace, model, &AlarmPolicy::image(), sensor_spacing_m)?;
        write_out(out, boxed(DasEvents(run.events)), "out")
    })
}

/// # Safety
/// `events` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn das_events_count(events: *const DasEvents) -> usize {
    events.as_ref().map_or(0, |e| e.0.len())
}

/// # Safety
/// `events` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn das_events_get(events: *const DasEvents, index: usize, out: *mut DasEvent) -> DasStatus {
    guard(|| {
        let list = &ref_arg(events, "events")?.0;
        let e = list
            .get(index)
            .ok_or_else(|| invalid(format!("event {index} out of range ({} events)", list.len())))?;
        write_out(out, e.into(), "out")
    })
}

/// # Safety
/// `events` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn das_events_free(events: *mut DasEvents) {
    free(events)
}
