//! Recordings, segmentation, windowing and train/test splitting.
//!
//! A [`Recording`] is a multichannel time series with one movement label and
//! one repetition index per sample, in the NinaPro column convention: label 0
//! is rest, labels 1.. are movements, and each movement occurrence carries a
//! 1-based repetition index. Published write-ups number classes from 1 with
//! rest first; [`display_label`]/[`internal_label`] convert between the two
//! conventions.
//!
//! The processing chain is: segment the recording into constant-label runs,
//! cut each run into fixed-length sliding windows, route windows into train
//! and test sets by repetition index, and thin the training stream by keeping
//! every `stride`-th window.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

use crate::error::{Error, Result};

/// Internal class id of the rest state.
pub const REST_CLASS: usize = 0;

/// Default acquisition rate (Hz) of the supported recordings.
pub const DEFAULT_SAMPLE_RATE: f64 = 2000.0;

/// Default analysis window length in samples (200 ms at 2 kHz).
pub const DEFAULT_WINDOW_LEN: usize = 400;

/// Default window shift in samples (10 ms at 2 kHz).
pub const DEFAULT_WINDOW_SHIFT: usize = 20;

/// Default training-stream thinning factor.
pub const DEFAULT_SUBSAMPLE_STRIDE: usize = 10;

/// Default repetition indices used for training.
pub const DEFAULT_TRAIN_REPS: [u32; 4] = [1, 3, 4, 6];

/// Default repetition indices held out for testing.
pub const DEFAULT_TEST_REPS: [u32; 2] = [2, 5];

/// Converts an internal 0-based class id (0 = rest) to the 1-based label
/// used in reports (1 = rest).
pub fn display_label(class_id: usize) -> usize {
    class_id + 1
}

/// Inverse of [`display_label`].
pub fn internal_label(display: usize) -> Result<usize> {
    if display == 0 {
        return Err(Error::Domain("display labels are 1-based; 0 is not a valid display label".into()));
    }
    Ok(display - 1)
}

/// A multichannel recording with per-sample annotations.
#[derive(Debug, Clone)]
pub struct Recording {
    /// `T × channels` signal matrix.
    pub samples: Array2<f64>,
    /// Per-sample movement label; 0 is rest.
    pub labels: Vec<usize>,
    /// Per-sample repetition index.
    pub repetitions: Vec<u32>,
    /// Acquisition rate in Hz.
    pub sample_rate: f64,
}

impl Recording {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    /// True when the recording holds no samples.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.labels.len() != self.len() || self.repetitions.len() != self.len() {
            return Err(Error::Domain(format!(
                "annotation lengths (labels {}, repetitions {}) do not match sample count {}",
                self.labels.len(),
                self.repetitions.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// A maximal run of constant label (and repetition) cut from a recording.
#[derive(Debug, Clone)]
pub struct Segment {
    /// `len × channels` slice of the signal.
    pub samples: Array2<f64>,
    /// Movement label of the run; 0 is rest.
    pub class_id: usize,
    /// Repetition index of the run.
    pub repetition: u32,
    /// Offset of the first sample within the source recording.
    pub start: usize,
}

/// A fixed-length window cut from a segment, tagged with its origin.
#[derive(Debug, Clone)]
pub struct Window {
    /// `window_len × channels` signal slice.
    pub samples: Array2<f64>,
    pub class_id: usize,
    pub repetition: u32,
}

/// Sliding-window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WindowConfig {
    /// Window length in samples.
    pub window_len: usize,
    /// Shift between consecutive window starts, in samples.
    pub shift: usize,
}

impl WindowConfig {
    pub fn new(window_len: usize, shift: usize) -> Result<Self> {
        let cfg = WindowConfig { window_len, shift };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.shift == 0 {
            return Err(Error::Config(format!(
                "window length and shift must be positive, got {} and {}",
                self.window_len, self.shift
            )));
        }
        if self.shift > self.window_len {
            return Err(Error::Config(format!(
                "window shift {} exceeds window length {}; consecutive windows would leave gaps",
                self.shift, self.window_len
            )));
        }
        Ok(())
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_len: DEFAULT_WINDOW_LEN, shift: DEFAULT_WINDOW_SHIFT }
    }
}

/// Cuts the recording into maximal runs of constant `(label, repetition)`.
///
/// Runs are emitted in temporal order, so concatenating the segments'
/// samples, labels and repetitions reproduces the original streams exactly.
/// Splitting on the pair (rather than label alone) keeps each segment's
/// repetition index well-defined; on conventionally annotated data the two
/// notions coincide because repetitions only change across rest.
pub fn segment_by_label(recording: &Recording) -> Result<Vec<Segment>> {
    recording.validate()?;
    let mut segments = Vec::new();
    let n = recording.len();
    let mut start = 0;
    while start < n {
        let label = recording.labels[start];
        let rep = recording.repetitions[start];
        let mut end = start + 1;
        while end < n && recording.labels[end] == label && recording.repetitions[end] == rep {
            end += 1;
        }
        segments.push(Segment {
            samples: recording.samples.slice(ndarray::s![start..end, ..]).to_owned(),
            class_id: label,
            repetition: rep,
            start,
        });
        start = end;
    }
    warn_on_unbracketed(&segments);
    Ok(segments)
}

/// Indices of movement segments not bracketed by rest on both sides
/// (recording boundaries count as bracketed).
pub fn bracketing_violations(segments: &[Segment]) -> Vec<usize> {
    let mut bad = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if seg.class_id == REST_CLASS {
            continue;
        }
        let before_ok = i == 0 || segments[i - 1].class_id == REST_CLASS;
        let after_ok = i + 1 == segments.len() || segments[i + 1].class_id == REST_CLASS;
        if !(before_ok && after_ok) {
            bad.push(i);
        }
    }
    bad
}

fn warn_on_unbracketed(segments: &[Segment]) {
    for i in bracketing_violations(segments) {
        log::warn!(
            "movement segment {} (class {}, repetition {}) is not bracketed by rest",
            i,
            segments[i].class_id,
            segments[i].repetition
        );
    }
}

/// Cuts one segment into sliding windows.
///
/// A segment of length `L` yields `floor((L − window_len)/shift) + 1`
/// windows (zero when `L < window_len`); trailing samples that do not fill a
/// whole window are dropped.
pub fn window_segment(segment: &Segment, config: &WindowConfig) -> Result<Vec<Window>> {
    config.validate()?;
    let len = segment.samples.nrows();
    if len < config.window_len {
        return Ok(Vec::new());
    }
    let count = (len - config.window_len) / config.shift + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * config.shift;
        windows.push(Window {
            samples: segment.samples.slice(ndarray::s![start..start + config.window_len, ..]).to_owned(),
            class_id: segment.class_id,
            repetition: segment.repetition,
        });
    }
    Ok(windows)
}

/// Segments a whole recording and windows every segment, preserving temporal
/// order.
pub fn extract_windows(recording: &Recording, config: &WindowConfig) -> Result<Vec<Window>> {
    let mut windows = Vec::new();
    for segment in segment_by_label(recording)? {
        windows.extend(window_segment(&segment, config)?);
    }
    Ok(windows)
}

/// Routes windows into train and test sets by repetition index. Windows whose
/// repetition appears in neither list are dropped; order is preserved.
pub fn split_by_repetition(
    windows: Vec<Window>,
    train_reps: &[u32],
    test_reps: &[u32],
) -> Result<(Vec<Window>, Vec<Window>)> {
    if let Some(rep) = train_reps.iter().find(|r| test_reps.contains(r)) {
        return Err(Error::Config(format!(
            "repetition {rep} appears in both the train and test lists"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for w in windows {
        if train_reps.contains(&w.repetition) {
            train.push(w);
        } else if test_reps.contains(&w.repetition) {
            test.push(w);
        }
    }
    Ok((train, test))
}

/// Keeps every `stride`-th window, starting from index 0.
pub fn subsample(windows: Vec<Window>, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("subsample stride must be at least 1".into()));
    }
    Ok(windows.into_iter().step_by(stride).collect())
}

// ---------------------------------------------------------------------------
// CSV ingestion and export
// ---------------------------------------------------------------------------

/// Column layout of a recording CSV: one row per time sample, EMG channels
/// named `<emg_prefix><1-based index>`, plus a movement-label column and a
/// repetition column.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CsvSchema {
    /// Prefix of the EMG channel columns (`emg` matches `emg1`, `emg2`, ...).
    pub emg_prefix: String,
    /// Declared channel count; `None` accepts whatever the header holds.
    pub channels: Option<usize>,
    /// Name of the movement-label column.
    pub label_column: String,
    /// Name of the repetition column.
    pub repetition_column: String,
    /// Acquisition rate to stamp on the loaded recording, in Hz.
    pub sample_rate: f64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            emg_prefix: "emg".into(),
            channels: None,
            label_column: "restimulus".into(),
            repetition_column: "rerepetition".into(),
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Loads a recording from CSV, validating the header against the schema.
///
/// Labels and repetitions must be non-negative integers (a decimal point is
/// tolerated when the fraction is zero, e.g. `3.0`); anything else is a parse
/// error carrying the 1-based line number.
pub fn load_recording(path: &Path, schema: &CsvSchema) -> Result<Recording> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();

    // EMG columns: prefix + integer suffix, ordered by suffix.
    let mut emg_cols: Vec<(usize, usize)> = Vec::new(); // (suffix, column index)
    for (idx, name) in headers.iter().enumerate() {
        if let Some(suffix) = name.strip_prefix(schema.emg_prefix.as_str()) {
            if let Ok(ch) = suffix.parse::<usize>() {
                emg_cols.push((ch, idx));
            }
        }
    }
    emg_cols.sort_unstable();
    if emg_cols.is_empty() {
        return Err(Error::Schema(format!(
            "no columns matching prefix {:?} in {}",
            schema.emg_prefix,
            path.display()
        )));
    }
    if let Some(declared) = schema.channels {
        if emg_cols.len() != declared {
            return Err(Error::Schema(format!(
                "schema declares {} EMG channels but {} has {}",
                declared,
                path.display(),
                emg_cols.len()
            )));
        }
    }
    let label_col = headers
        .iter()
        .position(|h| h == schema.label_column)
        .ok_or_else(|| Error::Schema(format!("missing label column {:?} in {}", schema.label_column, path.display())))?;
    let rep_col = headers
        .iter()
        .position(|h| h == schema.repetition_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "missing repetition column {:?} in {}",
                schema.repetition_column,
                path.display()
            ))
        })?;

    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut repetitions = Vec::new();
    // Line 1 is the header.
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        for &(_, col) in &emg_cols {
            let cell = record.get(col).ok_or_else(|| Error::Parse {
                line,
                msg: format!("row too short: no column {col}"),
            })?;
            let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse EMG sample {cell:?} as a number"),
            })?;
            rows.push(value);
        }
        labels.push(parse_annotation(record.get(label_col), line, "label")? as usize);
        repetitions.push(parse_annotation(record.get(rep_col), line, "repetition")?);
    }
    if labels.is_empty() {
        return Err(Error::Data(format!("{} contains no samples", path.display())));
    }
    let n = labels.len();
    let channels = emg_cols.len();
    let samples = Array2::from_shape_vec((n, channels), rows)
        .expect("row buffer dimensions are consistent by construction");
    let recording = Recording { samples, labels, repetitions, sample_rate: schema.sample_rate };
    // Surface suspicious annotation structure early.
    segment_by_label(&recording)?;
    Ok(recording)
}

fn parse_annotation(cell: Option<&str>, line: usize, what: &str) -> Result<u32> {
    let cell = cell.ok_or_else(|| Error::Parse { line, msg: format!("missing {what} cell") })?;
    let value: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} {cell:?} as a number"),
    })?;
    if value.fract() != 0.0 || value < 0.0 || value > u32::MAX as f64 {
        return Err(Error::Parse {
            line,
            msg: format!("{what} {cell:?} is not a non-negative integer"),
        });
    }
    Ok(value as u32)
}

/// Writes a recording as CSV in the layout [`load_recording`] expects.
pub fn save_recording(path: &Path, recording: &Recording, schema: &CsvSchema) -> Result<()> {
    recording.validate()?;
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> =
        (1..=recording.channels()).map(|c| format!("{}{}", schema.emg_prefix, c)).collect();
    header.push(schema.label_column.clone());
    header.push(schema.repetition_column.clone());
    writer.write_record(&header)?;
    for i in 0..recording.len() {
        let mut row: Vec<String> = recording.samples.row(i).iter().map(|v| v.to_string()).collect();
        row.push(recording.labels[i].to_string());
        row.push(recording.repetitions[i].to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic recordings
// ---------------------------------------------------------------------------

/// Generator parameters for one synthetic subject.
///
/// The signal model is EMG-like: each movement modulates the amplitude of a
/// zero-mean Gaussian carrier per channel, an additive measurement-noise term
/// sits on top, and the whole channel passes through a per-subject affine
/// front end:
///
/// ```text
/// x[t, ch] = gain[ch] · amplitude[class, ch] · e[t, ch]  +  offset[ch]  +  noise_level · n[t, ch]
/// ```
///
/// with `e`, `n` independent standard normal draws. Draw order is fixed and
/// independent of the parameter values, so regenerating with the same seed
/// but different gains/offsets yields exactly affinely related signals when
/// `noise_level` is zero.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSubjectSpec {
    /// Number of movement classes (ids 1..=movement_classes; rest is 0).
    pub movement_classes: usize,
    pub channels: usize,
    /// `(movement_classes + 1) × channels` carrier amplitudes; row 0 is rest.
    pub class_amplitudes: Array2<f64>,
    /// Standard deviation of the additive measurement noise.
    pub noise_level: f64,
    /// Per-channel gain of the affine front end; all positive.
    pub gains: Vec<f64>,
    /// Per-channel offset of the affine front end.
    pub offsets: Vec<f64>,
    pub sample_rate: f64,
    pub seed: u64,
}

impl SyntheticSubjectSpec {
    fn validate(&self) -> Result<()> {
        if self.movement_classes < 2 {
            return Err(Error::Config(format!(
                "a synthetic subject needs at least 2 movement classes, got {}",
                self.movement_classes
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("a synthetic subject needs at least 1 channel".into()));
        }
        let expected = (self.movement_classes + 1, self.channels);
        if self.class_amplitudes.dim() != expected {
            return Err(Error::Config(format!(
                "class_amplitudes must be {:?} (rest row plus one row per movement), got {:?}",
                expected,
                self.class_amplitudes.dim()
            )));
        }
        if self.gains.len() != self.channels || self.offsets.len() != self.channels {
            return Err(Error::Config(format!(
                "gains ({}) and offsets ({}) must have one entry per channel ({})",
                self.gains.len(),
                self.offsets.len(),
                self.channels
            )));
        }
        if let Some(g) = self.gains.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!("channel gains must be positive and finite, got {g}")));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::Config(format!(
                "noise level must be non-negative and finite, got {}",
                self.noise_level
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        Ok(())
    }
}

/// Generates a labeled synthetic recording: repetitions are laid out
/// rep-major (`rest, c1, rest, c2, …, rest, c1, …`), every movement run is
/// bracketed by rest, the stream ends with rest, and the k-th occurrence of a
/// class carries repetition index k. Rest runs inherit the repetition index
/// of the following movement (the trailing rest keeps the last index), so
/// rest windows flow into the same repetition-based splits as their
/// neighbours.
pub fn generate_synthetic_recording(
    spec: &SyntheticSubjectSpec,
    reps: usize,
    movement_len: usize,
    rest_len: usize,
) -> Result<Recording> {
    spec.validate()?;
    if reps == 0 || movement_len == 0 || rest_len == 0 {
        return Err(Error::Config(format!(
            "reps ({reps}), movement_len ({movement_len}) and rest_len ({rest_len}) must all be positive"
        )));
    }

    // Label/repetition plan: (class, repetition, length) per run.
    let mut runs: Vec<(usize, u32, usize)> = Vec::new();
    for rep in 1..=reps as u32 {
        for class in 1..=spec.movement_classes {
            runs.push((REST_CLASS, rep, rest_len));
            runs.push((class, rep, movement_len));
        }
    }
    runs.push((REST_CLASS, reps as u32, rest_len));

    let total: usize = runs.iter().map(|r| r.2).sum();
    let mut samples = Array2::zeros((total, spec.channels));
    let mut labels = Vec::with_capacity(total);
    let mut repetitions = Vec::with_capacity(total);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let mut t = 0;
    for &(class, rep, len) in &runs {
        for _ in 0..len {
            for ch in 0..spec.channels {
                let carrier: f64 = normal.sample(&mut rng);
                let noise: f64 = normal.sample(&mut rng);
                samples[[t, ch]] = spec.gains[ch] * (spec.class_amplitudes[[class, ch]] * carrier)
                    + spec.offsets[ch]
                    + spec.noise_level * noise;
            }
            labels.push(class);
            repetitions.push(rep);
            t += 1;
        }
    }

    Ok(Recording { samples, labels, repetitions, sample_rate: spec.sample_rate })
}
