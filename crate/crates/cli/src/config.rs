//! Experiment configuration: the JSON schema consumed by every subcommand.
//!
//! A config file fully determines an experiment; the only CLI overrides are
//! `--out` (output directory), `--seed` (master seed) and `--jobs` (worker
//! count, which never affects results). See the crate README for a commented
//! example of every field.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use myoadapt::emg_data::WindowConfig;
use myoadapt::evaluation::PrefixMode;
use myoadapt::lssvm::GridSpec;
use myoadapt::{Error, Result};
use serde::{Deserialize, Serialize};

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where recordings come from: a synthetic cohort or a directory of CSVs.
    pub cohort: CohortSource,
    /// Which subjects play target and which play source.
    pub subjects: SubjectRoles,
    /// Methods to evaluate, in the order they should appear in result tables.
    pub methods: Vec<MethodName>,
    /// Sliding-window geometry applied to every recording.
    #[serde(default)]
    pub windowing: WindowConfig,
    /// Repetition-based train/test assignment.
    #[serde(default)]
    pub split: SplitConfig,
    /// Keep every `train_stride`-th window of the temporally ordered
    /// training stream (1 = keep all).
    #[serde(default = "default_train_stride")]
    pub train_stride: usize,
    /// Keep every `test_stride`-th window of the test stream (1 = keep all).
    #[serde(default = "default_test_stride")]
    pub test_stride: usize,
    /// Hyperparameter search grid shared by source and target training.
    #[serde(default)]
    pub grid: GridConfig,
    /// Learning-curve steps and prefix drawing mode.
    pub curve: CurveConfig,
    /// Online multi-kernel learner parameters (its C and gamma come from the
    /// per-subject grid search).
    #[serde(default)]
    pub mkal: MkalParams,
    /// Two-layer stack parameters.
    #[serde(default)]
    pub hl2l: Hl2lParams,
    /// Size of the per-class top-k prediction sets in histogram artifacts.
    #[serde(default = "default_top_k")]
    pub histogram_top_k: usize,
    /// Minimum shared members for two top-k sets to count as overlapping.
    #[serde(default = "default_overlap_threshold")]
    pub overlap_threshold: usize,
    /// Master seed; every stochastic choice in the run derives from it.
    pub seed: u64,
    /// Output directory (overridable with `--out`).
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Source-model cache directory; defaults to `<out_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_train_stride() -> usize {
    10
}

fn default_test_stride() -> usize {
    1
}

fn default_top_k() -> usize {
    4
}

fn default_overlap_threshold() -> usize {
    3
}

/// Cohort origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CohortSource {
    /// Generate recordings in memory (or to disk via `synth`).
    Synthetic(SyntheticCohort),
    /// Load one CSV recording per subject; the subject id is the file stem.
    CsvDir { dir: PathBuf },
}

/// Shape of a generated cohort: a shared class/channel amplitude pattern
/// plus per-subject affine front ends (gain and offset per channel) that
/// model the distribution shift between people.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCohort {
    pub subjects: usize,
    pub movement_classes: usize,
    pub channels: usize,
    /// Repetitions of each movement per subject.
    pub reps: usize,
    /// Samples per movement run.
    pub movement_len: usize,
    /// Samples per rest run.
    pub rest_len: usize,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Standard deviation of the additive measurement noise.
    #[serde(default = "default_noise_level")]
    pub noise_level: f64,
    /// Movement carrier amplitudes are drawn uniformly from this range.
    #[serde(default = "default_amplitude_low")]
    pub amplitude_low: f64,
    #[serde(default = "default_amplitude_high")]
    pub amplitude_high: f64,
    /// Carrier amplitude of the rest class on every channel.
    #[serde(default = "default_rest_amplitude")]
    pub rest_amplitude: f64,
    /// Per-subject channel gains are drawn uniformly from this range.
    #[serde(default = "default_gain_low")]
    pub gain_low: f64,
    #[serde(default = "default_gain_high")]
    pub gain_high: f64,
    /// Per-subject channel offsets are drawn uniformly from this range.
    #[serde(default = "default_offset_low")]
    pub offset_low: f64,
    #[serde(default = "default_offset_high")]
    pub offset_high: f64,
}

fn default_sample_rate() -> f64 {
    100.0
}

fn default_noise_level() -> f64 {
    0.25
}

fn default_amplitude_low() -> f64 {
    0.4
}

fn default_amplitude_high() -> f64 {
    2.0
}

fn default_rest_amplitude() -> f64 {
    0.15
}

fn default_gain_low() -> f64 {
    0.8
}

fn default_gain_high() -> f64 {
    1.25
}

fn default_offset_low() -> f64 {
    -0.3
}

fn default_offset_high() -> f64 {
    0.3
}

impl SyntheticCohort {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::Config("a synthetic cohort needs at least one subject".into()));
        }
        if self.movement_classes < 2 {
            return Err(Error::Config(format!(
                "a synthetic cohort needs at least 2 movement classes, got {}",
                self.movement_classes
            )));
        }
        if self.channels == 0 || self.reps == 0 || self.movement_len == 0 || self.rest_len == 0 {
            return Err(Error::Config(
                "channels, reps, movement_len and rest_len must all be positive".into(),
            ));
        }
        for (name, lo, hi) in [
            ("amplitude", self.amplitude_low, self.amplitude_high),
            ("gain", self.gain_low, self.gain_high),
            ("offset", self.offset_low, self.offset_high),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] must be finite with low <= high"
                )));
            }
        }
        if !(self.amplitude_low > 0.0) {
            return Err(Error::Config(format!(
                "movement amplitudes must be positive, got low {}",
                self.amplitude_low
            )));
        }
        if !(self.gain_low > 0.0) {
            return Err(Error::Config(format!(
                "channel gains must be positive, got low {}",
                self.gain_low
            )));
        }
        if !(self.rest_amplitude >= 0.0) || !self.rest_amplitude.is_finite() {
            return Err(Error::Config(format!(
                "rest amplitude must be non-negative and finite, got {}",
                self.rest_amplitude
            )));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::Config(format!(
                "noise level must be non-negative and finite, got {}",
                self.noise_level
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Subject ids `s01, s02, ...` in cohort order.
    pub fn subject_ids(&self) -> Vec<String> {
        (1..=self.subjects).map(|i| format!("s{i:02}")).collect()
    }
}

/// Which subjects are evaluated and which provide prior models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRoles {
    pub targets: Vec<String>,
    pub sources: Vec<String>,
    /// When set, a subject may appear in both lists; it is removed from its
    /// own source pool. Without it the two lists must be disjoint.
    #[serde(default)]
    pub leave_one_out: bool,
}

impl SubjectRoles {
    /// The source ids for one target, honoring leave-one-out removal.
    pub fn sources_for<'a>(&'a self, target: &str) -> Vec<&'a str> {
        self.sources
            .iter()
            .map(String::as_str)
            .filter(|s| !self.leave_one_out || *s != target)
            .collect()
    }
}

/// The five evaluated methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    NoTransfer,
    PriorFeatures,
    MultiAdapt,
    Mkal,
    Hl2l,
}

impl MethodName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodName::NoTransfer => "no_transfer",
            MethodName::PriorFeatures => "prior_features",
            MethodName::MultiAdapt => "multi_adapt",
            MethodName::Mkal => "mkal",
            MethodName::Hl2l => "hl2l",
        }
    }

    pub fn requires_sources(&self) -> bool {
        !matches!(self, MethodName::NoTransfer)
    }
}

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Repetition-based train/test assignment; indices absent from both sets are
/// dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_reps: Vec<u32>,
    pub test_reps: Vec<u32>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_reps: vec![1, 3, 4, 6], test_reps: vec![2, 5] }
    }
}

/// Search grid plus the cross-validation fold count used to score it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub folds: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let spec = GridSpec::six_decades();
        GridConfig { c_values: spec.c_values, gamma_values: spec.gamma_values, folds: 3 }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec { c_values: self.c_values.clone(), gamma_values: self.gamma_values.clone() }
    }
}

/// Learning-curve shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    /// Training-prefix sizes, strictly increasing.
    pub steps: Vec<usize>,
    /// How prefixes are drawn from the training pool.
    #[serde(default)]
    pub prefix: PrefixMode,
}

/// Online multi-kernel learner knobs that are not grid-searched.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MkalParams {
    /// Group-norm exponent in (1, 2].
    pub p: f64,
    /// Base learning rate.
    pub eta0: f64,
    /// Passes over the training prefix.
    pub epochs: usize,
}

impl Default for MkalParams {
    fn default() -> Self {
        MkalParams { p: 1.5, eta0: 1.0, epochs: 5 }
    }
}

/// Two-layer stack knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hl2lParams {
    /// Fraction of the prefix that trains the first layer; the rest trains
    /// the second layer on confidence vectors.
    pub fraction: f64,
}

impl Default for Hl2lParams {
    fn default() -> Self {
        Hl2lParams { fraction: myoadapt::hl2l::DEFAULT_SPLIT_FRACTION }
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no data access.
    pub fn validate(&self) -> Result<()> {
        if let CohortSource::Synthetic(s) = &self.cohort {
            s.validate()?;
        }
        if self.methods.is_empty() {
            return Err(Error::Config("the method list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !seen.insert(m.as_str()) {
                return Err(Error::Config(format!("method {m} is listed twice")));
            }
        }
        if self.subjects.targets.is_empty() {
            return Err(Error::Config("at least one target subject is required".into()));
        }
        let targets: BTreeSet<_> = self.subjects.targets.iter().collect();
        if targets.len() != self.subjects.targets.len() {
            return Err(Error::Config("duplicate target subject ids".into()));
        }
        let sources: BTreeSet<_> = self.subjects.sources.iter().collect();
        if sources.len() != self.subjects.sources.len() {
            return Err(Error::Config("duplicate source subject ids".into()));
        }
        if !self.subjects.leave_one_out {
            if let Some(both) = targets.intersection(&sources).next() {
                return Err(Error::Config(format!(
                    "subject {both} is listed as both target and source; that is only \
                     allowed with leave_one_out"
                )));
            }
        }
        let needs_sources = self.methods.iter().any(MethodName::requires_sources);
        if needs_sources {
            for target in &self.subjects.targets {
                if self.subjects.sources_for(target).is_empty() {
                    return Err(Error::Config(format!(
                        "target {target} has no source subjects but the method list \
                         includes transfer methods"
                    )));
                }
            }
        }
        self.windowing.validate()?;
        if self.train_stride == 0 || self.test_stride == 0 {
            return Err(Error::Config("subsampling strides must be at least 1".into()));
        }
        let overlap: Vec<_> =
            self.split.train_reps.iter().filter(|r| self.split.test_reps.contains(r)).collect();
        if !overlap.is_empty() {
            return Err(Error::Config(format!(
                "repetitions {overlap:?} appear in both train_reps and test_reps"
            )));
        }
        if self.grid.folds < 2 {
            return Err(Error::Config(format!(
                "cross-validation needs at least 2 folds, got {}",
                self.grid.folds
            )));
        }
        if self.grid.c_values.is_empty() || self.grid.gamma_values.is_empty() {
            return Err(Error::Config("the search grid must offer at least one C and one gamma".into()));
        }
        if self.curve.steps.is_empty() {
            return Err(Error::Config("the learning curve needs at least one step".into()));
        }
        if self.curve.steps[0] == 0 {
            return Err(Error::Config("curve steps must be positive".into()));
        }
        for pair in self.curve.steps.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "curve steps must be strictly increasing, got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        if !(self.mkal.p > 1.0 && self.mkal.p <= 2.0) {
            return Err(Error::Config(format!(
                "the group-norm exponent must lie in (1, 2], got {}",
                self.mkal.p
            )));
        }
        if !(self.mkal.eta0 > 0.0) || self.mkal.epochs == 0 {
            return Err(Error::Config(
                "the online learner needs a positive learning rate and at least one epoch".into(),
            ));
        }
        if !(self.hl2l.fraction > 0.0 && self.hl2l.fraction < 1.0) {
            return Err(Error::Config(format!(
                "the first-layer fraction must lie strictly between 0 and 1, got {}",
                self.hl2l.fraction
            )));
        }
        if self.histogram_top_k == 0 {
            return Err(Error::Config("histogram_top_k must be at least 1".into()));
        }
        if self.overlap_threshold == 0 || self.overlap_threshold > self.histogram_top_k {
            return Err(Error::Config(format!(
                "overlap_threshold must lie in 1..={}, got {}",
                self.histogram_top_k, self.overlap_threshold
            )));
        }
        Ok(())
    }

    /// The output directory, after CLI overrides.
    pub fn resolved_out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory: set out_dir or pass --out".into()))
    }

    /// The cache directory: explicit, or `<out_dir>/cache`.
    pub fn resolved_cache_dir(&self) -> Result<PathBuf> {
        match &self.cache_dir {
            Some(d) => Ok(d.clone()),
            None => Ok(self.resolved_out_dir()?.join("cache")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            cohort: CohortSource::Synthetic(SyntheticCohort {
                subjects: 3,
                movement_classes: 3,
                channels: 2,
                reps: 6,
                movement_len: 80,
                rest_len: 40,
                sample_rate: default_sample_rate(),
                noise_level: default_noise_level(),
                amplitude_low: default_amplitude_low(),
                amplitude_high: default_amplitude_high(),
                rest_amplitude: default_rest_amplitude(),
                gain_low: default_gain_low(),
                gain_high: default_gain_high(),
                offset_low: default_offset_low(),
                offset_high: default_offset_high(),
            }),
            subjects: SubjectRoles {
                targets: vec!["s01".into()],
                sources: vec!["s02".into(), "s03".into()],
                leave_one_out: false,
            },
            methods: vec![MethodName::NoTransfer, MethodName::MultiAdapt],
            windowing: WindowConfig { window_len: 20, shift: 10 },
            split: SplitConfig::default(),
            train_stride: 1,
            test_stride: 1,
            grid: GridConfig {
                c_values: vec![1.0, 10.0],
                gamma_values: vec![0.5, 1.0],
                folds: 2,
            },
            curve: CurveConfig { steps: vec![20, 40], prefix: PrefixMode::Temporal },
            mkal: MkalParams::default(),
            hl2l: Hl2lParams::default(),
            histogram_top_k: 4,
            overlap_threshold: 3,
            seed: 7,
            out_dir: None,
            cache_dir: None,
        }
    }

    #[test]
    fn sample_config_validates_and_round_trips() {
        let cfg = sample();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(back.methods, cfg.methods);
        assert_eq!(back.curve.steps, cfg.curve.steps);
    }

    #[test]
    fn target_source_overlap_needs_leave_one_out() {
        let mut cfg = sample();
        cfg.subjects.sources.push("s01".into());
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "unexpected error {err}");
        cfg.subjects.leave_one_out = true;
        cfg.validate().unwrap();
        // Leave-one-out removes the target from its own source pool only.
        assert_eq!(cfg.subjects.sources_for("s01"), vec!["s02", "s03"]);
        assert_eq!(cfg.subjects.sources_for("s02"), vec!["s03", "s01"]);
    }

    #[test]
    fn transfer_methods_without_sources_are_rejected() {
        let mut cfg = sample();
        cfg.subjects.sources.clear();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("transfer"), "unexpected error {err}");
        // No-transfer alone is fine without sources.
        cfg.methods = vec![MethodName::NoTransfer];
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_top_level_fields_are_rejected() {
        let mut value = serde_json::to_value(sample()).unwrap();
        value.as_object_mut().unwrap().insert("tyop".into(), serde_json::json!(1));
        let back: std::result::Result<ExperimentConfig, _> = serde_json::from_value(value);
        assert!(back.is_err());
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let mut cfg = sample();
        cfg.curve.steps = vec![40, 40];
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.split.test_reps = vec![1];
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.mkal.p = 1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.overlap_threshold = 5;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        if let CohortSource::Synthetic(s) = &mut cfg.cohort {
            s.gain_low = 0.0;
        }
        assert!(cfg.validate().is_err());
    }
}
