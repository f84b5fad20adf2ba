//! Cohort acquisition and the per-subject feature pipeline.
//!
//! A cohort is one recording per subject, either generated (a shared
//! class/channel amplitude pattern seen through per-subject affine front
//! ends) or loaded from a directory of CSVs. Every subject is then reduced
//! to train/test feature sets by the same deterministic pipeline:
//! windowing, repetition split, stream subsampling, and combined-feature
//! extraction with a normalizer fitted on that subject's training windows.

use std::collections::BTreeSet;
use std::path::Path;

use myoadapt::emg_data::{
    extract_windows, generate_synthetic_recording, load_recording, save_recording, split_by_repetition,
    subsample, CsvSchema, Recording, SyntheticSubjectSpec, WindowConfig,
};
use myoadapt::features::{extract_combined, extract_combined_fitting, FeatureSet};
use myoadapt::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CohortSource, ExperimentConfig, SplitConfig, SyntheticCohort};
use crate::derive_seed;

/// One subject's raw recording.
#[derive(Debug, Clone)]
pub struct SubjectRecording {
    pub id: String,
    pub recording: Recording,
}

/// One subject's train/test feature sets.
#[derive(Debug, Clone)]
pub struct ProcessedSubject {
    pub id: String,
    pub train: FeatureSet,
    pub test: FeatureSet,
}

/// The movement/rest amplitude pattern shared by a synthetic cohort: row 0 is
/// rest, rows 1..=classes are movements, one column per channel. Drawn once
/// from the master seed, so it does not depend on which subjects are built.
fn cohort_amplitudes(spec: &SyntheticCohort, master_seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "cohort-amplitudes", ""));
    let mut amplitudes = Array2::zeros((spec.movement_classes + 1, spec.channels));
    for ch in 0..spec.channels {
        amplitudes[[0, ch]] = spec.rest_amplitude;
    }
    for class in 1..=spec.movement_classes {
        for ch in 0..spec.channels {
            amplitudes[[class, ch]] = rng.gen_range(spec.amplitude_low..=spec.amplitude_high);
        }
    }
    amplitudes
}

/// The full per-subject generation spec. Gains, offsets and the noise seed
/// derive from the master seed and the subject id alone, so a subject's data
/// is identical whether the whole cohort or just that subject is built.
pub fn synthetic_subject_spec(
    cohort: &SyntheticCohort,
    master_seed: u64,
    subject_id: &str,
) -> SyntheticSubjectSpec {
    let amplitudes = cohort_amplitudes(cohort, master_seed);
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "subject-front-end", subject_id));
    let gains: Vec<f64> =
        (0..cohort.channels).map(|_| rng.gen_range(cohort.gain_low..=cohort.gain_high)).collect();
    let offsets: Vec<f64> = (0..cohort.channels)
        .map(|_| rng.gen_range(cohort.offset_low..=cohort.offset_high))
        .collect();
    SyntheticSubjectSpec {
        movement_classes: cohort.movement_classes,
        channels: cohort.channels,
        class_amplitudes: amplitudes,
        noise_level: cohort.noise_level,
        gains,
        offsets,
        sample_rate: cohort.sample_rate,
        seed: derive_seed(master_seed, "subject-noise", subject_id),
    }
}

/// Builds the recordings named in `wanted` (every cohort subject when
/// `wanted` is `None`), sorted by subject id.
pub fn build_cohort(
    source: &CohortSource,
    master_seed: u64,
    wanted: Option<&BTreeSet<String>>,
) -> Result<Vec<SubjectRecording>> {
    match source {
        CohortSource::Synthetic(spec) => {
            spec.validate()?;
            let ids = spec.subject_ids();
            if let Some(wanted) = wanted {
                if let Some(missing) = wanted.iter().find(|w| !ids.contains(w)) {
                    return Err(Error::Data(format!(
                        "subject {missing} is not part of the synthetic cohort (ids {} .. {})",
                        ids.first().expect("validated nonempty"),
                        ids.last().expect("validated nonempty"),
                    )));
                }
            }
            ids.into_iter()
                .filter(|id| wanted.map_or(true, |w| w.contains(id)))
                .map(|id| {
                    let subject = synthetic_subject_spec(spec, master_seed, &id);
                    let recording = generate_synthetic_recording(
                        &subject,
                        spec.reps,
                        spec.movement_len,
                        spec.rest_len,
                    )?;
                    Ok(SubjectRecording { id, recording })
                })
                .collect()
        }
        CohortSource::CsvDir { dir } => {
            let mut files: Vec<(String, std::path::PathBuf)> = Vec::new();
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) == Some("csv") {
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| {
                            Error::Data(format!("non-UTF8 file name in {}", dir.display()))
                        })?
                        .to_string();
                    files.push((stem, path));
                }
            }
            files.sort();
            if let Some(wanted) = wanted {
                for w in wanted {
                    if !files.iter().any(|(stem, _)| stem == w) {
                        return Err(Error::Data(format!(
                            "no recording {w}.csv in {}",
                            dir.display()
                        )));
                    }
                }
            }
            let schema = CsvSchema::default();
            files
                .into_iter()
                .filter(|(stem, _)| wanted.map_or(true, |w| w.contains(stem)))
                .map(|(id, path)| {
                    let recording = load_recording(&path, &schema)?;
                    Ok(SubjectRecording { id, recording })
                })
                .collect()
        }
    }
}

/// Writes every cohort recording as `<out_dir>/<subject>.csv` in the same
/// column layout the loader reads, and returns the subject ids.
pub fn materialize_cohort(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<String>> {
    let recordings = build_cohort(&cfg.cohort, cfg.seed, None)?;
    std::fs::create_dir_all(out_dir)?;
    let schema = CsvSchema::default();
    let mut ids = Vec::with_capacity(recordings.len());
    for subject in &recordings {
        let path = out_dir.join(format!("{}.csv", subject.id));
        save_recording(&path, &subject.recording, &schema)?;
        ids.push(subject.id.clone());
    }
    Ok(ids)
}

/// Windows, splits, subsamples and featurizes one subject. The feature
/// normalizer is fitted on the subject's (already subsampled) training
/// windows and reused for its test windows.
pub fn process_subject(
    subject: &SubjectRecording,
    windowing: &WindowConfig,
    split: &SplitConfig,
    train_stride: usize,
    test_stride: usize,
) -> Result<ProcessedSubject> {
    let windows = extract_windows(&subject.recording, windowing)?;
    let (train_windows, test_windows) =
        split_by_repetition(windows, &split.train_reps, &split.test_reps)?;
    let train_windows = subsample(train_windows, train_stride)?;
    let test_windows = subsample(test_windows, test_stride)?;
    if train_windows.is_empty() {
        return Err(Error::Data(format!(
            "subject {}: no training windows survive the repetition split",
            subject.id
        )));
    }
    if test_windows.is_empty() {
        return Err(Error::Data(format!(
            "subject {}: no test windows survive the repetition split",
            subject.id
        )));
    }
    let (train, normalizer) = extract_combined_fitting(&train_windows)?;
    let test = extract_combined(&test_windows, &normalizer)?;
    Ok(ProcessedSubject { id: subject.id.clone(), train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SyntheticCohort;

    fn small_cohort() -> SyntheticCohort {
        SyntheticCohort {
            subjects: 3,
            movement_classes: 3,
            channels: 2,
            reps: 6,
            movement_len: 60,
            rest_len: 30,
            sample_rate: 100.0,
            noise_level: 0.2,
            amplitude_low: 0.4,
            amplitude_high: 2.0,
            rest_amplitude: 0.15,
            gain_low: 0.8,
            gain_high: 1.25,
            offset_low: -0.3,
            offset_high: 0.3,
        }
    }

    #[test]
    fn subject_data_does_not_depend_on_who_else_is_built() {
        let spec = small_cohort();
        let all = build_cohort(&CohortSource::Synthetic(spec.clone()), 9, None).unwrap();
        let only: BTreeSet<String> = ["s02".to_string()].into_iter().collect();
        let one = build_cohort(&CohortSource::Synthetic(spec), 9, Some(&only)).unwrap();
        assert_eq!(one.len(), 1);
        let full = all.iter().find(|s| s.id == "s02").unwrap();
        assert_eq!(one[0].recording.samples, full.recording.samples);
        assert_eq!(one[0].recording.labels, full.recording.labels);
    }

    #[test]
    fn cohort_generation_is_deterministic_and_seed_sensitive() {
        let spec = small_cohort();
        let a = build_cohort(&CohortSource::Synthetic(spec.clone()), 9, None).unwrap();
        let b = build_cohort(&CohortSource::Synthetic(spec.clone()), 9, None).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.recording.samples, y.recording.samples);
        }
        let c = build_cohort(&CohortSource::Synthetic(spec), 10, None).unwrap();
        assert_ne!(a[0].recording.samples, c[0].recording.samples);
    }

    #[test]
    fn subjects_differ_from_each_other() {
        let spec = small_cohort();
        let all = build_cohort(&CohortSource::Synthetic(spec), 9, None).unwrap();
        assert_ne!(all[0].recording.samples, all[1].recording.samples);
        // Same label plan for everyone.
        assert_eq!(all[0].recording.labels, all[1].recording.labels);
    }

    #[test]
    fn unknown_subject_id_is_a_data_error() {
        let spec = small_cohort();
        let wanted: BTreeSet<String> = ["s99".to_string()].into_iter().collect();
        let err = build_cohort(&CohortSource::Synthetic(spec), 9, Some(&wanted)).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "unexpected error {err}");
    }

    #[test]
    fn pipeline_produces_disjoint_split_with_all_classes() {
        let spec = small_cohort();
        let all = build_cohort(&CohortSource::Synthetic(spec), 9, None).unwrap();
        let processed = process_subject(
            &all[0],
            &WindowConfig { window_len: 20, shift: 10 },
            &SplitConfig::default(),
            1,
            1,
        )
        .unwrap();
        assert!(!processed.train.is_empty());
        assert!(!processed.test.is_empty());
        // Rest plus every movement class on both sides of the split.
        assert_eq!(processed.train.class_ids(), vec![0, 1, 2, 3]);
        assert_eq!(processed.test.class_ids(), vec![0, 1, 2, 3]);
        // Train repetitions stay in {1,3,4,6}, test in {2,5}.
        assert!(processed.train.repetitions.iter().all(|r| [1, 3, 4, 6].contains(r)));
        assert!(processed.test.repetitions.iter().all(|r| [2, 5].contains(r)));
    }

    #[test]
    fn stride_thins_the_training_stream() {
        let spec = small_cohort();
        let all = build_cohort(&CohortSource::Synthetic(spec), 9, None).unwrap();
        let dense = process_subject(
            &all[0],
            &WindowConfig { window_len: 20, shift: 10 },
            &SplitConfig::default(),
            1,
            1,
        )
        .unwrap();
        let thin = process_subject(
            &all[0],
            &WindowConfig { window_len: 20, shift: 10 },
            &SplitConfig::default(),
            3,
            1,
        )
        .unwrap();
        assert_eq!(thin.train.len(), dense.train.len().div_ceil(3));
        assert_eq!(thin.test.len(), dense.test.len());
    }

    #[test]
    fn materialized_cohort_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_dir = dir.path().join("cohort");
        let spec = small_cohort();
        let cfg = crate::config::ExperimentConfig {
            cohort: CohortSource::Synthetic(spec.clone()),
            subjects: crate::config::SubjectRoles {
                targets: vec!["s01".into()],
                sources: vec!["s02".into()],
                leave_one_out: false,
            },
            methods: vec![crate::config::MethodName::NoTransfer],
            windowing: WindowConfig { window_len: 20, shift: 10 },
            split: SplitConfig::default(),
            train_stride: 1,
            test_stride: 1,
            grid: crate::config::GridConfig {
                c_values: vec![1.0],
                gamma_values: vec![1.0],
                folds: 2,
            },
            curve: crate::config::CurveConfig {
                steps: vec![10],
                prefix: myoadapt::evaluation::PrefixMode::Temporal,
            },
            mkal: crate::config::MkalParams::default(),
            hl2l: crate::config::Hl2lParams::default(),
            histogram_top_k: 4,
            overlap_threshold: 3,
            seed: 9,
            out_dir: None,
            cache_dir: None,
        };
        let ids = materialize_cohort(&cfg, &cfg_dir).unwrap();
        assert_eq!(ids, vec!["s01", "s02", "s03"]);

        let from_disk =
            build_cohort(&CohortSource::CsvDir { dir: cfg_dir }, 9, None).unwrap();
        let in_memory = build_cohort(&cfg.cohort, 9, None).unwrap();
        assert_eq!(from_disk.len(), in_memory.len());
        for (a, b) in from_disk.iter().zip(&in_memory) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.recording.labels, b.recording.labels);
            assert_eq!(a.recording.repetitions, b.recording.repetitions);
            // CSV stores full float precision, so samples survive bit-for-bit.
            assert_eq!(a.recording.samples, b.recording.samples);
        }
    }
}
