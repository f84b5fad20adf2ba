//! Window-level feature extraction.
//!
//! Three time-domain families are computed per window and channel — mean
//! absolute value, (population) variance and waveform length — plus an
//! amplitude histogram. The workhorse representation is the *combined*
//! feature: standardize each family with statistics fitted on the training
//! set, then average the three standardized values per channel, giving one
//! value per channel (`d = channels`).

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::emg_data::Window;
use crate::error::{Error, Result};

/// Default number of histogram bins per channel.
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Default half-width of the histogram range, in standard deviations.
pub const DEFAULT_HISTOGRAM_SIGMA: f64 = 3.0;

/// Mean absolute value: `(1/T) Σ |x_t|`.
pub fn mav(window: ArrayView1<'_, f64>) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Domain("mean absolute value of an empty window".into()));
    }
    Ok(window.iter().map(|x| x.abs()).sum::<f64>() / window.len() as f64)
}

/// Population variance: `(1/T) Σ (x_t − x̄)²`.
pub fn variance(window: ArrayView1<'_, f64>) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Domain("variance of an empty window".into()));
    }
    let n = window.len() as f64;
    let mean = window.sum() / n;
    Ok(window.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

/// Waveform length: `Σ_{t=1}^{T−1} |x_{t+1} − x_t|` (zero for a single
/// sample — there are no consecutive pairs to accumulate).
pub fn waveform_length(window: ArrayView1<'_, f64>) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::Domain("waveform length of an empty window".into()));
    }
    let mut acc = 0.0;
    for t in 1..window.len() {
        acc += (window[t] - window[t - 1]).abs();
    }
    Ok(acc)
}

/// Amplitude histogram over `bins` equal cells spanning `(lo, hi)`;
/// out-of-range samples are clipped into the corresponding edge bin, so the
/// counts always sum to the window length.
pub fn semg_histogram(window: ArrayView1<'_, f64>, bins: usize, range: (f64, f64)) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::Domain("histogram of an empty window".into()));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("histogram range ({lo}, {hi}) must be finite with lo < hi")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &x in window.iter() {
        let idx = ((x - lo) / width).floor();
        let idx = if idx < 0.0 {
            0
        } else if idx >= bins as f64 {
            bins - 1
        } else {
            idx as usize
        };
        counts[idx] += 1.0;
    }
    Ok(counts)
}

/// The three feature families of a window batch, before standardization.
/// Each matrix is `n_windows × channels`; annotations run parallel to rows.
#[derive(Debug, Clone)]
pub struct RawFeatures {
    pub mav: Array2<f64>,
    pub variance: Array2<f64>,
    pub waveform_length: Array2<f64>,
    pub labels: Vec<usize>,
    pub repetitions: Vec<u32>,
}

impl RawFeatures {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.mav.ncols()
    }
}

/// Computes the three raw families for every window.
pub fn compute_raw_features(windows: &[Window]) -> Result<RawFeatures> {
    if windows.is_empty() {
        return Err(Error::Data("feature extraction over an empty window list".into()));
    }
    let channels = windows[0].samples.ncols();
    let n = windows.len();
    let mut m = Array2::zeros((n, channels));
    let mut v = Array2::zeros((n, channels));
    let mut w = Array2::zeros((n, channels));
    let mut labels = Vec::with_capacity(n);
    let mut repetitions = Vec::with_capacity(n);
    for (i, win) in windows.iter().enumerate() {
        if win.samples.ncols() != channels {
            return Err(Error::Domain(format!(
                "window {i} has {} channels, expected {channels}",
                win.samples.ncols()
            )));
        }
        for ch in 0..channels {
            let col = win.samples.column(ch);
            m[[i, ch]] = mav(col)?;
            v[[i, ch]] = variance(col)?;
            w[[i, ch]] = waveform_length(col)?;
        }
        labels.push(win.class_id);
        repetitions.push(win.repetition);
    }
    Ok(RawFeatures { mav: m, variance: v, waveform_length: w, labels, repetitions })
}

/// Per-family, per-channel standardization statistics, fitted on a training
/// batch and then applied unchanged to any other batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    /// `3 × channels` means, rows ordered mav / variance / waveform length.
    center: Array2<f64>,
    /// `3 × channels` standard deviations; exact zeros are replaced by 1 so
    /// constant features pass through centered instead of dividing by zero.
    scale: Array2<f64>,
}

impl FeatureNormalizer {
    /// Fits means and standard deviations on a raw-feature batch.
    pub fn fit(raw: &RawFeatures) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Data("cannot fit a normalizer on an empty batch".into()));
        }
        let channels = raw.channels();
        let mut center = Array2::zeros((3, channels));
        let mut scale = Array2::zeros((3, channels));
        for (f, family) in [&raw.mav, &raw.variance, &raw.waveform_length].into_iter().enumerate() {
            let n = family.nrows() as f64;
            for ch in 0..channels {
                let col = family.column(ch);
                let mean = col.sum() / n;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                center[[f, ch]] = mean;
                scale[[f, ch]] = if sd == 0.0 { 1.0 } else { sd };
            }
        }
        Ok(FeatureNormalizer { center, scale })
    }

    pub fn channels(&self) -> usize {
        self.center.ncols()
    }

    /// Standardizes one family matrix (row index `f`: 0 mav, 1 variance,
    /// 2 waveform length).
    fn standardize(&self, f: usize, family: &Array2<f64>) -> Array2<f64> {
        let mut out = family.clone();
        for ch in 0..family.ncols() {
            let c = self.center[[f, ch]];
            let s = self.scale[[f, ch]];
            for i in 0..family.nrows() {
                out[[i, ch]] = (out[[i, ch]] - c) / s;
            }
        }
        out
    }
}

/// Labeled feature vectors: one row per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    /// `n × d` feature matrix.
    pub vectors: Array2<f64>,
    /// Class id per row (0 = rest).
    pub labels: Vec<usize>,
    /// Repetition index per row.
    pub repetitions: Vec<u32>,
}

impl FeatureSet {
    pub fn new(vectors: Array2<f64>, labels: Vec<usize>, repetitions: Vec<u32>) -> Result<Self> {
        if vectors.nrows() != labels.len() || vectors.nrows() != repetitions.len() {
            return Err(Error::Domain(format!(
                "feature-set lengths disagree: {} vectors, {} labels, {} repetitions",
                vectors.nrows(),
                labels.len(),
                repetitions.len()
            )));
        }
        Ok(FeatureSet { vectors, labels, repetitions })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Distinct class ids present, ascending.
    pub fn class_ids(&self) -> Vec<usize> {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// First `n` rows, in order.
    pub fn prefix(&self, n: usize) -> Result<FeatureSet> {
        if n > self.len() {
            return Err(Error::Config(format!(
                "requested a prefix of {n} vectors but only {} are available",
                self.len()
            )));
        }
        self.select(&(0..n).collect::<Vec<_>>())
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureSet> {
        let mut vectors = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        let mut repetitions = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Domain(format!("row index {i} out of range (n = {})", self.len())));
            }
            vectors.row_mut(row).assign(&self.vectors.row(i));
            labels.push(self.labels[i]);
            repetitions.push(self.repetitions[i]);
        }
        FeatureSet::new(vectors, labels, repetitions)
    }

    /// Writes `label,repetition,f0,...` rows.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string(), "repetition".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        writer.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.labels[i].to_string(), self.repetitions[i].to_string()];
            row.extend(self.vectors.row(i).iter().map(|v| v.to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a file written by [`FeatureSet::export_csv`].
    pub fn import_csv(path: &Path) -> Result<FeatureSet> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "label" || &headers[1] != "repetition" {
            return Err(Error::Schema(format!(
                "{} is not a feature-set CSV (expected label,repetition,f0,... header)",
                path.display()
            )));
        }
        let dim = headers.len() - 2;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut repetitions = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} cells, found {}", headers.len(), record.len()),
                });
            }
            labels.push(record[0].parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad label {:?}", &record[0]),
            })?);
            repetitions.push(record[1].parse::<u32>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad repetition {:?}", &record[1]),
            })?);
            for cell in record.iter().skip(2) {
                values.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad feature value {cell:?}"),
                })?);
            }
        }
        let n = labels.len();
        let vectors = Array2::from_shape_vec((n, dim), values)
            .expect("cell count is n×dim by construction");
        FeatureSet::new(vectors, labels, repetitions)
    }
}

/// Averages the three families into one value per channel. With a normalizer
/// the families are standardized first (the usual configuration); without
/// one the raw values are averaged as-is.
pub fn combine(raw: &RawFeatures, normalizer: Option<&FeatureNormalizer>) -> Result<FeatureSet> {
    if let Some(norm) = normalizer {
        if norm.channels() != raw.channels() {
            return Err(Error::Domain(format!(
                "normalizer was fitted on {} channels, batch has {}",
                norm.channels(),
                raw.channels()
            )));
        }
    }
    let (m, v, w) = match normalizer {
        Some(norm) => (
            norm.standardize(0, &raw.mav),
            norm.standardize(1, &raw.variance),
            norm.standardize(2, &raw.waveform_length),
        ),
        None => (raw.mav.clone(), raw.variance.clone(), raw.waveform_length.clone()),
    };
    let mut vectors = Array2::zeros((raw.len(), raw.channels()));
    for i in 0..raw.len() {
        for ch in 0..raw.channels() {
            vectors[[i, ch]] = (m[[i, ch]] + v[[i, ch]] + w[[i, ch]]) / 3.0;
        }
    }
    FeatureSet::new(vectors, raw.labels.clone(), raw.repetitions.clone())
}

/// Combined features for a window batch using an already fitted normalizer.
pub fn extract_combined(windows: &[Window], normalizer: &FeatureNormalizer) -> Result<FeatureSet> {
    combine(&compute_raw_features(windows)?, Some(normalizer))
}

/// Fits the normalizer on the batch itself, then extracts combined features.
/// Returns the normalizer so it can be reused on held-out data.
pub fn extract_combined_fitting(windows: &[Window]) -> Result<(FeatureSet, FeatureNormalizer)> {
    let raw = compute_raw_features(windows)?;
    let normalizer = FeatureNormalizer::fit(&raw)?;
    let fs = combine(&raw, Some(&normalizer))?;
    Ok((fs, normalizer))
}

/// Histogram feature geometry: per-channel ranges shared across windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    /// One `(lo, hi)` per channel.
    pub ranges: Vec<(f64, f64)>,
}

impl HistogramConfig {
    /// Derives per-channel ranges `mean ± sigma_mult·σ` from a training
    /// window batch (statistics over all samples of all windows).
    pub fn fit(windows: &[Window], bins: usize, sigma_mult: f64) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Data("cannot fit histogram ranges on an empty batch".into()));
        }
        if !(sigma_mult > 0.0) {
            return Err(Error::Config(format!("sigma multiplier must be positive, got {sigma_mult}")));
        }
        let channels = windows[0].samples.ncols();
        let mut ranges = Vec::with_capacity(channels);
        for ch in 0..channels {
            let mut n = 0.0f64;
            let mut sum = 0.0f64;
            for w in windows {
                let col = w.samples.column(ch);
                sum += col.sum();
                n += col.len() as f64;
            }
            let mean = sum / n;
            let mut ss = 0.0f64;
            for w in windows {
                for &x in w.samples.column(ch).iter() {
                    ss += (x - mean) * (x - mean);
                }
            }
            let sd = (ss / n).sqrt();
            // A flat channel still needs a non-degenerate range.
            let half = if sd == 0.0 { 1.0 } else { sigma_mult * sd };
            ranges.push((mean - half, mean + half));
        }
        let cfg = HistogramConfig { bins, ranges };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        for (ch, (lo, hi)) in self.ranges.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!("histogram range for channel {ch} is degenerate: ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

/// Histogram features: per window, per channel, `bins` clipped counts,
/// concatenated channel-major (`d = channels × bins`).
pub fn extract_histogram(windows: &[Window], config: &HistogramConfig) -> Result<FeatureSet> {
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::Data("feature extraction over an empty window list".into()));
    }
    let channels = windows[0].samples.ncols();
    if config.ranges.len() != channels {
        return Err(Error::Domain(format!(
            "histogram config covers {} channels, batch has {channels}",
            config.ranges.len()
        )));
    }
    let mut vectors = Array2::zeros((windows.len(), channels * config.bins));
    let mut labels = Vec::with_capacity(windows.len());
    let mut repetitions = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        for ch in 0..channels {
            let counts = semg_histogram(w.samples.column(ch), config.bins, config.ranges[ch])?;
            for (b, &count) in counts.iter().enumerate() {
                vectors[[i, ch * config.bins + b]] = count;
            }
        }
        labels.push(w.class_id);
        repetitions.push(w.repetition);
    }
    FeatureSet::new(vectors, labels, repetitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn window_from(columns: Vec<Vec<f64>>, class_id: usize) -> Window {
        let rows = columns[0].len();
        let channels = columns.len();
        let samples = Array2::from_shape_fn((rows, channels), |(i, j)| columns[j][i]);
        Window { samples, class_id, repetition: 1 }
    }

    #[test]
    fn mav_of_the_reference_window() {
        assert_eq!(mav(array![1.0, -1.0, 2.0, -2.0].view()).unwrap(), 1.5);
    }

    #[test]
    fn variance_is_population_variance() {
        assert_eq!(variance(array![1.0, -1.0].view()).unwrap(), 1.0);
    }

    #[test]
    fn waveform_length_sums_consecutive_steps() {
        assert_eq!(waveform_length(array![0.0, 1.0, 3.0].view()).unwrap(), 3.0);
        assert_eq!(waveform_length(array![5.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn empty_windows_are_domain_errors() {
        let empty = Array1::<f64>::zeros(0);
        assert!(mav(empty.view()).is_err());
        assert!(variance(empty.view()).is_err());
        assert!(waveform_length(empty.view()).is_err());
        assert!(semg_histogram(empty.view(), 4, (0.0, 1.0)).is_err());
    }

    #[test]
    fn histogram_of_the_reference_window() {
        let counts = semg_histogram(array![0.1, 0.9].view(), 2, (0.0, 1.0)).unwrap();
        assert_eq!(counts, vec![1.0, 1.0]);
    }

    #[test]
    fn histogram_clips_out_of_range_samples_into_edge_bins() {
        // Bins over (0, 2) are [0, 0.5), [0.5, 1), [1, 1.5), [1.5, 2].
        // -5 clips into the first bin, 99 into the last; interior samples
        // land by the floor rule (0.5 -> bin 1, 1.0 -> bin 2).
        let counts = semg_histogram(array![-5.0, 0.5, 99.0, 1.0].view(), 4, (0.0, 2.0)).unwrap();
        assert_eq!(counts, vec![1.0, 1.0, 1.0, 1.0]);

        // Upper edge itself stays inside the final bin rather than clipping out.
        let edge = semg_histogram(array![2.0].view(), 4, (0.0, 2.0)).unwrap();
        assert_eq!(edge, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn histogram_rejects_bad_configuration() {
        assert!(semg_histogram(array![1.0].view(), 0, (0.0, 1.0)).is_err());
        assert!(semg_histogram(array![1.0].view(), 2, (1.0, 1.0)).is_err());
        assert!(semg_histogram(array![1.0].view(), 2, (2.0, 1.0)).is_err());
    }

    #[test]
    fn combined_features_have_one_value_per_channel() {
        let windows = vec![
            window_from(vec![vec![1.0, -1.0, 2.0], vec![0.0, 1.0, 0.5], vec![3.0, 3.5, 2.0]], 1),
            window_from(vec![vec![0.2, 0.1, -0.4], vec![2.0, 1.0, 1.5], vec![0.0, 0.5, 1.0]], 2),
            window_from(vec![vec![5.0, -5.0, 4.0], vec![1.0, 1.5, 2.5], vec![2.0, 1.0, 0.0]], 1),
        ];
        let (fs, _) = extract_combined_fitting(&windows).unwrap();
        assert_eq!(fs.dim(), 3);
        assert_eq!(fs.len(), 3);
        assert_eq!(fs.labels, vec![1, 2, 1]);
    }

    #[test]
    fn fitted_normalizer_standardizes_its_own_batch() {
        let windows: Vec<Window> = (0..8)
            .map(|i| {
                window_from(
                    vec![
                        vec![i as f64, -(i as f64), 0.5 * i as f64 + 1.0],
                        vec![1.0 + i as f64 * 0.3, 2.0, -1.0 * i as f64],
                    ],
                    i % 3,
                )
            })
            .collect();
        let raw = compute_raw_features(&windows).unwrap();
        let norm = FeatureNormalizer::fit(&raw).unwrap();
        for (f, family) in [&raw.mav, &raw.variance, &raw.waveform_length].into_iter().enumerate() {
            let z = norm.standardize(f, family);
            for ch in 0..z.ncols() {
                let col = z.column(ch);
                let mean = col.sum() / col.len() as f64;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
                assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
                // Families that are not constant across the batch get unit scale.
                if raw_family_is_varying(family, ch) {
                    assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    fn raw_family_is_varying(family: &Array2<f64>, ch: usize) -> bool {
        let col = family.column(ch);
        col.iter().any(|&x| x != col[0])
    }

    #[test]
    fn combined_features_are_invariant_under_channel_gain_when_refit() {
        let windows: Vec<Window> = (0..6)
            .map(|i| {
                window_from(
                    vec![
                        vec![0.1 * i as f64, 1.0 - 0.2 * i as f64, -0.3, 0.7],
                        vec![2.0, -1.0 + i as f64 * 0.5, 0.0, 0.25],
                    ],
                    i % 2,
                )
            })
            .collect();
        let doubled: Vec<Window> = windows
            .iter()
            .map(|w| {
                let mut samples = w.samples.clone();
                for v in samples.column_mut(0).iter_mut() {
                    *v *= 2.0;
                }
                Window { samples, class_id: w.class_id, repetition: w.repetition }
            })
            .collect();
        let (a, _) = extract_combined_fitting(&windows).unwrap();
        let (b, _) = extract_combined_fitting(&doubled).unwrap();
        // Gain 2 is a power of two: every intermediate doubles exactly, so the
        // standardized values — and their means — agree bit for bit.
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn combining_without_a_normalizer_averages_raw_families() {
        let windows = vec![window_from(vec![vec![1.0, -1.0]], 0)];
        let raw = compute_raw_features(&windows).unwrap();
        let fs = combine(&raw, None).unwrap();
        // mav 1, variance 1, waveform length 2 → mean 4/3.
        assert_abs_diff_eq!(fs.vectors[[0, 0]], 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn histogram_features_concatenate_channels() {
        let windows = vec![
            window_from(vec![vec![0.1, 0.9], vec![0.5, 0.5]], 1),
            window_from(vec![vec![0.4, 0.6], vec![0.0, 1.0]], 2),
        ];
        let cfg = HistogramConfig { bins: 2, ranges: vec![(0.0, 1.0), (0.0, 1.0)] };
        let fs = extract_histogram(&windows, &cfg).unwrap();
        assert_eq!(fs.dim(), 4);
        assert_eq!(fs.vectors.row(0).to_vec(), vec![1.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn histogram_range_fit_covers_three_sigma() {
        let windows = vec![window_from(vec![vec![0.0, 2.0, -2.0, 0.0]], 0)];
        let cfg = HistogramConfig::fit(&windows, 4, 3.0).unwrap();
        let (lo, hi) = cfg.ranges[0];
        let sd = (2.0f64).sqrt(); // population σ of [0, 2, −2, 0]
        assert_abs_diff_eq!(lo, -3.0 * sd, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 3.0 * sd, epsilon = 1e-12);
    }

    #[test]
    fn feature_set_prefix_and_select() {
        let fs = FeatureSet::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            vec![0, 1, 2, 3],
            vec![1, 1, 2, 2],
        )
        .unwrap();
        let p = fs.prefix(2).unwrap();
        assert_eq!(p.labels, vec![0, 1]);
        let s = fs.select(&[3, 0]).unwrap();
        assert_eq!(s.labels, vec![3, 0]);
        assert_eq!(s.vectors[[0, 0]], 3.0);
        assert!(fs.prefix(5).is_err());
    }

    #[test]
    fn feature_set_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let fs = FeatureSet::new(
            array![[0.25, -1.5], [3.125, 0.0]],
            vec![0, 4],
            vec![1, 2],
        )
        .unwrap();
        fs.export_csv(&path).unwrap();
        let back = FeatureSet::import_csv(&path).unwrap();
        assert_eq!(back, fs);
    }

    #[test]
    fn feature_set_import_rejects_foreign_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(FeatureSet::import_csv(&path), Err(Error::Schema(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Clipping means no sample is ever lost: counts sum to the length.
        #[test]
        fn histogram_counts_sum_to_window_length(
            samples in proptest::collection::vec(-10.0f64..10.0, 1..50),
            bins in 1usize..12,
            lo in -3.0f64..0.0,
            span in 0.5f64..4.0,
        ) {
            let window = Array1::from_vec(samples.clone());
            let counts = semg_histogram(window.view(), bins, (lo, lo + span)).unwrap();
            let total: f64 = counts.iter().sum();
            prop_assert_eq!(total, samples.len() as f64);
        }

        /// MAV is always within [0, max |x|] and variance is non-negative.
        #[test]
        fn scalar_features_respect_basic_bounds(
            samples in proptest::collection::vec(-100.0f64..100.0, 1..80),
        ) {
            let w = Array1::from_vec(samples.clone());
            let m = mav(w.view()).unwrap();
            let v = variance(w.view()).unwrap();
            let max_abs = samples.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            prop_assert!(m >= 0.0 && m <= max_abs + 1e-12);
            prop_assert!(v >= -1e-12);
        }
    }

    use ndarray::Array1;
}
