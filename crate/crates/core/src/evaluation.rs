//! Class-imbalance-aware metrics and the learning-curve harness.
//!
//! Everything here treats the rest class like any other class, so scores are
//! not inflated by the large share of rest windows: the headline metric is
//! balanced accuracy (mean per-class recall), confusion matrices are
//! normalized per *true* class, and the comparison tools (top-k histograms,
//! overlap, correlation between settings) all work on per-class fractions.
//!
//! The learning-curve runner trains each configured method on growing
//! prefixes of a target user's training data and scores it on a fixed test
//! set, which is how the value of pre-trained source models on small
//! calibration sets is measured.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::hl2l::hl2l_train;
use crate::kernels::KernelSpec;
use crate::lssvm::{prior_features_train, train_multiclass, MulticlassModel};
use crate::mkal::{mkal_train, MkalConfig};
use crate::multi_adapt::{self, BetaSearchConfig};

/// Mean per-class recall over the classes present in `y_true`.
///
/// Classes absent from `y_true` do not contribute (their recall would be
/// 0/0); with a single present class this equals plain accuracy.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Domain(format!(
            "label vectors differ in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Domain(
            "balanced accuracy needs at least one labeled item".into(),
        ));
    }
    let mut per_class: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let entry = per_class.entry(t).or_insert((0, 0));
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    let total: f64 = per_class
        .values()
        .map(|&(correct, count)| correct as f64 / count as f64)
        .sum();
    Ok(total / per_class.len() as f64)
}

/// A confusion matrix normalized per true class.
///
/// Entry `(p, t)` is the fraction of class `t`'s items that were predicted
/// as class `p`, so every column of a class that appears in the data sums to
/// one. Classes in the universe with no items get an all-zero column and are
/// listed in `empty_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    matrix: Array2<f64>,
    class_ids: Vec<usize>,
    counts: Vec<usize>,
    empty_classes: Vec<usize>,
}

impl ConfusionMatrix {
    /// Rows are predicted classes, columns are true classes, both in
    /// `class_ids` order.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    /// Item count per true class, in `class_ids` order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Classes from the universe that had no items in `y_true`.
    pub fn empty_classes(&self) -> &[usize] {
        &self.empty_classes
    }

    /// Fraction of class `true_id`'s items predicted as `pred_id`.
    pub fn fraction(&self, pred_id: usize, true_id: usize) -> Result<f64> {
        let p = self.index_of(pred_id)?;
        let t = self.index_of(true_id)?;
        Ok(self.matrix[[p, t]])
    }

    /// The diagonal: recognition rate per true class, in `class_ids` order.
    pub fn per_class_recognition(&self) -> Vec<f64> {
        (0..self.n_classes()).map(|i| self.matrix[[i, i]]).collect()
    }

    fn index_of(&self, class_id: usize) -> Result<usize> {
        self.class_ids
            .binary_search(&class_id)
            .map_err(|_| Error::Domain(format!("class {class_id} is not in this matrix")))
    }
}

/// Builds a per-true-class-normalized confusion matrix over an explicit
/// class universe (which may contain classes absent from the data).
pub fn confusion(
    y_true: &[usize],
    y_pred: &[usize],
    class_ids: &[usize],
) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Domain(format!(
            "label vectors differ in length: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Domain(
            "a confusion matrix needs at least one labeled item".into(),
        ));
    }
    let mut ids = class_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Domain("the class universe is empty".into()));
    }
    let g = ids.len();
    let lookup = |label: usize| {
        ids.binary_search(&label).map_err(|_| {
            Error::Domain(format!(
                "label {label} is outside the class universe {ids:?}"
            ))
        })
    };
    let mut raw = Array2::<f64>::zeros((g, g));
    let mut counts = vec![0usize; g];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let ti = lookup(t)?;
        let pi = lookup(p)?;
        raw[[pi, ti]] += 1.0;
        counts[ti] += 1;
    }
    let mut empty_classes = Vec::new();
    for (ti, &count) in counts.iter().enumerate() {
        if count == 0 {
            empty_classes.push(ids[ti]);
        } else {
            for pi in 0..g {
                raw[[pi, ti]] /= count as f64;
            }
        }
    }
    Ok(ConfusionMatrix {
        matrix: raw,
        class_ids: ids,
        counts,
        empty_classes,
    })
}

/// For each true class, its `k` most frequent predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKHistogram {
    k: usize,
    class_ids: Vec<usize>,
    /// Per true class (in `class_ids` order): `(predicted class, fraction)`
    /// sorted by descending fraction, ties broken by ascending class id.
    entries: Vec<Vec<(usize, f64)>>,
}

impl TopKHistogram {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn entries(&self) -> &[Vec<(usize, f64)>] {
        &self.entries
    }

    /// Just the predicted-class id sets, one per true class.
    pub fn top_sets(&self) -> Vec<Vec<usize>> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&(id, _)| id).collect())
            .collect()
    }
}

/// Extracts the top-`k` predictions per true class from a confusion matrix.
pub fn topk_histogram(cm: &ConfusionMatrix, k: usize) -> Result<TopKHistogram> {
    let g = cm.n_classes();
    if k == 0 || k > g {
        return Err(Error::Config(format!(
            "top-k depth must lie in 1..={g}, got {k}"
        )));
    }
    let mut entries = Vec::with_capacity(g);
    for ti in 0..g {
        let mut row: Vec<(usize, f64)> = (0..g)
            .map(|pi| (cm.class_ids()[pi], cm.matrix()[[pi, ti]]))
            .collect();
        row.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("confusion fractions are finite")
                .then(a.0.cmp(&b.0))
        });
        row.truncate(k);
        entries.push(row);
    }
    Ok(TopKHistogram {
        k,
        class_ids: cm.class_ids().to_vec(),
        entries,
    })
}

/// How many true classes have strongly overlapping top-k prediction sets in
/// two settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// True classes whose top-k sets share at least the threshold.
    pub shared: usize,
    /// Total number of true classes compared.
    pub total: usize,
    /// `100 * shared / total`.
    pub percent: f64,
}

impl fmt::Display for OverlapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.0}% ({}/{})",
            self.percent, self.shared, self.total
        )
    }
}

/// Counts the true classes whose top-k prediction sets in `a` and `b` share
/// at least `threshold` classes.
pub fn overlap_percentage(
    a: &TopKHistogram,
    b: &TopKHistogram,
    threshold: usize,
) -> Result<OverlapReport> {
    if a.class_ids() != b.class_ids() || a.k() != b.k() {
        return Err(Error::Domain(
            "overlap needs two histograms over the same classes and depth".into(),
        ));
    }
    if threshold == 0 || threshold > a.k() {
        return Err(Error::Config(format!(
            "overlap threshold must lie in 1..={}, got {threshold}",
            a.k()
        )));
    }
    let sets_a = a.top_sets();
    let sets_b = b.top_sets();
    let mut shared = 0;
    for (sa, sb) in sets_a.iter().zip(&sets_b) {
        let common = sa.iter().filter(|id| sb.contains(id)).count();
        if common >= threshold {
            shared += 1;
        }
    }
    let total = sets_a.len();
    Ok(OverlapReport {
        shared,
        total,
        percent: 100.0 * shared as f64 / total as f64,
    })
}

/// Pairwise Pearson correlations between settings, with undefined pairs
/// (involving a constant vector) flagged instead of silently patched.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    matrix: Array2<f64>,
    undefined: Vec<(usize, usize)>,
}

impl CorrelationMatrix {
    /// Entry `(i, j)` is the correlation between settings `i` and `j`;
    /// undefined entries hold NaN.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Index pairs (i <= j) whose correlation is undefined.
    pub fn undefined(&self) -> &[(usize, usize)] {
        &self.undefined
    }

    pub fn is_defined(&self, i: usize, j: usize) -> bool {
        !self.matrix[[i, j]].is_nan()
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        f64::NAN
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// Correlates per-class recognition profiles between settings.
///
/// Each setting's profile is first normalized by its maximum (so settings
/// are compared by the *shape* of their per-class behavior, not its level),
/// then all pairs are Pearson-correlated. A constant profile has no shape to
/// correlate; its pairs are flagged and set to NaN.
pub fn class_correlation(settings: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    if settings.len() < 2 {
        return Err(Error::Domain(
            "correlation needs at least two settings".into(),
        ));
    }
    let len = settings[0].len();
    if len < 2 {
        return Err(Error::Domain(
            "correlation needs at least two classes per setting".into(),
        ));
    }
    for (i, s) in settings.iter().enumerate() {
        if s.len() != len {
            return Err(Error::Domain(format!(
                "setting {i} has {} classes, expected {len}",
                s.len()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "setting {i} contains a non-finite recognition value"
            )));
        }
    }
    let normalized: Vec<Vec<f64>> = settings
        .iter()
        .map(|s| {
            let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max > 0.0 {
                s.iter().map(|v| v / max).collect()
            } else {
                s.clone()
            }
        })
        .collect();
    let m = settings.len();
    let mut matrix = Array2::zeros((m, m));
    let mut undefined = Vec::new();
    for i in 0..m {
        for j in i..m {
            let r = pearson(&normalized[i], &normalized[j]);
            matrix[[i, j]] = r;
            matrix[[j, i]] = r;
            if r.is_nan() {
                undefined.push((i, j));
            }
        }
    }
    Ok(CorrelationMatrix { matrix, undefined })
}

/// How the growing training prefix is drawn from the training pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PrefixMode {
    /// The first `n` items in their recorded order (the default: mimics a
    /// user who has only recorded the beginning of the protocol).
    Temporal,
    /// The first `n` items of one seeded shuffle of the whole pool.
    Shuffled { seed: u64 },
    /// A class-balanced draw: items are shuffled within each class and then
    /// interleaved round-robin across classes, so every prefix contains
    /// near-equal class counts — the composition of a deliberately recorded
    /// calibration set.
    StratifiedShuffled { seed: u64 },
}

impl Default for PrefixMode {
    fn default() -> Self {
        PrefixMode::Temporal
    }
}

/// The full visiting order induced by a prefix mode; a prefix of size `n` is
/// the first `n` entries.
pub fn curve_order(labels: &[usize], mode: &PrefixMode) -> Vec<usize> {
    match mode {
        PrefixMode::Temporal => (0..labels.len()).collect(),
        PrefixMode::Shuffled { seed } => {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            order
        }
        PrefixMode::StratifiedShuffled { seed } => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &label) in labels.iter().enumerate() {
                by_class.entry(label).or_default().push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut lists: Vec<Vec<usize>> = by_class
                .into_values()
                .map(|mut v| {
                    v.shuffle(&mut rng);
                    v
                })
                .collect();
            let mut order = Vec::with_capacity(labels.len());
            let mut round = 0;
            loop {
                let mut emitted = false;
                for list in &mut lists {
                    if round < list.len() {
                        order.push(list[round]);
                        emitted = true;
                    }
                }
                if !emitted {
                    break;
                }
                round += 1;
            }
            order
        }
    }
}

/// One method the learning-curve runner can train, with its resolved
/// hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    /// Plain multiclass training on the prefix alone.
    NoTransfer { c: f64, gamma: f64 },
    /// Linear classifier over stacked source-confidence features.
    PriorFeatures { c: f64 },
    /// Per-class convex blending of source decision functions.
    MultiAdapt { c: f64, gamma: f64 },
    /// Online multi-kernel learner over raw and source-confidence blocks.
    Mkal { config: MkalConfig },
    /// Two-layer stacking with an internal split.
    Hl2l {
        c_first: f64,
        gamma_first: f64,
        second_kernel: KernelSpec,
        c_second: f64,
        fraction: f64,
        seed: u64,
    },
}

impl MethodConfig {
    /// Canonical short name used in result tables and file names.
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::NoTransfer { .. } => "no_transfer",
            MethodConfig::PriorFeatures { .. } => "prior_features",
            MethodConfig::MultiAdapt { .. } => "multi_adapt",
            MethodConfig::Mkal { .. } => "mkal",
            MethodConfig::Hl2l { .. } => "hl2l",
        }
    }

    /// Whether the method consumes pre-trained source models.
    pub fn requires_sources(&self) -> bool {
        !matches!(self, MethodConfig::NoTransfer { .. })
    }
}

/// Scores per prefix size and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub steps: Vec<usize>,
    pub methods: Vec<String>,
    /// Balanced accuracies, one row per step, one column per method.
    pub scores: Array2<f64>,
}

impl LearningCurve {
    pub fn score(&self, step_idx: usize, method_idx: usize) -> f64 {
        self.scores[[step_idx, method_idx]]
    }

    /// All scores of one method along the curve.
    pub fn method_scores(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.methods.iter().position(|m| m == name)?;
        Some((0..self.steps.len()).map(|s| self.scores[[s, idx]]).collect())
    }
}

/// The confusion matrix behind one (method, step) curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveCell {
    pub method: String,
    pub step: usize,
    pub confusion: ConfusionMatrix,
}

/// A learning curve plus the per-point confusion matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveOutput {
    pub curve: LearningCurve,
    pub cells: Vec<CurveCell>,
}

impl CurveOutput {
    pub fn cell(&self, method: &str, step: usize) -> Option<&CurveCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.step == step)
    }
}

fn train_and_predict(
    method: &MethodConfig,
    prefix: &FeatureSet,
    test: &FeatureSet,
    sources: &[MulticlassModel],
) -> Result<Vec<usize>> {
    match method {
        MethodConfig::NoTransfer { c, gamma } => {
            let kernel = KernelSpec::rbf(*gamma)?;
            let model = train_multiclass(prefix, &kernel, *c)?;
            model.predict_batch(test.vectors.view())
        }
        MethodConfig::PriorFeatures { c } => {
            let model = prior_features_train(sources, prefix, *c)?;
            model.predict_batch(test.vectors.view())
        }
        MethodConfig::MultiAdapt { c, gamma } => {
            let kernel = KernelSpec::rbf(*gamma)?;
            let model =
                multi_adapt::train(prefix, sources, &kernel, *c, &BetaSearchConfig::default())?;
            model.predict_batch(test.vectors.view())
        }
        MethodConfig::Mkal { config } => {
            let model = mkal_train(prefix, sources, config)?;
            model.predict_batch(test.vectors.view())
        }
        MethodConfig::Hl2l {
            c_first,
            gamma_first,
            second_kernel,
            c_second,
            fraction,
            seed,
        } => {
            let first_kernel = KernelSpec::rbf(*gamma_first)?;
            let model = hl2l_train(
                prefix,
                sources,
                &first_kernel,
                *c_first,
                second_kernel,
                *c_second,
                *fraction,
                *seed,
            )?;
            model.predict_batch(test.vectors.view())
        }
    }
}

/// Trains every configured method on growing prefixes of the training pool
/// and scores it on the test set.
///
/// Steps must be strictly increasing and fit in the pool. The class universe
/// for the confusion matrices is the union of the training labels, the test
/// labels, and the sources' class sets, so matrices are comparable across
/// methods and steps.
pub fn run_learning_curve(
    train: &FeatureSet,
    test: &FeatureSet,
    sources: &[MulticlassModel],
    methods: &[MethodConfig],
    steps: &[usize],
    mode: &PrefixMode,
) -> Result<CurveOutput> {
    if methods.is_empty() {
        return Err(Error::Config("the learning curve needs at least one method".into()));
    }
    if steps.is_empty() {
        return Err(Error::Config("the learning curve needs at least one step".into()));
    }
    if steps[0] == 0 {
        return Err(Error::Config("prefix sizes must be positive".into()));
    }
    for pair in steps.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(format!(
                "prefix sizes must be strictly increasing, got {} after {}",
                pair[1], pair[0]
            )));
        }
    }
    let largest = *steps.last().expect("steps checked nonempty");
    if largest > train.len() {
        return Err(Error::Config(format!(
            "largest prefix size {largest} exceeds the training pool of {} items \
             (short by {})",
            train.len(),
            largest - train.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::Data("the test set is empty".into()));
    }
    for method in methods {
        if method.requires_sources() && sources.is_empty() {
            return Err(Error::Domain(format!(
                "method {} needs at least one source model",
                method.name()
            )));
        }
    }

    let mut universe = train.class_ids();
    universe.extend(test.class_ids());
    for source in sources {
        universe.extend_from_slice(&source.class_ids);
    }
    universe.sort_unstable();
    universe.dedup();

    let order = curve_order(&train.labels, mode);
    let method_names: Vec<String> = methods.iter().map(|m| m.name().to_string()).collect();
    let mut scores = Array2::zeros((steps.len(), methods.len()));
    let mut cells = Vec::with_capacity(steps.len() * methods.len());
    for (si, &step) in steps.iter().enumerate() {
        let prefix = train.select(&order[..step])?;
        for (mi, method) in methods.iter().enumerate() {
            let preds = train_and_predict(method, &prefix, test, sources)?;
            scores[[si, mi]] = balanced_accuracy(&test.labels, &preds)?;
            cells.push(CurveCell {
                method: method_names[mi].clone(),
                step,
                confusion: confusion(&test.labels, &preds, &universe)?,
            });
        }
    }
    Ok(CurveOutput {
        curve: LearningCurve {
            steps: steps.to_vec(),
            methods: method_names,
            scores,
        },
        cells,
    })
}
