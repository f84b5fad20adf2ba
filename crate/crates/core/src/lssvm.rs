//! Least-squares support vector machines.
//!
//! Training a binary LS-SVM is one dense linear solve of the bordered system
//!
//! ```text
//! | K + I/C   1 | |α|   |y|
//! | 1ᵀ        0 | |b| = |0|
//! ```
//!
//! so every training point ends up with a (generally nonzero) dual
//! coefficient. Multiclass problems are one-vs-all: all class columns share
//! the same bordered matrix, so the factorization is reused across classes.
//! Hyperparameters come from a stratified cross-validated grid search over
//! `(C, γ)`.
//!
//! The module also hosts the *prior-features* baseline: map every vector to
//! the concatenation of all source models' score vectors and train a linear
//! LS-SVM on top.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::balanced_accuracy;
use crate::features::FeatureSet;
use crate::kernels::{gram_matrix, kernel_eval, KernelSpec};
use crate::linalg::{bordered_system, LuFactor};

/// Enforced bound on the relative residual of every trained class column.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// A trained binary LS-SVM. Non-sparse: `alphas` has one entry per training
/// point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryLssvmModel {
    pub alphas: Array1<f64>,
    pub bias: f64,
    /// Training inputs, one row per point.
    pub train_x: Array2<f64>,
    pub kernel: KernelSpec,
    pub c: f64,
}

impl BinaryLssvmModel {
    /// Decision value `Σ αᵢ k(xᵢ, x) + b`.
    pub fn score(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        let mut acc = self.bias;
        for (i, row) in self.train_x.rows().into_iter().enumerate() {
            acc += self.alphas[i] * kernel_eval(&self.kernel, row, x)?;
        }
        Ok(acc)
    }
}

/// Trains a binary LS-SVM on `±1` targets.
pub fn train_binary(
    x: &Array2<f64>,
    y: &Array1<f64>,
    kernel: &KernelSpec,
    c: f64,
) -> Result<BinaryLssvmModel> {
    if x.nrows() == 0 {
        return Err(Error::Data("cannot train on an empty set".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::Domain(format!(
            "{} training rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::Domain("binary targets must be exactly +1 or -1".into()));
    }
    kernel.validate()?;
    let gram = gram_matrix(kernel, x.view(), x.view())?;
    let system = BorderedSolver::new(&gram, c)?;
    let solution = system.solve(&y.to_owned())?;
    let n = x.nrows();
    Ok(BinaryLssvmModel {
        alphas: solution.slice(ndarray::s![..n]).to_owned(),
        bias: solution[n],
        train_x: x.clone(),
        kernel: *kernel,
        c,
    })
}

/// Factored bordered system with residual-checked solves.
///
/// One step of iterative refinement follows every solve; the refined relative
/// residual must stay below [`RESIDUAL_TOL`] or training aborts with a
/// numeric error carrying the factorization's pivot-ratio estimate.
pub(crate) struct BorderedSolver {
    matrix: Array2<f64>,
    factor: LuFactor,
}

impl BorderedSolver {
    pub(crate) fn new(gram: &Array2<f64>, c: f64) -> Result<Self> {
        let matrix = bordered_system(gram, c)?;
        let factor = LuFactor::new(matrix.clone())?;
        Ok(BorderedSolver { matrix, factor })
    }

    /// Solves for one `±1` (or shifted) target vector; the right-hand side is
    /// `[targets; 0]`. Returns the full `(N+1)`-vector `[α; b]`.
    pub(crate) fn solve(&self, targets: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.factor.dim() - 1;
        if targets.len() != n {
            return Err(Error::Domain(format!(
                "{} targets for a system of {n} training points",
                targets.len()
            )));
        }
        let mut rhs = Array1::zeros(n + 1);
        rhs.slice_mut(ndarray::s![..n]).assign(targets);
        let mut x = self.factor.solve(&rhs)?;
        // One refinement step keeps residuals tight even at aggressive
        // hyperparameter corners.
        let r = &rhs - &self.matrix.dot(&x);
        x += &self.factor.solve(&r)?;

        let resid = (&rhs - &self.matrix.dot(&x)).mapv(|v| v * v).sum().sqrt();
        let scale = rhs.mapv(|v| v * v).sum().sqrt().max(1.0);
        if resid > RESIDUAL_TOL * scale {
            return Err(Error::Numeric {
                msg: format!(
                    "bordered-system residual {resid:.3e} exceeds {RESIDUAL_TOL:.0e}·‖y‖ after refinement"
                ),
                condition: Some(self.factor.pivot_ratio()),
            });
        }
        Ok(x)
    }

    /// Diagonal of the inverse of the bordered matrix (training-point part is
    /// the first `N` entries).
    pub(crate) fn inverse_diagonal(&self) -> Array1<f64> {
        self.factor.inverse_diagonal()
    }
}

/// One-vs-all multiclass LS-SVM. All class columns share the training matrix
/// and kernel; `class_ids` is ascending and class `g`'s coefficients live in
/// `alphas` column `g`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MulticlassModel {
    /// Identifier of the subject/dataset this model was trained on.
    #[serde(default)]
    pub id: String,
    pub kernel: KernelSpec,
    pub c: f64,
    pub train_x: Array2<f64>,
    pub class_ids: Vec<usize>,
    /// `N × G` dual coefficients.
    pub alphas: Array2<f64>,
    /// One bias per class.
    pub biases: Vec<f64>,
}

/// Trains one-vs-all on the classes present in the feature set (ascending).
pub fn train_multiclass(fs: &FeatureSet, kernel: &KernelSpec, c: f64) -> Result<MulticlassModel> {
    let classes = fs.class_ids();
    train_multiclass_with_classes(fs, kernel, c, &classes)
}

/// Trains one-vs-all over an explicit class universe. Classes without
/// positive examples train on all-negative targets — useful when a small
/// calibration set has not yet demonstrated every class the deployment must
/// recognize. Labels outside the universe are a domain error.
pub fn train_multiclass_with_classes(
    fs: &FeatureSet,
    kernel: &KernelSpec,
    c: f64,
    class_ids: &[usize],
) -> Result<MulticlassModel> {
    if fs.is_empty() {
        return Err(Error::Data("cannot train on an empty feature set".into()));
    }
    let mut classes = class_ids.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Data(format!(
            "multiclass training needs at least 2 classes, got {:?}",
            classes
        )));
    }
    if let Some(bad) = fs.labels.iter().find(|l| !classes.contains(l)) {
        return Err(Error::Domain(format!(
            "training label {bad} is outside the class universe {classes:?}"
        )));
    }
    kernel.validate()?;

    let gram = gram_matrix(kernel, fs.vectors.view(), fs.vectors.view())?;
    let solver = BorderedSolver::new(&gram, c)?;
    let n = fs.len();
    let mut alphas = Array2::zeros((n, classes.len()));
    let mut biases = Vec::with_capacity(classes.len());
    for (g, &class) in classes.iter().enumerate() {
        let y = one_vs_all_targets(&fs.labels, class);
        let sol = solver.solve(&y)?;
        alphas.column_mut(g).assign(&sol.slice(ndarray::s![..n]));
        biases.push(sol[n]);
    }
    Ok(MulticlassModel {
        id: String::new(),
        kernel: *kernel,
        c,
        train_x: fs.vectors.clone(),
        class_ids: classes,
        alphas,
        biases,
    })
}

/// `+1` where the label equals `class`, `−1` elsewhere.
pub fn one_vs_all_targets(labels: &[usize], class: usize) -> Array1<f64> {
    Array1::from_iter(labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }))
}

impl MulticlassModel {
    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    /// Per-class decision values for a batch: `n × G`.
    pub fn scores_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let gram = gram_matrix(&self.kernel, x, self.train_x.view())?;
        let mut scores = gram.dot(&self.alphas);
        for (g, &b) in self.biases.iter().enumerate() {
            scores.index_axis_mut(Axis(1), g).mapv_inplace(|v| v + b);
        }
        Ok(scores)
    }

    /// Per-class decision values for one vector.
    pub fn scores(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        let batch = self.scores_batch(x.insert_axis(Axis(0)))?;
        Ok(batch.row(0).to_vec())
    }

    /// Predicted class of one vector, plus the per-class scores. Ties go to
    /// the lowest class id.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<(usize, Vec<f64>)> {
        let scores = self.scores(x)?;
        Ok((self.class_ids[argmax_lowest(&scores)], scores))
    }

    /// Predicted classes for a batch.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let scores = self.scores_batch(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| self.class_ids[argmax_lowest(row.as_slice().expect("contiguous"))])
            .collect())
    }

    /// Materializes one class column as a standalone binary model.
    pub fn binary_model(&self, class: usize) -> Result<BinaryLssvmModel> {
        let g = self
            .class_ids
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::Domain(format!("class {class} is not part of this model")))?;
        Ok(BinaryLssvmModel {
            alphas: self.alphas.column(g).to_owned(),
            bias: self.biases[g],
            train_x: self.train_x.clone(),
            kernel: self.kernel,
            c: self.c,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Index of the maximum; on exact ties the lowest index wins.
pub(crate) fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

/// Candidate values for the `(C, γ)` search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
}

impl GridSpec {
    /// The customary six-decade grid: `{0.01, 0.1, 1, 10, 100, 1000}` for
    /// both parameters.
    pub fn six_decades() -> Self {
        let v = vec![0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
        GridSpec { c_values: v.clone(), gamma_values: v }
    }

    fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::Config("grid must offer at least one C and one gamma".into()));
        }
        if self.c_values.iter().chain(self.gamma_values.iter()).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("grid values must be positive and finite".into()));
        }
        Ok(())
    }
}

/// One evaluated grid combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub gamma: f64,
    /// Mean balanced accuracy across folds.
    pub score: f64,
}

/// Winning combination plus the full score table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub c: f64,
    pub gamma: f64,
    pub score: f64,
    pub table: Vec<GridPoint>,
}

/// Stratified fold assignment: the j-th item of each class goes to fold
/// `j mod folds`. Returns per-fold validation index lists. Every class must
/// have at least `folds` items.
pub fn stratified_folds(labels: &[usize], folds: usize) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut per_class_counter: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    let mut assignment = vec![0usize; labels.len()];
    for (i, &label) in labels.iter().enumerate() {
        let counter = per_class_counter.entry(label).or_insert(0);
        assignment[i] = *counter % folds;
        *counter += 1;
    }
    if let Some((class, count)) = per_class_counter.iter().find(|(_, &count)| count < folds) {
        return Err(Error::Config(format!(
            "class {class} has only {count} items, fewer than the {folds} folds"
        )));
    }
    let mut val_indices = vec![Vec::new(); folds];
    for (i, &fold) in assignment.iter().enumerate() {
        val_indices[fold].push(i);
    }
    Ok(val_indices)
}

/// Exhaustive cross-validated search over `C × γ` for an RBF kernel.
///
/// Ties break toward the smaller `C`, then the smaller `γ`. The returned
/// table carries every combination (|C|·|γ| entries) in `(C asc, γ asc)`
/// order.
pub fn grid_search(fs: &FeatureSet, grid: &GridSpec, folds: usize) -> Result<GridSearchResult> {
    grid.validate()?;
    let fold_val = stratified_folds(&fs.labels, folds)?;
    let classes = fs.class_ids();
    if classes.len() < 2 {
        return Err(Error::Data("grid search needs at least 2 classes".into()));
    }

    // score_map[(ci, gi)] = mean balanced accuracy.
    let mut scores = vec![vec![0.0f64; grid.gamma_values.len()]; grid.c_values.len()];
    for (gi, &gamma) in grid.gamma_values.iter().enumerate() {
        let kernel = KernelSpec::Rbf { gamma };
        // One full Gram per gamma; folds index into it.
        let full_gram = gram_matrix(&kernel, fs.vectors.view(), fs.vectors.view())?;
        for val in &fold_val {
            let train: Vec<usize> = complement(val, fs.len());
            let sub_gram = take_square(&full_gram, &train);
            let cross_gram = take_rect(&full_gram, val, &train);
            let train_labels: Vec<usize> = train.iter().map(|&i| fs.labels[i]).collect();
            let val_labels: Vec<usize> = val.iter().map(|&i| fs.labels[i]).collect();
            for (ci, &c) in grid.c_values.iter().enumerate() {
                let solver = BorderedSolver::new(&sub_gram, c)?;
                let mut fold_scores = Array2::zeros((val.len(), classes.len()));
                for (g, &class) in classes.iter().enumerate() {
                    let y = one_vs_all_targets(&train_labels, class);
                    let sol = solver.solve(&y)?;
                    let alphas = sol.slice(ndarray::s![..train.len()]);
                    let bias = sol[train.len()];
                    let class_scores = cross_gram.dot(&alphas.to_owned()) + bias;
                    fold_scores.column_mut(g).assign(&class_scores);
                }
                let preds: Vec<usize> = fold_scores
                    .rows()
                    .into_iter()
                    .map(|row| classes[argmax_lowest(row.as_slice().expect("contiguous"))])
                    .collect();
                scores[ci][gi] += balanced_accuracy(&val_labels, &preds)?;
            }
        }
    }

    let fold_count = fold_val.len() as f64;
    let mut table = Vec::with_capacity(grid.c_values.len() * grid.gamma_values.len());
    let (mut best_c, mut best_g, mut best_score) = (0usize, 0usize, f64::NEG_INFINITY);
    for (ci, &c) in grid.c_values.iter().enumerate() {
        for (gi, &gamma) in grid.gamma_values.iter().enumerate() {
            let score = scores[ci][gi] / fold_count;
            table.push(GridPoint { c, gamma, score });
            if score > best_score {
                best_score = score;
                best_c = ci;
                best_g = gi;
            }
        }
    }
    Ok(GridSearchResult {
        c: grid.c_values[best_c],
        gamma: grid.gamma_values[best_g],
        score: best_score,
        table,
    })
}

/// Mean cross-validated balanced accuracy of a single `(kernel, C)`
/// combination — the building block for searches over other kernels.
pub fn cv_score(fs: &FeatureSet, kernel: &KernelSpec, c: f64, folds: usize) -> Result<f64> {
    let fold_val = stratified_folds(&fs.labels, folds)?;
    let mut total = 0.0;
    for val in &fold_val {
        let train: Vec<usize> = complement(val, fs.len());
        let fs_train = fs.select(&train)?;
        let fs_val = fs.select(val)?;
        let model = train_multiclass_with_classes(&fs_train, kernel, c, &fs.class_ids())?;
        let preds = model.predict_batch(fs_val.vectors.view())?;
        total += balanced_accuracy(&fs_val.labels, &preds)?;
    }
    Ok(total / fold_val.len() as f64)
}

fn complement(sorted_subset: &[usize], n: usize) -> Vec<usize> {
    let mut in_subset = vec![false; n];
    for &i in sorted_subset {
        in_subset[i] = true;
    }
    (0..n).filter(|i| !in_subset[*i]).collect()
}

fn take_square(gram: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), idx.len()), |(i, j)| gram[[idx[i], idx[j]]])
}

fn take_rect(gram: &Array2<f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| gram[[rows[i], cols[j]]])
}

// ---------------------------------------------------------------------------
// Prior-features baseline
// ---------------------------------------------------------------------------

/// Maps raw vectors to the concatenation of every source model's score
/// vector, in source order: `n × (K·G)`.
pub fn stack_source_scores(sources: &[MulticlassModel], x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if sources.is_empty() {
        return Err(Error::Domain("prior features need at least one source model".into()));
    }
    let class_set = &sources[0].class_ids;
    for s in sources.iter().skip(1) {
        if &s.class_ids != class_set {
            return Err(Error::Domain(format!(
                "source models disagree on the class set: {:?} vs {:?}",
                class_set, s.class_ids
            )));
        }
    }
    let g = class_set.len();
    let mut stacked = Array2::zeros((x.nrows(), sources.len() * g));
    for (k, source) in sources.iter().enumerate() {
        let scores = source.scores_batch(x)?;
        stacked.slice_mut(ndarray::s![.., k * g..(k + 1) * g]).assign(&scores);
    }
    Ok(stacked)
}

/// Linear LS-SVM over stacked source scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorFeaturesModel {
    /// The linear model over the stacked score space.
    pub stacked: MulticlassModel,
    /// Identifiers of the source models, in stacking order.
    pub source_ids: Vec<String>,
    /// Live source models; dropped from serialized form (re-attach by id).
    #[serde(skip)]
    sources: Vec<MulticlassModel>,
}

/// Trains the prior-features baseline. The target's labels must all belong
/// to the sources' (shared) class set.
pub fn prior_features_train(
    sources: &[MulticlassModel],
    fs: &FeatureSet,
    c: f64,
) -> Result<PriorFeaturesModel> {
    let stacked_x = stack_source_scores(sources, fs.vectors.view())?;
    let class_set = sources[0].class_ids.clone();
    if let Some(bad) = fs.labels.iter().find(|l| !class_set.contains(l)) {
        return Err(Error::Domain(format!(
            "target label {bad} is not in the sources' class set {class_set:?}"
        )));
    }
    let stacked_fs = FeatureSet::new(stacked_x, fs.labels.clone(), fs.repetitions.clone())?;
    let stacked = train_multiclass_with_classes(&stacked_fs, &KernelSpec::Linear, c, &class_set)?;
    Ok(PriorFeaturesModel {
        stacked,
        source_ids: sources.iter().map(|s| s.id.clone()).collect(),
        sources: sources.to_vec(),
    })
}

impl PriorFeaturesModel {
    pub fn sources(&self) -> &[MulticlassModel] {
        &self.sources
    }

    /// Re-binds live source models after deserialization; ids must match the
    /// stacking order.
    pub fn attach_sources(&mut self, sources: Vec<MulticlassModel>) -> Result<()> {
        let ids: Vec<String> = sources.iter().map(|s| s.id.clone()).collect();
        if ids != self.source_ids {
            return Err(Error::Domain(format!(
                "source ids {ids:?} do not match the model's stacking order {:?}",
                self.source_ids
            )));
        }
        self.sources = sources;
        Ok(())
    }

    fn ensure_sources(&self) -> Result<()> {
        if self.sources.len() != self.source_ids.len() {
            return Err(Error::Domain(
                "source models are not attached; call attach_sources after loading".into(),
            ));
        }
        Ok(())
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<(usize, Vec<f64>)> {
        self.ensure_sources()?;
        let stacked = stack_source_scores(&self.sources, x.insert_axis(Axis(0)))?;
        self.stacked.predict(stacked.row(0))
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.ensure_sources()?;
        let stacked = stack_source_scores(&self.sources, x)?;
        self.stacked.predict_batch(stacked.view())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}
