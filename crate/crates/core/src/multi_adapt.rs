//! Adaptation of pre-trained source classifiers to a new user via per-class,
//! per-source transfer weights.
//!
//! Each one-vs-all subproblem for the new user is solved with the usual
//! regularized least-squares machinery, except that the regression targets are
//! shifted by a weighted combination of the source models' confidence scores.
//! The weights (one per source/class cell, constrained to a box) are chosen by
//! coordinate descent on a leave-one-out hinge objective that is available in
//! closed form from a single matrix factorization — no retraining inside the
//! search loop.

use ndarray::{Array1, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kernels::{gram_matrix, KernelSpec};
use crate::lssvm::{argmax_lowest, BorderedSolver, MulticlassModel};

/// Upper edge of the box constraint on transfer weights.
pub const BETA_BOX_MAX: f64 = 4.0;

/// Default candidate values scanned for each transfer-weight cell.
pub const DEFAULT_BETA_CANDIDATES: [f64; 5] = [0.0, 0.25, 0.5, 1.0, 2.0];

/// Default number of full passes over all (source, class) cells.
pub const DEFAULT_BETA_SWEEPS: usize = 2;

/// Per-source, per-class transfer weights, constrained to `[0, BETA_BOX_MAX]`.
///
/// Entry `(k, g)` scales how strongly source `k`'s confidence for class `g`
/// shifts the regression targets of the target user's class-`g` subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMatrix {
    values: Array2<f64>,
}

impl BetaMatrix {
    /// All-zero weights for `n_sources` sources and `n_classes` classes.
    pub fn zeros(n_sources: usize, n_classes: usize) -> Self {
        Self {
            values: Array2::zeros((n_sources, n_classes)),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, source: usize, class: usize) -> f64 {
        self.values[[source, class]]
    }

    /// Sets one cell, enforcing the box constraint.
    pub fn set(&mut self, source: usize, class: usize, value: f64) -> Result<()> {
        if !value.is_finite() || !(0.0..=BETA_BOX_MAX).contains(&value) {
            return Err(Error::Config(format!(
                "transfer weight {value} outside the allowed box [0, {BETA_BOX_MAX}]"
            )));
        }
        self.values[[source, class]] = value;
        Ok(())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// True when every cell is exactly zero (no transfer at all).
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Search settings for the coordinate descent over transfer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSearchConfig {
    /// Candidate values tried for each cell; each must lie in the box.
    pub candidates: Vec<f64>,
    /// Number of full sweeps over all cells.
    pub sweeps: usize,
}

impl Default for BetaSearchConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_BETA_CANDIDATES.to_vec(),
            sweeps: DEFAULT_BETA_SWEEPS,
        }
    }
}

impl BetaSearchConfig {
    fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Config(
                "transfer-weight search needs at least one candidate value".into(),
            ));
        }
        for &v in &self.candidates {
            if !v.is_finite() || !(0.0..=BETA_BOX_MAX).contains(&v) {
                return Err(Error::Config(format!(
                    "transfer-weight candidate {v} outside the allowed box [0, {BETA_BOX_MAX}]"
                )));
            }
        }
        if self.sweeps == 0 {
            return Err(Error::Config(
                "transfer-weight search needs at least one sweep".into(),
            ));
        }
        Ok(())
    }
}

/// Confidence scores of every source model for every class on a batch of
/// vectors, laid out as `(source, class, item)`.
///
/// All sources must share one class set; the class axis follows that set in
/// ascending order.
pub fn source_score_table(
    sources: &[MulticlassModel],
    x: ArrayView2<'_, f64>,
) -> Result<Array3<f64>> {
    if sources.is_empty() {
        return Err(Error::Domain(
            "source score table needs at least one source model".into(),
        ));
    }
    let class_ids = sources[0].class_ids.clone();
    for (k, model) in sources.iter().enumerate() {
        if model.class_ids != class_ids {
            return Err(Error::Domain(format!(
                "source model {k} has class ids {:?}, expected {:?}",
                model.class_ids,
                class_ids
            )));
        }
    }
    let n = x.nrows();
    let g = class_ids.len();
    let mut table = Array3::zeros((sources.len(), g, n));
    for (k, model) in sources.iter().enumerate() {
        let scores = model.scores_batch(x)?; // n x g
        for gi in 0..g {
            for i in 0..n {
                table[[k, gi, i]] = scores[[i, gi]];
            }
        }
    }
    Ok(table)
}

/// Pieces needed to evaluate leave-one-out confidences of an adapted
/// one-vs-all subproblem without retraining.
///
/// With `alpha_prime` solving the bordered system for targets `y`,
/// `alpha_dprime` solving it for `-yhat` (the negated source-confidence
/// combination), and `p_diag` the training-block diagonal of the system's
/// inverse, the leave-one-out confidence of item `i` under transfer weight
/// `beta` is `y[i] - (alpha_prime[i] + beta * alpha_dprime[i]) / p_diag[i]`.
#[derive(Debug, Clone)]
pub struct LooComponents {
    pub alpha_prime: Array1<f64>,
    pub alpha_dprime: Array1<f64>,
    pub p_diag: Array1<f64>,
}

/// Computes leave-one-out components for one subproblem from its Gram matrix,
/// `±1` targets, and a source-confidence combination `yhat`.
pub fn loo_components(
    gram: &Array2<f64>,
    targets: &Array1<f64>,
    yhat: &Array1<f64>,
    c: f64,
) -> Result<LooComponents> {
    let n = gram.nrows();
    if targets.len() != n || yhat.len() != n {
        return Err(Error::Domain(format!(
            "targets ({}) and source combination ({}) must match the Gram size ({n})",
            targets.len(),
            yhat.len()
        )));
    }
    let solver = BorderedSolver::new(gram, c)?;
    let alpha_prime = solver.solve(targets)?;
    let alpha_dprime = solver.solve(&yhat.mapv(|v| -v))?;
    let p_diag = solver.inverse_diagonal();
    Ok(LooComponents {
        alpha_prime: alpha_prime.slice(ndarray::s![..n]).to_owned(),
        alpha_dprime: alpha_dprime.slice(ndarray::s![..n]).to_owned(),
        p_diag: p_diag.slice(ndarray::s![..n]).to_owned(),
    })
}

/// One-vs-all `±1` target matrix (`n x g`) for labels against a class list.
fn target_matrix(labels: &[usize], class_ids: &[usize]) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = labels.len();
    let g = class_ids.len();
    let mut y = Array2::from_elem((n, g), -1.0);
    let mut true_idx = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let gi = class_ids.binary_search(&label).map_err(|_| {
            Error::Domain(format!(
                "label {label} is not in the source class set {class_ids:?}"
            ))
        })?;
        y[[i, gi]] = 1.0;
        true_idx.push(gi);
    }
    Ok((y, true_idx))
}

/// Everything the weight search and the final solve share: one factorization
/// of the bordered system plus the component solutions per cell.
struct AdaptWorkspace {
    solver: BorderedSolver,
    /// `n x g`: one-vs-all targets.
    targets: Array2<f64>,
    /// Per item, the column index of its own class.
    true_idx: Vec<usize>,
    /// `n x g`: training-block part of the solution for targets `y_g`.
    alpha_prime: Array2<f64>,
    /// `(k, g, i)`: training-block part of the solution for `-yhat^k_g`.
    alpha_dprime: Array3<f64>,
    /// Training-block diagonal of the bordered system's inverse.
    p_diag: Array1<f64>,
}

impl AdaptWorkspace {
    fn new(
        fs: &FeatureSet,
        table: &Array3<f64>,
        class_ids: &[usize],
        kernel: &KernelSpec,
        c: f64,
    ) -> Result<Self> {
        let n = fs.len();
        let g = class_ids.len();
        let k = table.shape()[0];
        if table.shape() != [k, g, n] {
            return Err(Error::Domain(format!(
                "source score table has shape {:?}, expected [{k}, {g}, {n}]",
                table.shape()
            )));
        }
        if fs.class_ids().len() < 2 {
            return Err(Error::Data(
                "adaptation needs at least two distinct classes in the target data".into(),
            ));
        }
        let (targets, true_idx) = target_matrix(&fs.labels, class_ids)?;
        let gram = gram_matrix(kernel, fs.vectors.view(), fs.vectors.view())?;
        let solver = BorderedSolver::new(&gram, c)?;
        let p_diag = solver.inverse_diagonal().slice(ndarray::s![..n]).to_owned();

        let mut alpha_prime = Array2::zeros((n, g));
        for gi in 0..g {
            let sol = solver.solve(&targets.column(gi).to_owned())?;
            for i in 0..n {
                alpha_prime[[i, gi]] = sol[i];
            }
        }
        let mut alpha_dprime = Array3::zeros((k, g, n));
        for ki in 0..k {
            for gi in 0..g {
                let rhs = Array1::from_shape_fn(n, |i| -table[[ki, gi, i]]);
                let sol = solver.solve(&rhs)?;
                for i in 0..n {
                    alpha_dprime[[ki, gi, i]] = sol[i];
                }
            }
        }
        Ok(Self {
            solver,
            targets,
            true_idx,
            alpha_prime,
            alpha_dprime,
            p_diag,
        })
    }

    fn n_items(&self) -> usize {
        self.true_idx.len()
    }

    fn n_classes(&self) -> usize {
        self.targets.ncols()
    }

    fn n_sources(&self) -> usize {
        self.alpha_dprime.shape()[0]
    }

    /// Leave-one-out confidence matrix (`n x g`) under the given weights.
    fn loo_confidences(&self, beta: &BetaMatrix) -> Array2<f64> {
        let n = self.n_items();
        let g = self.n_classes();
        let mut conf = Array2::zeros((n, g));
        for i in 0..n {
            for gi in 0..g {
                let mut coeff = self.alpha_prime[[i, gi]];
                for ki in 0..self.n_sources() {
                    coeff += beta.get(ki, gi) * self.alpha_dprime[[ki, gi, i]];
                }
                conf[[i, gi]] = self.targets[[i, gi]] - coeff / self.p_diag[i];
            }
        }
        conf
    }

    /// Multiclass hinge loss over leave-one-out confidences.
    fn hinge_loss(&self, conf: &Array2<f64>) -> f64 {
        let g = self.n_classes();
        let mut total = 0.0;
        for (i, &ti) in self.true_idx.iter().enumerate() {
            let mut worst = f64::NEG_INFINITY;
            for gi in 0..g {
                if gi != ti {
                    worst = worst.max(conf[[i, gi]]);
                }
            }
            total += (1.0 - conf[[i, ti]] + worst).max(0.0);
        }
        total
    }

    /// Hinge loss with column `gi`'s weight for source `ki` swapped to
    /// `candidate`, without committing the change.
    fn hinge_loss_with(
        &self,
        conf: &Array2<f64>,
        beta: &BetaMatrix,
        ki: usize,
        gi: usize,
        candidate: f64,
    ) -> f64 {
        let delta = candidate - beta.get(ki, gi);
        let g = self.n_classes();
        let mut total = 0.0;
        for (i, &ti) in self.true_idx.iter().enumerate() {
            let shifted = conf[[i, gi]] - delta * self.alpha_dprime[[ki, gi, i]] / self.p_diag[i];
            let cell = |col: usize| if col == gi { shifted } else { conf[[i, col]] };
            let mut worst = f64::NEG_INFINITY;
            for col in 0..g {
                if col != ti {
                    worst = worst.max(cell(col));
                }
            }
            total += (1.0 - cell(ti) + worst).max(0.0);
        }
        total
    }

    /// Commits a weight change, updating the confidence matrix in place.
    fn apply(&self, conf: &mut Array2<f64>, beta: &mut BetaMatrix, ki: usize, gi: usize, value: f64) {
        let delta = value - beta.get(ki, gi);
        if delta == 0.0 {
            return;
        }
        for i in 0..self.n_items() {
            conf[[i, gi]] -= delta * self.alpha_dprime[[ki, gi, i]] / self.p_diag[i];
        }
        beta.set(ki, gi, value).expect("candidate already validated");
    }

    /// Coordinate descent over all cells. Each cell move is accepted only on a
    /// strict improvement, so sweeps never increase the objective.
    fn descend(&self, search: &BetaSearchConfig) -> Result<BetaMatrix> {
        search.validate()?;
        let mut beta = BetaMatrix::zeros(self.n_sources(), self.n_classes());
        let mut conf = self.loo_confidences(&beta);
        let mut loss = self.hinge_loss(&conf);
        for _ in 0..search.sweeps {
            for ki in 0..self.n_sources() {
                for gi in 0..self.n_classes() {
                    let mut best_value = beta.get(ki, gi);
                    let mut best_loss = loss;
                    for &cand in &search.candidates {
                        if cand == beta.get(ki, gi) {
                            continue;
                        }
                        let trial = self.hinge_loss_with(&conf, &beta, ki, gi, cand);
                        if trial < best_loss {
                            best_loss = trial;
                            best_value = cand;
                        }
                    }
                    if best_value != beta.get(ki, gi) {
                        self.apply(&mut conf, &mut beta, ki, gi, best_value);
                        loss = best_loss;
                    }
                }
            }
        }
        Ok(beta)
    }

    /// Final per-class solve with shifted targets `y_g - sum_k beta[k,g] * yhat^k_g`.
    fn solve_adapted(
        &self,
        table: &Array3<f64>,
        beta: &BetaMatrix,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let n = self.n_items();
        let g = self.n_classes();
        let mut alphas = Array2::zeros((n, g));
        let mut biases = Vec::with_capacity(g);
        for gi in 0..g {
            let mut rhs = Array1::zeros(n);
            for i in 0..n {
                let mut shift = 0.0;
                for ki in 0..self.n_sources() {
                    shift += beta.get(ki, gi) * table[[ki, gi, i]];
                }
                rhs[i] = self.targets[[i, gi]] - shift;
            }
            let sol = self.solver.solve(&rhs)?;
            for i in 0..n {
                alphas[[i, gi]] = sol[i];
            }
            biases.push(sol[n]);
        }
        Ok((alphas, biases))
    }
}

/// Selects transfer weights by coordinate descent on the leave-one-out hinge
/// objective. Weights start at zero, so a source is only used where it
/// strictly improves the objective.
pub fn optimize_beta(
    fs: &FeatureSet,
    table: &Array3<f64>,
    class_ids: &[usize],
    kernel: &KernelSpec,
    c: f64,
    search: &BetaSearchConfig,
) -> Result<BetaMatrix> {
    let ws = AdaptWorkspace::new(fs, table, class_ids, kernel, c)?;
    ws.descend(search)
}

/// The leave-one-out hinge objective for a fixed weight matrix — the quantity
/// `optimize_beta` descends on, exposed for diagnostics and tests.
pub fn loo_hinge_loss(
    fs: &FeatureSet,
    table: &Array3<f64>,
    class_ids: &[usize],
    kernel: &KernelSpec,
    c: f64,
    beta: &BetaMatrix,
) -> Result<f64> {
    let ws = AdaptWorkspace::new(fs, table, class_ids, kernel, c)?;
    if beta.n_sources() != ws.n_sources() || beta.n_classes() != ws.n_classes() {
        return Err(Error::Domain(format!(
            "weight matrix is {}x{}, expected {}x{}",
            beta.n_sources(),
            beta.n_classes(),
            ws.n_sources(),
            ws.n_classes()
        )));
    }
    let conf = ws.loo_confidences(beta);
    Ok(ws.hinge_loss(&conf))
}

/// A target-user model whose per-class decision functions blend a kernel
/// expansion over the target's own training data with weighted source scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiAdaptModel {
    #[serde(default)]
    pub id: String,
    pub kernel: KernelSpec,
    pub c: f64,
    pub class_ids: Vec<usize>,
    pub train_x: Array2<f64>,
    /// `n x g` expansion coefficients of the adapted subproblems.
    pub alphas: Array2<f64>,
    pub biases: Vec<f64>,
    pub beta: BetaMatrix,
    pub source_ids: Vec<String>,
    #[serde(skip)]
    sources: Vec<MulticlassModel>,
}

impl MultiAdaptModel {
    pub fn n_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.nrows()
    }

    pub fn sources(&self) -> &[MulticlassModel] {
        &self.sources
    }

    /// Re-attaches source models after deserialization. Models must arrive in
    /// the same order as `source_ids`.
    pub fn attach_sources(&mut self, sources: Vec<MulticlassModel>) -> Result<()> {
        if sources.len() != self.source_ids.len() {
            return Err(Error::Domain(format!(
                "expected {} source models, got {}",
                self.source_ids.len(),
                sources.len()
            )));
        }
        for (expected, model) in self.source_ids.iter().zip(&sources) {
            if &model.id != expected {
                return Err(Error::Domain(format!(
                    "source model id {:?} does not match expected {:?}",
                    model.id, expected
                )));
            }
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

    /// Per-class confidence scores for a batch of vectors.
    pub fn scores_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.ensure_sources()?;
        let cross = gram_matrix(&self.kernel, x, self.train_x.view())?;
        let mut scores = cross.dot(&self.alphas);
        for (gi, &b) in self.biases.iter().enumerate() {
            scores.column_mut(gi).mapv_inplace(|v| v + b);
        }
        for (ki, source) in self.sources.iter().enumerate() {
            let src = source.scores_batch(x)?;
            for gi in 0..self.n_classes() {
                let w = self.beta.get(ki, gi);
                for i in 0..x.nrows() {
                    scores[[i, gi]] += w * src[[i, gi]];
                }
            }
        }
        Ok(scores)
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let scores = self.scores_batch(x)?;
        Ok(scores
            .rows()
            .into_iter()
            .map(|row| self.class_ids[argmax_lowest(row.as_slice().expect("contiguous row"))])
            .collect())
    }

    pub fn predict(&self, x: ndarray::ArrayView1<'_, f64>) -> Result<usize> {
        let batch = x.insert_axis(ndarray::Axis(0));
        Ok(self.predict_batch(batch)?[0])
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let model = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(model)
    }
}

/// Trains an adapted model: computes source scores on the target's training
/// data, selects transfer weights on the leave-one-out objective, then solves
/// each subproblem once with shifted targets.
///
/// With all weights zero the shifted targets equal the plain `±1` targets and
/// the solve path is identical to an unadapted multiclass model over the same
/// class set.
pub fn train(
    fs: &FeatureSet,
    sources: &[MulticlassModel],
    kernel: &KernelSpec,
    c: f64,
    search: &BetaSearchConfig,
) -> Result<MultiAdaptModel> {
    let table = source_score_table(sources, fs.vectors.view())?;
    let class_ids = sources[0].class_ids.clone();
    let ws = AdaptWorkspace::new(fs, &table, &class_ids, kernel, c)?;
    let beta = ws.descend(search)?;
    let (alphas, biases) = ws.solve_adapted(&table, &beta)?;
    Ok(MultiAdaptModel {
        id: String::new(),
        kernel: kernel.clone(),
        c,
        class_ids,
        train_x: fs.vectors.clone(),
        alphas,
        biases,
        beta,
        source_ids: sources.iter().map(|m| m.id.clone()).collect(),
        sources: sources.to_vec(),
    })
}
