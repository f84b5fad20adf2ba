//! Two-layer stacking on top of pre-trained source classifiers.
//!
//! The target user's training data is split in two. A first-layer model is
//! trained on part A alone; part B is then re-described by *confidence
//! vectors* — the first-layer model's class scores concatenated with every
//! source model's class scores — and a second-layer classifier is trained on
//! those vectors. At prediction time a new sample is featurized the same way
//! (its confidence vector is computed on the fly) and classified by the
//! second layer, which has learned how much to trust each model's opinions.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::kernels::KernelSpec;
use crate::lssvm::{train_multiclass, train_multiclass_with_classes, MulticlassModel};

/// Default fraction of each class routed to the first-layer training part.
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.63;

/// Splits a feature set class-by-class into two disjoint, exhaustive parts.
///
/// Each class contributes `floor(fraction * count)` items (at least one) to
/// part A and the remainder to part B, drawn in a seeded shuffled order;
/// within each part the original item order is preserved. Every class needs
/// at least two items, otherwise one of the parts would end up empty for it.
pub fn stratified_split(
    fs: &FeatureSet,
    fraction: f64,
    seed: u64,
) -> Result<(FeatureSet, FeatureSet)> {
    if !fraction.is_finite() || !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    if fs.is_empty() {
        return Err(Error::Data("cannot split an empty feature set".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &label) in fs.labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_a = Vec::new();
    let mut part_b = Vec::new();
    for (class, mut indices) in by_class {
        if indices.len() < 2 {
            return Err(Error::Config(format!(
                "class {class} has a single item; both split parts need at least one"
            )));
        }
        indices.shuffle(&mut rng);
        let take = ((fraction * indices.len() as f64).floor() as usize).max(1);
        part_a.extend_from_slice(&indices[..take]);
        part_b.extend_from_slice(&indices[take..]);
    }
    part_a.sort_unstable();
    part_b.sort_unstable();
    Ok((fs.select(&part_a)?, fs.select(&part_b)?))
}

/// Confidence vectors for a batch: the first-layer model's class scores
/// concatenated with each source model's class scores, in order.
///
/// The width is the sum of all models' class counts — `(K + 1) * G` when the
/// first layer and all `K` sources share one `G`-class set.
pub fn confidence_vectors(
    first_layer: &MulticlassModel,
    sources: &[MulticlassModel],
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut blocks = Vec::with_capacity(1 + sources.len());
    blocks.push(first_layer.scores_batch(x)?);
    for source in sources {
        blocks.push(source.scores_batch(x)?);
    }
    let width = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Array2::zeros((n, width));
    let mut offset = 0;
    for block in blocks {
        out.slice_mut(ndarray::s![.., offset..offset + block.ncols()])
            .assign(&block);
        offset += block.ncols();
    }
    Ok(out)
}

/// A two-layer stack: a first-layer model over raw features and a
/// second-layer model over confidence vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hl2lModel {
    #[serde(default)]
    pub id: String,
    pub first_layer: MulticlassModel,
    pub second_layer: MulticlassModel,
    pub source_ids: Vec<String>,
    pub split_fraction: f64,
    pub split_seed: u64,
    #[serde(skip)]
    sources: Vec<MulticlassModel>,
}

impl Hl2lModel {
    pub fn n_classes(&self) -> usize {
        self.second_layer.n_classes()
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.second_layer.class_ids
    }

    pub fn sources(&self) -> &[MulticlassModel] {
        &self.sources
    }

    /// Re-attaches source models after deserialization, in `source_ids` order.
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

    /// Second-layer class scores for a batch; confidence vectors are computed
    /// on the fly, never cached.
    pub fn scores_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.ensure_sources()?;
        let conf = confidence_vectors(&self.first_layer, &self.sources, x)?;
        self.second_layer.scores_batch(conf.view())
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.ensure_sources()?;
        let conf = confidence_vectors(&self.first_layer, &self.sources, x)?;
        self.second_layer.predict_batch(conf.view())
    }

    pub fn predict(&self, x: ndarray::ArrayView1<'_, f64>) -> Result<usize> {
        let batch = x.insert_axis(Axis(0));
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

/// Trains the two-layer stack.
///
/// Part A of the stratified split feeds the first layer (over the classes it
/// contains); part B, re-described as confidence vectors, feeds the second
/// layer, which is trained over the union of the target's and the sources'
/// class sets so it can name any class the task knows about.
#[allow(clippy::too_many_arguments)]
pub fn hl2l_train(
    fs: &FeatureSet,
    sources: &[MulticlassModel],
    first_kernel: &KernelSpec,
    first_c: f64,
    second_kernel: &KernelSpec,
    second_c: f64,
    fraction: f64,
    seed: u64,
) -> Result<Hl2lModel> {
    if sources.is_empty() {
        return Err(Error::Domain(
            "the two-layer stack needs at least one source model".into(),
        ));
    }
    let (part_a, part_b) = stratified_split(fs, fraction, seed)?;
    let first_layer = train_multiclass(&part_a, first_kernel, first_c)?;

    let conf = confidence_vectors(&first_layer, sources, part_b.vectors.view())?;
    let conf_fs = FeatureSet::new(conf, part_b.labels.clone(), part_b.repetitions.clone())?;

    let mut universe: Vec<usize> = fs.class_ids();
    for source in sources {
        universe.extend_from_slice(&source.class_ids);
    }
    universe.sort_unstable();
    universe.dedup();

    let second_layer = train_multiclass_with_classes(&conf_fs, second_kernel, second_c, &universe)?;
    Ok(Hl2lModel {
        id: String::new(),
        first_layer,
        second_layer,
        source_ids: sources.iter().map(|m| m.id.clone()).collect(),
        split_fraction: fraction,
        split_seed: seed,
        sources: sources.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use std::collections::BTreeMap;

    fn blob_set(n_per_class: usize, classes: usize, spread: f64, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Array2::zeros((n_per_class * classes, 2));
        let mut labels = Vec::new();
        for c in 0..classes {
            for j in 0..n_per_class {
                let i = c * n_per_class + j;
                vectors[[i, 0]] = (c as f64) * 4.0 + spread * (rng.gen::<f64>() - 0.5);
                vectors[[i, 1]] = ((c % 2) as f64) * 4.0 + spread * (rng.gen::<f64>() - 0.5);
                labels.push(c);
            }
        }
        let reps = vec![1; labels.len()];
        FeatureSet::new(vectors, labels, reps).unwrap()
    }

    fn source_models(fs: &FeatureSet, count: usize) -> Vec<MulticlassModel> {
        let kernel = KernelSpec::rbf(0.5).unwrap();
        (0..count)
            .map(|k| {
                let mut m = train_multiclass(fs, &kernel, 10.0).unwrap();
                m.id = format!("src{k}");
                m
            })
            .collect()
    }

    fn class_counts(fs: &FeatureSet) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &fs.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn split_takes_the_floor_of_the_fraction() {
        // 100 items of one class at 0.63 go 63 / 37.
        let fs = blob_set(100, 1, 1.0, 1);
        let (a, b) = stratified_split(&fs, 0.63, 0).unwrap();
        assert_eq!(a.len(), 63);
        assert_eq!(b.len(), 37);
    }

    #[test]
    fn split_is_stratified_disjoint_and_exhaustive() {
        let fs = blob_set(5, 3, 1.0, 2);
        let (a, b) = stratified_split(&fs, 0.63, 7).unwrap();
        assert_eq!(a.len() + b.len(), fs.len());
        let ca = class_counts(&a);
        let cb = class_counts(&b);
        for class in 0..3 {
            assert_eq!(ca[&class], 3); // floor(0.63 * 5)
            assert_eq!(cb[&class], 2);
        }
    }

    #[test]
    fn split_guarantees_one_item_per_part() {
        // Two items per class: floor gives 1, remainder gives 1.
        let fs = blob_set(2, 4, 1.0, 3);
        let (a, b) = stratified_split(&fs, 0.63, 0).unwrap();
        for counts in [class_counts(&a), class_counts(&b)] {
            assert_eq!(counts.len(), 4);
            assert!(counts.values().all(|&c| c == 1));
        }
        // A tiny fraction still sends at least one item to part A.
        let (a, b) = stratified_split(&fs, 0.01, 0).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let mut labels = vec![0, 0, 0, 1];
        let vectors = Array2::from_shape_fn((4, 2), |(i, j)| (i * 2 + j) as f64);
        let fs = FeatureSet::new(vectors, labels.clone(), vec![1; 4]).unwrap();
        let err = stratified_split(&fs, 0.63, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("class 1"));

        labels[3] = 0;
        let fs =
            FeatureSet::new(Array2::zeros((4, 2)), labels, vec![1; 4]).unwrap();
        assert!(stratified_split(&fs, 0.63, 0).is_ok());
    }

    #[test]
    fn split_is_deterministic_in_the_seed() {
        let fs = blob_set(10, 3, 1.0, 4);
        let (a1, _) = stratified_split(&fs, 0.63, 11).unwrap();
        let (a2, _) = stratified_split(&fs, 0.63, 11).unwrap();
        assert_eq!(a1, a2);
        let (a3, _) = stratified_split(&fs, 0.63, 12).unwrap();
        assert!(a1 != a3, "different seeds should shuffle differently");
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty_sets() {
        let fs = blob_set(4, 2, 1.0, 5);
        for bad in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(matches!(
                stratified_split(&fs, bad, 0),
                Err(Error::Config(_))
            ));
        }
        let empty = FeatureSet::new(Array2::zeros((0, 2)), vec![], vec![]).unwrap();
        assert!(matches!(
            stratified_split(&empty, 0.63, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn confidence_width_is_the_sum_of_class_counts() {
        // An 18-class task with two sources: 3 * 18 = 54 columns.
        let fs = blob_set(2, 18, 0.3, 6);
        let sources = source_models(&fs, 2);
        let kernel = KernelSpec::rbf(0.5).unwrap();
        let first = train_multiclass(&fs, &kernel, 10.0).unwrap();
        let conf = confidence_vectors(&first, &sources, fs.vectors.view()).unwrap();
        assert_eq!(conf.dim(), (36, 54));

        // Blocks sit in model order: first layer, then sources.
        let own = first.scores_batch(fs.vectors.view()).unwrap();
        assert_eq!(conf[[7, 3]], own[[7, 3]]);
        let src0 = sources[0].scores_batch(fs.vectors.view()).unwrap();
        assert_eq!(conf[[7, 18 + 3]], src0[[7, 3]]);
    }

    #[test]
    fn stack_learns_separable_data() {
        let pool = blob_set(12, 3, 1.5, 7);
        let sources = source_models(&pool, 2);
        let train = blob_set(8, 3, 1.5, 8);
        let test = blob_set(10, 3, 1.5, 9);
        let rbf = KernelSpec::rbf(0.5).unwrap();
        let model = hl2l_train(
            &train,
            &sources,
            &rbf,
            10.0,
            &KernelSpec::Linear,
            10.0,
            DEFAULT_SPLIT_FRACTION,
            0,
        )
        .unwrap();
        let preds = model.predict_batch(test.vectors.view()).unwrap();
        let correct = preds
            .iter()
            .zip(&test.labels)
            .filter(|(p, t)| p == t)
            .count();
        assert!(
            correct as f64 >= 0.8 * test.len() as f64,
            "only {correct}/{} correct",
            test.len()
        );
    }

    #[test]
    fn stack_requires_sources() {
        let train = blob_set(4, 2, 1.0, 10);
        let rbf = KernelSpec::rbf(0.5).unwrap();
        assert!(matches!(
            hl2l_train(&train, &[], &rbf, 1.0, &KernelSpec::Linear, 1.0, 0.63, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn second_layer_covers_the_source_class_union() {
        // The target prefix only shows classes {0, 1}; the sources know
        // {0, 1, 2}. The stack must still be able to name class 2.
        let pool = blob_set(6, 3, 1.0, 11);
        let sources = source_models(&pool, 1);
        let narrow = blob_set(4, 2, 1.0, 12);
        let rbf = KernelSpec::rbf(0.5).unwrap();
        let model = hl2l_train(
            &narrow,
            &sources,
            &rbf,
            10.0,
            &KernelSpec::Linear,
            10.0,
            0.63,
            0,
        )
        .unwrap();
        assert_eq!(model.class_ids(), &[0, 1, 2]);
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let pool = blob_set(6, 3, 1.0, 13);
        let sources = source_models(&pool, 2);
        let train = blob_set(6, 3, 1.0, 14);
        let rbf = KernelSpec::rbf(0.5).unwrap();
        let model = hl2l_train(
            &train,
            &sources,
            &rbf,
            10.0,
            &KernelSpec::Linear,
            10.0,
            0.63,
            5,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        model.save_json(&path).unwrap();
        let mut loaded = Hl2lModel::load_json(&path).unwrap();

        let probe = blob_set(3, 3, 1.2, 15);
        assert!(loaded.predict_batch(probe.vectors.view()).is_err());
        let mut wrong = model.sources().to_vec();
        wrong.swap(0, 1);
        assert!(loaded.attach_sources(wrong).is_err());
        loaded.attach_sources(model.sources().to_vec()).unwrap();
        assert_eq!(
            model.predict_batch(probe.vectors.view()).unwrap(),
            loaded.predict_batch(probe.vectors.view()).unwrap()
        );
    }
}
