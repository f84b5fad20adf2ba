//! Source-model cache.
//!
//! Grid search over every source subject dominates experiment runtime, so
//! trained source models are kept on disk. An entry is keyed by a content
//! hash of everything that determines the model — the subject's training
//! features and the search grid — and carries a checksum of its own payload,
//! so stale entries retrain (key mismatch) and damaged files are detected
//! and rebuilt rather than trusted.

use std::path::{Path, PathBuf};

use myoadapt::features::FeatureSet;
use myoadapt::kernels::KernelSpec;
use myoadapt::lssvm::{grid_search, train_multiclass, GridSearchResult, MulticlassModel};
use myoadapt::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::ProcessedSubject;
use crate::config::GridConfig;

/// Bumped whenever the payload layout or key recipe changes, so old cache
/// files retrain instead of deserializing wrongly.
const CACHE_FORMAT: u32 = 1;

/// What is stored per source subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourcePayload {
    pub subject: String,
    /// Content key the entry was built for.
    pub key: String,
    pub grid: GridSearchResult,
    pub model: MulticlassModel,
}

/// On-disk wrapper: the payload plus a checksum over its canonical JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheFile {
    format: u32,
    /// Hex SHA-256 of the canonical payload JSON.
    checksum: String,
    payload: SourcePayload,
}

/// A source model, with provenance for logging and idempotence tests.
#[derive(Debug, Clone)]
pub struct CachedSource {
    pub model: MulticlassModel,
    pub grid: GridSearchResult,
    pub from_cache: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Digest of a feature set: dimensions, raw coefficient bits, labels and
/// repetition indices, in a fixed order.
fn feature_set_digest(fs: &FeatureSet) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update((fs.len() as u64).to_le_bytes());
    h.update((fs.dim() as u64).to_le_bytes());
    for v in fs.vectors.iter() {
        h.update(v.to_le_bytes());
    }
    for l in &fs.labels {
        h.update((*l as u64).to_le_bytes());
    }
    for r in &fs.repetitions {
        h.update(r.to_le_bytes());
    }
    h.finalize().to_vec()
}

/// The content key: training data plus everything the grid search sees.
pub fn source_key(subject: &ProcessedSubject, grid: &GridConfig) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_FORMAT.to_le_bytes());
    h.update(feature_set_digest(&subject.train));
    h.update((grid.folds as u64).to_le_bytes());
    h.update((grid.c_values.len() as u64).to_le_bytes());
    for c in &grid.c_values {
        h.update(c.to_le_bytes());
    }
    h.update((grid.gamma_values.len() as u64).to_le_bytes());
    for g in &grid.gamma_values {
        h.update(g.to_le_bytes());
    }
    sha256_hex(&h.finalize())
}

fn entry_path(cache_dir: &Path, subject_id: &str) -> PathBuf {
    cache_dir.join(format!("source_{subject_id}.json"))
}

/// Tries to load a valid, up-to-date entry; any failure (missing file,
/// unparseable JSON, format or key mismatch, checksum mismatch) means
/// "retrain".
fn load_valid_entry(path: &Path, subject_id: &str, key: &str) -> Option<SourcePayload> {
    let text = std::fs::read_to_string(path).ok()?;
    let file: CacheFile = serde_json::from_str(&text).ok()?;
    if file.format != CACHE_FORMAT {
        log::info!("cache entry {} has old format {}, retraining", path.display(), file.format);
        return None;
    }
    let canonical = serde_json::to_string(&file.payload).ok()?;
    if sha256_hex(canonical.as_bytes()) != file.checksum {
        log::warn!("cache entry {} failed its checksum, retraining", path.display());
        return None;
    }
    if file.payload.key != key || file.payload.subject != subject_id {
        log::info!("cache entry {} is stale, retraining", path.display());
        return None;
    }
    Some(file.payload)
}

fn store_entry(path: &Path, payload: &SourcePayload) -> Result<()> {
    let canonical = serde_json::to_string(payload)?;
    let file = CacheFile {
        format: CACHE_FORMAT,
        checksum: sha256_hex(canonical.as_bytes()),
        payload: payload.clone(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    // Write-then-rename so a crash never leaves a half-written entry behind.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(&file)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Returns the subject's grid-searched multiclass model, training it only
/// when no valid cache entry exists.
pub fn train_or_load_source(
    cache_dir: &Path,
    subject: &ProcessedSubject,
    grid: &GridConfig,
) -> Result<CachedSource> {
    let key = source_key(subject, grid);
    let path = entry_path(cache_dir, &subject.id);
    if let Some(payload) = load_valid_entry(&path, &subject.id, &key) {
        return Ok(CachedSource { model: payload.model, grid: payload.grid, from_cache: true });
    }
    let result = grid_search(&subject.train, &grid.spec(), grid.folds)?;
    let kernel = KernelSpec::rbf(result.gamma)?;
    let mut model = train_multiclass(&subject.train, &kernel, result.c)?;
    model.id = subject.id.clone();
    let payload =
        SourcePayload { subject: subject.id.clone(), key, grid: result.clone(), model: model.clone() };
    store_entry(&path, &payload)?;
    Ok(CachedSource { model, grid: result, from_cache: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use myoadapt::features::FeatureSet;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subject(seed: u64) -> ProcessedSubject {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_per = 8;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for class in 0..3usize {
            for _ in 0..n_per {
                let cx = class as f64;
                rows.push([cx + 0.2 * rng.gen::<f64>(), -cx + 0.2 * rng.gen::<f64>()]);
                labels.push(class);
            }
        }
        let vectors =
            Array2::from_shape_vec((rows.len(), 2), rows.iter().flatten().copied().collect())
                .unwrap();
        let reps = vec![1; labels.len()];
        let fs = FeatureSet::new(vectors, labels, reps).unwrap();
        ProcessedSubject { id: "s01".into(), train: fs.clone(), test: fs }
    }

    fn grid() -> GridConfig {
        GridConfig { c_values: vec![1.0, 10.0], gamma_values: vec![0.5, 1.0], folds: 2 }
    }

    #[test]
    fn second_lookup_hits_the_cache_with_identical_model() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject(3);
        let first = train_or_load_source(dir.path(), &s, &grid()).unwrap();
        assert!(!first.from_cache);
        let second = train_or_load_source(dir.path(), &s, &grid()).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.model.alphas, first.model.alphas);
        assert_eq!(second.model.biases, first.model.biases);
        assert_eq!(second.grid.c, first.grid.c);
        assert_eq!(second.grid.gamma, first.grid.gamma);
    }

    #[test]
    fn changed_data_or_grid_invalidates_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject(3);
        train_or_load_source(dir.path(), &s, &grid()).unwrap();

        let different_data = subject(4);
        let retrained = train_or_load_source(dir.path(), &different_data, &grid()).unwrap();
        assert!(!retrained.from_cache, "new data must retrain");

        let mut wider = grid();
        wider.c_values.push(100.0);
        let retrained = train_or_load_source(dir.path(), &different_data, &wider).unwrap();
        assert!(!retrained.from_cache, "new grid must retrain");
    }

    #[test]
    fn corrupted_entry_is_detected_and_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject(3);
        train_or_load_source(dir.path(), &s, &grid()).unwrap();

        // Flip one digit inside a stored coefficient.
        let path = entry_path(dir.path(), "s01");
        let text = std::fs::read_to_string(&path).unwrap();
        let start = text.find("\"alphas\"").unwrap();
        let byte = text[start..].find(|c: char| c.is_ascii_digit()).unwrap() + start;
        let mut damaged = text.into_bytes();
        damaged[byte] = if damaged[byte] == b'5' { b'6' } else { b'5' };
        std::fs::write(&path, damaged).unwrap();

        let rebuilt = train_or_load_source(dir.path(), &s, &grid()).unwrap();
        assert!(!rebuilt.from_cache, "checksum mismatch must retrain");
        // And the rebuilt entry is valid again.
        let again = train_or_load_source(dir.path(), &s, &grid()).unwrap();
        assert!(again.from_cache);
    }

    #[test]
    fn unparseable_entry_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let s = subject(3);
        train_or_load_source(dir.path(), &s, &grid()).unwrap();
        std::fs::write(entry_path(dir.path(), "s01"), b"{ not json").unwrap();
        let rebuilt = train_or_load_source(dir.path(), &s, &grid()).unwrap();
        assert!(!rebuilt.from_cache);
    }
}
