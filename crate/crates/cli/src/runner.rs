//! Experiment execution: source-model preparation, per-target learning
//! curves, artifact files, and cross-target aggregation.
//!
//! Targets are independent jobs on a worker pool. Every file a target writes
//! lives under its own directory, so jobs never contend; a failing target
//! leaves an `error.json` behind and does not abort the others. All
//! randomness derives from the config's master seed, and every derived seed
//! is recorded in the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use myoadapt::emg_data::display_label;
use myoadapt::evaluation::{
    overlap_percentage, run_learning_curve, topk_histogram, ConfusionMatrix, CurveOutput,
    MethodConfig, PrefixMode,
};
use myoadapt::features::FeatureSet;
use myoadapt::hl2l::{confidence_vectors, stratified_split};
use myoadapt::kernels::KernelSpec;
use myoadapt::lssvm::{grid_search, train_multiclass, GridSearchResult, MulticlassModel};
use myoadapt::mkal::MkalConfig;
use myoadapt::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::cache::train_or_load_source;
use crate::cohort::{build_cohort, process_subject, ProcessedSubject};
use crate::config::{ExperimentConfig, MethodName};
use crate::report::{
    build_correlation, build_curve_stats, write_correlation_csv, write_curve_stats_csv, CurveTable,
};
use crate::{derive_seed, exit_code};

/// Runtime knobs that never influence results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for the per-target phase; `None` = one per CPU.
    pub jobs: Option<usize>,
}

/// Outcome of `run_experiment`.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
    /// 0 when every target succeeded; otherwise the most severe per-target
    /// exit class (numeric > data > config).
    pub exit_code: i32,
}

/// The run manifest written to `run_summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    /// Echo of the effective configuration (after CLI overrides).
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub sources: Vec<SourceStatus>,
    pub targets: Vec<TargetStatus>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceStatus {
    pub id: String,
    pub from_cache: bool,
    pub c: f64,
    pub gamma: f64,
    pub cv_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetStatus {
    pub id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<TargetError>,
}

/// Machine-readable failure report, also written to `targets/<id>/error.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetError {
    pub subject: String,
    /// Which phase failed: grid_search, learning_curve, artifacts, ...
    pub stage: String,
    /// Exit-code class: config, data or numeric.
    pub kind: String,
    pub message: String,
}

/// Per-target summary written to `targets/<id>/summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    /// Effective source subjects, in config order, after leave-one-out.
    pub sources: Vec<String>,
    pub n_train_pool: usize,
    pub n_test: usize,
    /// Class ids in reporting convention (1 = rest).
    pub class_ids: Vec<usize>,
    pub grid: GridChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_layer_grid: Option<GridChoice>,
    /// True when the stack's second layer fell back to the first layer's
    /// hyperparameters because its own search was infeasible.
    pub second_layer_fallback: bool,
    pub methods: Vec<MethodConfig>,
    pub steps: Vec<usize>,
    pub prefix: PrefixMode,
    pub seeds: TargetSeeds,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridChoice {
    pub c: f64,
    pub gamma: f64,
    pub cv_score: f64,
}

impl From<&GridSearchResult> for GridChoice {
    fn from(r: &GridSearchResult) -> Self {
        GridChoice { c: r.c, gamma: r.gamma, cv_score: r.score }
    }
}

/// Every derived seed a target consumed (the master seed is in the manifest).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TargetSeeds {
    pub mkal_order: u64,
    pub stack_split: u64,
}

/// Maps an error to its CLI exit-code class name.
fn error_kind(err: &Error) -> &'static str {
    match exit_code(err) {
        2 => "config",
        4 => "numeric",
        _ => "data",
    }
}

struct TargetResult {
    id: String,
    outcome: std::result::Result<(TargetSummary, CurveOutput), TargetError>,
}

/// Runs the whole experiment: cohort building, source preparation, one job
/// per target, and cross-target aggregation.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let out_dir = cfg.resolved_out_dir()?.to_path_buf();
    let cache_dir = cfg.resolved_cache_dir()?;
    let targets_dir = out_dir.join("targets");
    std::fs::create_dir_all(&targets_dir)?;

    // --- Cohort: load and featurize every subject the run touches. -------
    let mut wanted: BTreeSet<String> = cfg.subjects.targets.iter().cloned().collect();
    wanted.extend(cfg.subjects.sources.iter().cloned());
    let recordings = build_cohort(&cfg.cohort, cfg.seed, Some(&wanted))?;
    let mut processed: BTreeMap<String, ProcessedSubject> = BTreeMap::new();
    for recording in &recordings {
        let subject = process_subject(
            recording,
            &cfg.windowing,
            &cfg.split,
            cfg.train_stride,
            cfg.test_stride,
        )?;
        processed.insert(subject.id.clone(), subject);
    }

    // --- Sources: train or load each source subject once, shared by all
    // targets. ------------------------------------------------------------
    let needs_sources = cfg.methods.iter().any(MethodName::requires_sources);
    let mut source_models: BTreeMap<String, MulticlassModel> = BTreeMap::new();
    let mut source_statuses = Vec::new();
    if needs_sources {
        for id in &cfg.subjects.sources {
            let subject = processed.get(id).expect("cohort filter included all sources");
            let cached = train_or_load_source(&cache_dir, subject, &cfg.grid)?;
            log::info!(
                "source {id}: C={}, gamma={}, cv={:.3} ({})",
                cached.grid.c,
                cached.grid.gamma,
                cached.grid.score,
                if cached.from_cache { "cached" } else { "trained" }
            );
            source_statuses.push(SourceStatus {
                id: id.clone(),
                from_cache: cached.from_cache,
                c: cached.grid.c,
                gamma: cached.grid.gamma,
                cv_score: cached.grid.score,
            });
            source_models.insert(id.clone(), cached.model);
        }
    }

    // --- Targets: independent jobs on the worker pool. --------------------
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = opts.jobs {
            builder = builder.num_threads(jobs.max(1));
        }
        builder.build().map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
    };
    let results: Vec<TargetResult> = pool.install(|| {
        use rayon::prelude::*;
        cfg.subjects
            .targets
            .par_iter()
            .map(|target| run_target(cfg, target, &processed, &source_models, &targets_dir))
            .collect()
    });

    // --- Aggregate over successful targets, in config order. -------------
    let ordered: Vec<&TargetResult> = cfg
        .subjects
        .targets
        .iter()
        .map(|id| results.iter().find(|r| &r.id == id).expect("one result per target"))
        .collect();
    let successes: Vec<(&str, &TargetSummary, &CurveOutput)> = ordered
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|(s, c)| (r.id.as_str(), s, c)))
        .collect();
    if !successes.is_empty() {
        let aggregate_dir = out_dir.join("aggregate");
        std::fs::create_dir_all(&aggregate_dir)?;
        let tables: Vec<CurveTable> = successes
            .iter()
            .map(|(id, _, out)| CurveTable {
                target: id.to_string(),
                steps: out.curve.steps.clone(),
                methods: out.curve.methods.clone(),
                scores: out.curve.scores.clone(),
            })
            .collect();
        let stats = build_curve_stats(&tables)?;
        write_curve_stats_csv(&aggregate_dir.join("learning_curve_stats.csv"), &stats)?;

        // Correlation over (target, method) settings at the largest step.
        // Sorted by target id so `report` regenerates identical bytes.
        let mut by_id = successes.clone();
        by_id.sort_by(|a, b| a.0.cmp(b.0));
        let mut names = Vec::new();
        let mut recognitions = Vec::new();
        for (id, summary, out) in &by_id {
            let last = *summary.steps.last().expect("validated nonempty");
            for method in &out.curve.methods {
                if let Some(cell) = out.cell(method, last) {
                    names.push(format!("{id}:{method}"));
                    recognitions.push(cell.confusion.per_class_recognition());
                }
            }
        }
        match build_correlation(&names, &recognitions) {
            Ok(Some(corr)) => {
                write_correlation_csv(&aggregate_dir.join("correlation.csv"), &names, &corr)?
            }
            Ok(None) => log::info!("skipping correlation: fewer than two settings"),
            Err(e) => log::warn!("skipping correlation: {e}"),
        }
    }

    let mut exit = 0;
    let mut target_statuses = Vec::new();
    for r in &ordered {
        match &r.outcome {
            Ok(_) => target_statuses.push(TargetStatus {
                id: r.id.clone(),
                status: "ok".into(),
                error: None,
            }),
            Err(err) => {
                let code = match err.kind.as_str() {
                    "config" => 2,
                    "numeric" => 4,
                    _ => 3,
                };
                exit = exit.max(code);
                target_statuses.push(TargetStatus {
                    id: r.id.clone(),
                    status: "failed".into(),
                    error: Some(err.clone()),
                });
            }
        }
    }

    let summary = RunSummary {
        config: cfg.clone(),
        master_seed: cfg.seed,
        sources: source_statuses,
        targets: target_statuses,
    };
    std::fs::write(out_dir.join("run_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunReport { out_dir, summary, exit_code: exit })
}

/// One target: hyperparameter search, learning curve, artifact files.
fn run_target(
    cfg: &ExperimentConfig,
    target: &str,
    processed: &BTreeMap<String, ProcessedSubject>,
    source_models: &BTreeMap<String, MulticlassModel>,
    targets_dir: &Path,
) -> TargetResult {
    let dir = targets_dir.join(target);
    let fail = |stage: &str, err: &Error| TargetError {
        subject: target.to_string(),
        stage: stage.to_string(),
        kind: error_kind(err).to_string(),
        message: err.to_string(),
    };
    let outcome: std::result::Result<(TargetSummary, CurveOutput), TargetError> = (|| {
        std::fs::create_dir_all(&dir).map_err(|e| fail("artifacts", &Error::Io(e)))?;
        let subject = processed.get(target).expect("cohort filter included all targets");

        // Source models exist only when some method consumes them.
        let source_ids: Vec<&str> = if cfg.methods.iter().any(MethodName::requires_sources) {
            cfg.subjects.sources_for(target)
        } else {
            Vec::new()
        };
        let sources: Vec<MulticlassModel> = source_ids
            .iter()
            .map(|id| source_models.get(*id).expect("sources prepared above").clone())
            .collect();

        // One search per subject; every method reuses the winning (C, gamma).
        let grid = grid_search(&subject.train, &cfg.grid.spec(), cfg.grid.folds)
            .map_err(|e| fail("grid_search", &e))?;
        log::info!(
            "target {target}: C={}, gamma={}, cv={:.3}",
            grid.c,
            grid.gamma,
            grid.score
        );

        let seeds = TargetSeeds {
            mkal_order: derive_seed(cfg.seed, "mkal-order", target),
            stack_split: derive_seed(cfg.seed, "stack-split", target),
        };

        // The stack's second layer gets its own search on confidence
        // features when feasible; otherwise it inherits the first layer's
        // hyperparameters.
        let wants_stack = cfg.methods.contains(&MethodName::Hl2l);
        let (second_grid, second_fallback) = if wants_stack {
            match second_layer_grid(cfg, subject, &sources, &grid, seeds.stack_split) {
                Ok(result) => (Some(GridChoice::from(&result)), false),
                Err(e) => {
                    log::info!("target {target}: second-layer search infeasible ({e}); using first-layer hyperparameters");
                    (None, true)
                }
            }
        } else {
            (None, false)
        };

        let methods: Vec<MethodConfig> = cfg
            .methods
            .iter()
            .map(|name| {
                method_config(name, cfg, &grid, second_grid.as_ref(), &seeds)
                    .map_err(|e| fail("method_config", &e))
            })
            .collect::<std::result::Result<_, _>>()?;

        let curve = run_learning_curve(
            &subject.train,
            &subject.test,
            &sources,
            &methods,
            &cfg.curve.steps,
            &cfg.curve.prefix,
        )
        .map_err(|e| fail("learning_curve", &e))?;

        let summary = TargetSummary {
            target: target.to_string(),
            sources: source_ids.iter().map(|s| s.to_string()).collect(),
            n_train_pool: subject.train.len(),
            n_test: subject.test.len(),
            class_ids: subject.train.class_ids().iter().map(|&c| display_label(c)).collect(),
            grid: GridChoice::from(&grid),
            second_layer_grid: second_grid,
            second_layer_fallback: second_fallback,
            methods: methods.clone(),
            steps: cfg.curve.steps.clone(),
            prefix: cfg.curve.prefix,
            seeds,
        };

        write_target_artifacts(cfg, &dir, &summary, &curve)
            .map_err(|e| fail("artifacts", &e))?;
        Ok((summary, curve))
    })();

    if let Err(err) = &outcome {
        // Best effort: the error report must not mask the original failure.
        if std::fs::create_dir_all(&dir).is_ok() {
            if let Ok(json) = serde_json::to_string_pretty(err) {
                let _ = std::fs::write(dir.join("error.json"), json);
            }
        }
        log::error!("target {target} failed during {}: {}", err.stage, err.message);
    }
    TargetResult { id: target.to_string(), outcome }
}

/// Grid search for the stack's second layer: split the training pool the
/// same way training will, fit a first layer, and search on the held-out
/// part's confidence vectors.
fn second_layer_grid(
    cfg: &ExperimentConfig,
    subject: &ProcessedSubject,
    sources: &[MulticlassModel],
    first: &GridSearchResult,
    split_seed: u64,
) -> Result<GridSearchResult> {
    let (part_a, part_b) = stratified_split(&subject.train, cfg.hl2l.fraction, split_seed)?;
    let kernel = KernelSpec::rbf(first.gamma)?;
    let first_layer = train_multiclass(&part_a, &kernel, first.c)?;
    let confidences = confidence_vectors(&first_layer, sources, part_b.vectors.view())?;
    let conf_fs = FeatureSet::new(confidences, part_b.labels.clone(), part_b.repetitions.clone())?;
    grid_search(&conf_fs, &cfg.grid.spec(), cfg.grid.folds)
}

/// Assembles the concrete method configuration for one target.
fn method_config(
    name: &MethodName,
    cfg: &ExperimentConfig,
    grid: &GridSearchResult,
    second: Option<&GridChoice>,
    seeds: &TargetSeeds,
) -> Result<MethodConfig> {
    Ok(match name {
        MethodName::NoTransfer => MethodConfig::NoTransfer { c: grid.c, gamma: grid.gamma },
        MethodName::PriorFeatures => MethodConfig::PriorFeatures { c: grid.c },
        MethodName::MultiAdapt => MethodConfig::MultiAdapt { c: grid.c, gamma: grid.gamma },
        MethodName::Mkal => MethodConfig::Mkal {
            config: MkalConfig {
                p: cfg.mkal.p,
                c: grid.c,
                gamma: grid.gamma,
                eta0: cfg.mkal.eta0,
                epochs: cfg.mkal.epochs,
                seed: seeds.mkal_order,
            },
        },
        MethodName::Hl2l => {
            let (c_second, gamma_second) = match second {
                Some(choice) => (choice.c, choice.gamma),
                None => (grid.c, grid.gamma),
            };
            MethodConfig::Hl2l {
                c_first: grid.c,
                gamma_first: grid.gamma,
                second_kernel: KernelSpec::rbf(gamma_second)?,
                c_second,
                fraction: cfg.hl2l.fraction,
                seed: seeds.stack_split,
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Artifact files
// ---------------------------------------------------------------------------

/// `learning_curve.csv`, per-point confusion and top-k histogram files,
/// method-pair overlap, and the target summary.
fn write_target_artifacts(
    cfg: &ExperimentConfig,
    dir: &Path,
    summary: &TargetSummary,
    output: &CurveOutput,
) -> Result<()> {
    let mut curve_csv = String::from("step,method,balanced_accuracy\n");
    for (si, step) in output.curve.steps.iter().enumerate() {
        for (mi, method) in output.curve.methods.iter().enumerate() {
            let score = output.curve.scores[[si, mi]];
            curve_csv.push_str(&format!("{step},{method},{score}\n"));
        }
    }
    std::fs::write(dir.join("learning_curve.csv"), curve_csv)?;

    for cell in &output.cells {
        let confusion_path = dir.join(format!("confusion_{}_{}.csv", cell.method, cell.step));
        std::fs::write(&confusion_path, confusion_csv(&cell.confusion))?;

        let k = cfg.histogram_top_k.min(cell.confusion.n_classes());
        let histogram = topk_histogram(&cell.confusion, k)?;
        let mut hist_csv = String::from("true_class,rank,predicted_class,fraction\n");
        for (col, entries) in histogram.entries().iter().enumerate() {
            let true_id = display_label(histogram.class_ids()[col]);
            for (rank, (pred, fraction)) in entries.iter().enumerate() {
                hist_csv.push_str(&format!(
                    "{true_id},{},{},{fraction}\n",
                    rank + 1,
                    display_label(*pred)
                ));
            }
        }
        let histogram_path = dir.join(format!("histogram_{}_{}.csv", cell.method, cell.step));
        std::fs::write(&histogram_path, hist_csv)?;
    }

    // Top-k overlap between every method pair at the largest step.
    let last_step = *output.curve.steps.last().expect("nonempty steps");
    let methods = &output.curve.methods;
    let mut overlap_csv = String::from("step,method_a,method_b,shared_classes,total_classes,percent\n");
    let mut overlap_rows = 0;
    for i in 0..methods.len() {
        for j in (i + 1)..methods.len() {
            let (Some(a), Some(b)) =
                (output.cell(&methods[i], last_step), output.cell(&methods[j], last_step))
            else {
                continue;
            };
            let k = cfg.histogram_top_k.min(a.confusion.n_classes());
            let threshold = cfg.overlap_threshold.min(k);
            let hist_a = topk_histogram(&a.confusion, k)?;
            let hist_b = topk_histogram(&b.confusion, k)?;
            let report = overlap_percentage(&hist_a, &hist_b, threshold)?;
            overlap_csv.push_str(&format!(
                "{last_step},{},{},{},{},{}\n",
                methods[i], methods[j], report.shared, report.total, report.percent
            ));
            overlap_rows += 1;
        }
    }
    if overlap_rows > 0 {
        std::fs::write(dir.join("overlap.csv"), overlap_csv)?;
    }

    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

/// Column-normalized confusion matrix in reporting labels: rows are
/// predicted classes, columns true classes.
fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let ids = cm.class_ids();
    let mut text = String::from("predicted");
    for id in ids {
        text.push_str(&format!(",true_{}", display_label(*id)));
    }
    text.push('\n');
    for (row, pred) in ids.iter().enumerate() {
        text.push_str(&display_label(*pred).to_string());
        for col in 0..ids.len() {
            text.push_str(&format!(",{}", cm.matrix()[[row, col]]));
        }
        text.push('\n');
    }
    text
}
