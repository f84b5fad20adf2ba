//! Cross-target aggregation: mean/best/worst learning curves and the
//! correlation matrix over per-class recognition vectors.
//!
//! The same builders serve the `run` command (from in-memory results) and
//! the `report` command (from artifact files), and both sort targets by id
//! before any floating-point reduction, so the two paths write identical
//! bytes.

use std::path::Path;

use myoadapt::evaluation::{class_correlation, CorrelationMatrix};
use myoadapt::{Error, Result};
use ndarray::Array2;

/// One target's learning-curve table.
#[derive(Debug, Clone)]
pub struct CurveTable {
    pub target: String,
    pub steps: Vec<usize>,
    pub methods: Vec<String>,
    /// One row per step, one column per method.
    pub scores: Array2<f64>,
}

/// One aggregated curve point.
#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub step: usize,
    pub method: String,
    pub mean: f64,
    pub best: f64,
    pub worst: f64,
}

/// Mean/best/worst across targets per (step, method). All tables must agree
/// on steps and methods; targets are sorted by id before summing.
pub fn build_curve_stats(tables: &[CurveTable]) -> Result<Vec<StatRow>> {
    if tables.is_empty() {
        return Err(Error::Data("no learning curves to aggregate".into()));
    }
    let mut sorted: Vec<&CurveTable> = tables.iter().collect();
    sorted.sort_by(|a, b| a.target.cmp(&b.target));
    let first = sorted[0];
    for t in &sorted[1..] {
        if t.steps != first.steps || t.methods != first.methods {
            return Err(Error::Data(format!(
                "targets {} and {} disagree on curve layout; cannot aggregate",
                first.target, t.target
            )));
        }
    }
    let mut rows = Vec::with_capacity(first.steps.len() * first.methods.len());
    for (si, step) in first.steps.iter().enumerate() {
        for (mi, method) in first.methods.iter().enumerate() {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            let mut worst = f64::INFINITY;
            for t in &sorted {
                let v = t.scores[[si, mi]];
                sum += v;
                best = best.max(v);
                worst = worst.min(v);
            }
            rows.push(StatRow {
                step: *step,
                method: method.clone(),
                mean: sum / sorted.len() as f64,
                best,
                worst,
            });
        }
    }
    Ok(rows)
}

pub fn write_curve_stats_csv(path: &Path, rows: &[StatRow]) -> Result<()> {
    let mut text = String::from("step,method,mean,best,worst\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.method, row.mean, row.best, row.worst
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Pairwise correlation between settings (max-normalized per-class
/// recognition vectors). `Ok(None)` when fewer than two settings exist.
pub fn build_correlation(
    names: &[String],
    recognitions: &[Vec<f64>],
) -> Result<Option<CorrelationMatrix>> {
    debug_assert_eq!(names.len(), recognitions.len());
    if recognitions.len() < 2 {
        return Ok(None);
    }
    class_correlation(recognitions).map(Some)
}

pub fn write_correlation_csv(
    path: &Path,
    names: &[String],
    corr: &CorrelationMatrix,
) -> Result<()> {
    let mut text = String::from("setting");
    for name in names {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for (i, name) in names.iter().enumerate() {
        text.push_str(name);
        for j in 0..names.len() {
            text.push_str(&format!(",{}", corr.matrix()[[i, j]]));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Artifact re-reading (the `report` command)
// ---------------------------------------------------------------------------

/// Parses one `learning_curve.csv` back into a table.
pub fn read_curve_table(path: &Path, target: &str) -> Result<CurveTable> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("step,method,balanced_accuracy") => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!(
                    "{}: expected learning-curve header, got {other:?}",
                    path.display()
                ),
            })
        }
    }
    let mut entries: Vec<(usize, String, f64)> = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(step), Some(method), Some(score)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Parse {
                line: idx + 2,
                msg: format!("{}: malformed row {line:?}", path.display()),
            });
        };
        let step: usize = step.parse().map_err(|e| Error::Parse {
            line: idx + 2,
            msg: format!("{}: bad step: {e}", path.display()),
        })?;
        let score: f64 = score.parse().map_err(|e| Error::Parse {
            line: idx + 2,
            msg: format!("{}: bad score: {e}", path.display()),
        })?;
        entries.push((step, method.to_string(), score));
    }
    let mut steps: Vec<usize> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for (step, method, _) in &entries {
        if !steps.contains(step) {
            steps.push(*step);
        }
        if !methods.iter().any(|m| m == method) {
            methods.push(method.clone());
        }
    }
    let mut scores = Array2::from_elem((steps.len(), methods.len()), f64::NAN);
    for (step, method, score) in &entries {
        let si = steps.iter().position(|s| s == step).expect("collected above");
        let mi = methods.iter().position(|m| m == method).expect("collected above");
        scores[[si, mi]] = *score;
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(format!(
            "{}: incomplete step x method table",
            path.display()
        )));
    }
    Ok(CurveTable { target: target.to_string(), steps, methods, scores })
}

/// Reads the diagonal (per-class recognition) of a written confusion matrix.
pub fn read_confusion_diagonal(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut diagonal = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let value = cells.get(i + 1).ok_or_else(|| Error::Parse {
            line: i + 2,
            msg: format!("{}: row shorter than its diagonal index", path.display()),
        })?;
        diagonal.push(value.parse().map_err(|e| Error::Parse {
            line: i + 2,
            msg: format!("{}: bad fraction: {e}", path.display()),
        })?);
    }
    if diagonal.is_empty() {
        return Err(Error::Data(format!("{}: empty confusion matrix", path.display())));
    }
    Ok(diagonal)
}

/// Re-aggregates artifact files under `out_dir` and returns a human-readable
/// summary. Writes the same `aggregate/` files as `run`.
pub fn report_from_artifacts(out_dir: &Path) -> Result<String> {
    let targets_dir = out_dir.join("targets");
    let mut ids: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(&targets_dir).map_err(|_| {
        Error::Data(format!("{} has no targets directory; run an experiment first", out_dir.display()))
    })? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();

    let mut tables = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    for id in &ids {
        let curve_path = targets_dir.join(id).join("learning_curve.csv");
        if curve_path.exists() {
            tables.push(read_curve_table(&curve_path, id)?);
        } else {
            failed.push(id.clone());
        }
    }
    if tables.is_empty() {
        return Err(Error::Data(format!(
            "no target under {} produced a learning curve",
            targets_dir.display()
        )));
    }
    tables.sort_by(|a, b| a.target.cmp(&b.target));

    let aggregate_dir = out_dir.join("aggregate");
    std::fs::create_dir_all(&aggregate_dir)?;
    let stats = build_curve_stats(&tables)?;
    write_curve_stats_csv(&aggregate_dir.join("learning_curve_stats.csv"), &stats)?;

    // Correlation from the largest-step confusion diagonals.
    let last_step = *tables[0].steps.last().expect("parsed tables are nonempty");
    let mut names = Vec::new();
    let mut recognitions = Vec::new();
    for table in &tables {
        for method in &table.methods {
            let path = targets_dir
                .join(&table.target)
                .join(format!("confusion_{method}_{last_step}.csv"));
            if path.exists() {
                names.push(format!("{}:{method}", table.target));
                recognitions.push(read_confusion_diagonal(&path)?);
            }
        }
    }
    let correlation_note = match build_correlation(&names, &recognitions) {
        Ok(Some(corr)) => {
            write_correlation_csv(&aggregate_dir.join("correlation.csv"), &names, &corr)?;
            format!("correlation over {} settings", names.len())
        }
        Ok(None) => "correlation skipped (fewer than two settings)".to_string(),
        Err(e) => format!("correlation skipped ({e})"),
    };

    // Human-readable digest.
    let methods = tables[0].methods.clone();
    let steps = tables[0].steps.clone();
    let mut text = format!(
        "{} target(s) aggregated{}\n",
        tables.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", {} failed ({})", failed.len(), failed.join(", "))
        }
    );
    text.push_str(&format!("steps: {steps:?}\n"));
    for method in &methods {
        let mut mean_line = format!("  {method:<15}");
        for step in &steps {
            let row = stats
                .iter()
                .find(|r| &r.step == step && &r.method == method)
                .expect("stats cover the full grid");
            mean_line.push_str(&format!(" {:.3}", row.mean));
        }
        text.push_str(&mean_line);
        text.push('\n');
    }
    let last = *steps.last().expect("nonempty");
    text.push_str(&format!("at {last} training vectors (mean [worst, best] over targets):\n"));
    for method in &methods {
        let row = stats
            .iter()
            .find(|r| r.step == last && &r.method == method)
            .expect("stats cover the full grid");
        text.push_str(&format!(
            "  {:<15} {:.3} [{:.3}, {:.3}]\n",
            method, row.mean, row.worst, row.best
        ));
    }
    text.push_str(&correlation_note);
    text.push('\n');
    Ok(text)
}
