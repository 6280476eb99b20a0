//! Plot-ready series and the summary table, derived from committed metrics.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use tracing::warn;

use super::artifacts::{self as art, Phase};
use super::RunError;
use crate::metrics::IterationMetrics;

pub const SERIES_DIR: &str = "series";
pub const SUMMARY: &str = "summary.csv";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// What [`emit_plot_series`] wrote.
#[derive(Debug, Clone)]
pub struct SeriesReport {
    /// Iterations found, baseline (0) included.
    pub iterations: Vec<u32>,
    pub files: Vec<PathBuf>,
    /// Iterations missing between the first and last one found.
    pub gaps: Vec<u32>,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> RunError + '_ {
    move |e| RunError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Reads every committed metrics file in iteration order (baseline first).
pub fn load_metrics(run_dir: &Path) -> Result<Vec<IterationMetrics>, RunError> {
    let mut found = Vec::new();
    let baseline = run_dir.join(Phase::Baseline.to_string()).join(art::METRICS);
    if baseline.is_file() {
        found.push(art::read_json::<IterationMetrics>(&baseline)?);
    }
    let entries = std::fs::read_dir(run_dir).map_err(|source| RunError::Io {
        path: run_dir.display().to_string(),
        source,
    })?;
    let mut iters: Vec<(u32, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let n: u32 = name.strip_prefix("iter_")?.parse().ok()?;
            let path = e.path().join(art::METRICS);
            path.is_file().then_some((n, path))
        })
        .collect();
    iters.sort();
    for (_, path) in iters {
        found.push(art::read_json::<IterationMetrics>(&path)?);
    }
    Ok(found)
}

/// Writes `series/*.csv` (one file per figure family, one row per iteration),
/// `summary.csv` and `metrics.jsonl` for the loop iterations.
pub fn emit_plot_series(run_dir: &Path) -> Result<SeriesReport, RunError> {
    let rows = load_metrics(run_dir)?;
    if rows.is_empty() {
        return Err(RunError::NotARun(run_dir.display().to_string()));
    }
    let iterations: Vec<u32> = rows.iter().map(|m| m.iteration).collect();
    let gaps: Vec<u32> = match (iterations.first(), iterations.last()) {
        (Some(&a), Some(&b)) => (a..=b).filter(|i| !iterations.contains(i)).collect(),
        _ => Vec::new(),
    };
    if !gaps.is_empty() {
        warn!(missing = ?gaps, "emitting partial series");
    }
    let dir = run_dir.join(SERIES_DIR);
    std::fs::create_dir_all(&dir).map_err(|source| RunError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();
    let mut emit = |name: &str, header: Vec<String>, body: Vec<Vec<String>>| -> Result<(), RunError> {
        let path = dir.join(name);
        write_csv(&path, &header, &body)?;
        files.push(path);
        Ok(())
    };

    emit(
        "accuracy.csv",
        strings(&["iteration", "acc_at_5", "acc_at_20", "em_mean", "em_llm_mean", "em_llm_false_mean", "acc5_p_value"]),
        rows.iter()
            .map(|m| {
                vec![
                    m.iteration.to_string(),
                    m.acc_at_5.to_string(),
                    m.acc_at_20.to_string(),
                    m.em_mean.to_string(),
                    opt(m.em_llm_mean),
                    opt(m.em_llm_false_mean),
                    opt(m.acc5_vs_baseline.map(|s| s.p_value)),
                ]
            })
            .collect(),
    )?;

    let gens: BTreeSet<&String> = rows.iter().flat_map(|m| m.em_by_generator.keys()).collect();
    let mut header = strings(&["iteration"]);
    header.extend(gens.iter().map(|g| g.to_string()));
    emit(
        "em_by_generator.csv",
        header,
        rows.iter()
            .map(|m| {
                let mut r = vec![m.iteration.to_string()];
                r.extend(gens.iter().map(|g| opt(m.em_by_generator.get(*g).copied())));
                r
            })
            .collect(),
    )?;

    let sources: BTreeSet<&String> = rows.iter().flat_map(|m| m.source_share_top50.keys()).collect();
    let mut header = strings(&["iteration", "human_top5", "dominance_p"]);
    header.extend(sources.iter().map(|s| format!("{s}_top50")));
    emit(
        "source_share.csv",
        header,
        rows.iter()
            .map(|m| {
                let mut r = vec![m.iteration.to_string(), m.human_share_top5.to_string(), m.dominance_p.to_string()];
                r.extend(sources.iter().map(|s| m.source_share_top50.get(*s).copied().unwrap_or(0.0).to_string()));
                r
            })
            .collect(),
    )?;

    emit(
        "self_bleu.csv",
        strings(&["iteration", "self_bleu_top5"]),
        rows.iter().map(|m| vec![m.iteration.to_string(), m.self_bleu_top5.to_string()]).collect(),
    )?;

    let mut header = strings(&["iteration"]);
    header.extend((0..6).map(|k| format!("em1_right{k}")));
    header.extend((0..6).map(|k| format!("em0_right{k}")));
    emit(
        "context_right.csv",
        header,
        rows.iter()
            .map(|m| {
                let mut r = vec![m.iteration.to_string()];
                r.extend(m.context_right_em1.iter().map(ToString::to_string));
                r.extend(m.context_right_em0.iter().map(ToString::to_string));
                r
            })
            .collect(),
    )?;

    emit(
        "transitions.csv",
        strings(&["iteration", "t01", "t10"]),
        rows.iter()
            .map(|m| vec![m.iteration.to_string(), m.transitions_01.to_string(), m.transitions_10.to_string()])
            .collect(),
    )?;

    emit(
        "first_right.csv",
        strings(&["iteration", "any_mean", "any_covered", "human_mean", "human_covered", "queries"]),
        rows.iter()
            .map(|m| {
                vec![
                    m.iteration.to_string(),
                    opt(m.first_right_any.mean),
                    m.first_right_any.covered.to_string(),
                    opt(m.first_right_human.mean),
                    m.first_right_human.covered.to_string(),
                    m.first_right_any.total.to_string(),
                ]
            })
            .collect(),
    )?;

    let summary_path = run_dir.join(SUMMARY);
    write_csv(
        &summary_path,
        &strings(&[
            "iteration", "corpus_size", "acc_at_5", "acc_at_20", "em_mean", "dominance_p",
            "self_bleu_top5", "human_share_top50", "t01", "t10", "failed_generations",
        ]),
        &rows
            .iter()
            .map(|m| {
                vec![
                    m.iteration.to_string(),
                    m.corpus_size.to_string(),
                    m.acc_at_5.to_string(),
                    m.acc_at_20.to_string(),
                    m.em_mean.to_string(),
                    m.dominance_p.to_string(),
                    m.self_bleu_top5.to_string(),
                    m.human_share_top50().to_string(),
                    m.transitions_01.to_string(),
                    m.transitions_10.to_string(),
                    m.failed_generations.to_string(),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    files.push(summary_path);

    let log_path = run_dir.join(METRICS_LOG);
    let loop_rows: Vec<&IterationMetrics> = rows.iter().filter(|m| m.iteration > 0).collect();
    art::write_jsonl(&log_path, &loop_rows)?;
    files.push(log_path);

    Ok(SeriesReport { iterations, files, gaps })
}
