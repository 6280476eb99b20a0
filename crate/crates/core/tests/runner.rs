use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use spiral_sim::corpus::{read_documents_jsonl, write_documents_jsonl};
use spiral_sim::dataset::{synthetic_dataset, write_queries, SynthParams};
use spiral_sim::filters::FilterFlag;
use spiral_sim::generation::GenerationRecord;
use spiral_sim::metrics::self_bleu;
use spiral_sim::runner::config::{GeneratorConfig, RetrievalKind, ScheduleEntry};
use spiral_sim::runner::{
    emit_plot_series, files, read_jsonl, run_baseline, run_experiment, ConfigError, ContextRecord,
    ExperimentConfig, FilterMode, Phase, RunError, RunOptions, SERIES_DIR, SUMMARY,
};

fn dataset(dir: &Path, documents: usize, queries: usize) -> (PathBuf, PathBuf) {
    let (docs, qs) = synthetic_dataset(SynthParams {
        documents,
        queries,
        vocabulary: 2000,
        seed: 3,
    });
    let corpus = dir.join("corpus.jsonl");
    write_documents_jsonl(&docs, BufWriter::new(File::create(&corpus).unwrap())).unwrap();
    let queries_path = dir.join("queries.jsonl");
    write_queries(BufWriter::new(File::create(&queries_path).unwrap()), &qs).unwrap();
    (corpus, queries_path)
}

fn small_config(dir: &Path, iterations: u32) -> ExperimentConfig {
    let (c, q) = dataset(dir, 300, 12);
    let mut cfg = ExperimentConfig::offline_defaults(c, q, dir.join("run"));
    cfg.sample_size = 12;
    cfg.iterations = iterations;
    cfg
}

fn problems(err: RunError) -> Vec<String> {
    match err {
        RunError::Config(ConfigError::Invalid(p)) => p,
        other => panic!("expected validation failure, got {other}"),
    }
}

#[test]
fn missing_query_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 1);
    cfg.queries_path = dir.path().join("nope.jsonl");
    let p = problems(run_baseline(cfg).unwrap_err());
    assert!(p.iter().any(|m| m.contains("query file not found") && m.contains("nope.jsonl")), "{p:?}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn dense_without_embedding_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 1);
    cfg.retrieval.kind = RetrievalKind::Dense;
    cfg.iterations = 0;
    let p = problems(run_baseline(cfg).unwrap_err());
    assert!(p.iter().any(|m| m.contains("embedding")), "{p:?}");
    // every problem is reported, not just the first
    assert!(p.iter().any(|m| m.contains("iterations")), "{p:?}");
}

#[test]
fn baseline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let (c, q) = dataset(dir.path(), 100, 10);
    let cfg = ExperimentConfig::offline_defaults(c.clone(), q, dir.path().join("run"));
    let art = run_baseline(cfg).unwrap();
    assert_eq!(art.iteration, 0);
    assert_eq!(art.metrics.queries, 10);
    assert!((0.0..=100.0).contains(&art.metrics.acc_at_5));
    assert!((0.0..=1.0).contains(&art.metrics.em_mean));
    assert_eq!(art.metrics.corpus_size, 100);
    assert_eq!(art.metrics.human_share_top5, 100.0);
    // the seed corpus on disk is untouched
    assert_eq!(read_documents_jsonl(&c).unwrap().len(), 100);
}

#[test]
fn schedule_is_recorded_and_corpus_grows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 4);
    cfg.generators = vec![
        GeneratorConfig::synthetic("weak", 0.3),
        GeneratorConfig::synthetic("strong", 0.9),
    ];
    cfg.schedule = vec![
        ScheduleEntry { from: 1, to: 2, generators: vec!["weak".into()] },
        ScheduleEntry { from: 3, to: 4, generators: vec!["strong".into(), "weak".into()] },
    ];
    let out = cfg.output_dir.clone();
    let summary = run_experiment(cfg, RunOptions::default()).unwrap();
    assert!(summary.completed);
    assert_eq!(summary.metrics.len(), 5);
    for m in &summary.metrics[1..] {
        let expected: Vec<&str> = if m.iteration <= 2 { vec!["weak"] } else { vec!["strong", "weak"] };
        let mut got: Vec<&str> = m.generators.iter().map(String::as_str).collect();
        got.sort();
        assert_eq!(got, expected, "iteration {}", m.iteration);
        let recs: Vec<GenerationRecord> = read_jsonl(&out.join(Phase::Iteration(m.iteration).to_string()).join(files::GENERATIONS)).unwrap();
        let names: BTreeSet<&str> = recs.iter().map(|r| r.generator.as_str()).collect();
        assert_eq!(names.into_iter().collect::<Vec<_>>(), expected);
    }
    for w in summary.metrics.windows(2) {
        assert!(w[1].corpus_version > w[0].corpus_version || w[0].iteration == 0);
    }
    // inject adds 12, iterations 1-2 add 12 each, iteration 3 adds 24
    let sizes: Vec<usize> = summary.metrics.iter().map(|m| m.corpus_size).collect();
    assert_eq!(sizes, [300, 312, 324, 336, 360]);
}

#[test]
fn diversity_mode_contexts_meet_postcondition() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 3);
    cfg.filter = FilterMode::Diversity;
    let out = cfg.output_dir.clone();
    let corpus_path = cfg.corpus_path.clone();
    run_experiment(cfg, RunOptions::default()).unwrap();
    let mut texts = std::collections::HashMap::new();
    for d in read_documents_jsonl(&corpus_path).unwrap() {
        texts.insert(d.doc_id, d.text);
    }
    for phase in [Phase::Inject, Phase::Iteration(1), Phase::Iteration(2), Phase::Iteration(3)] {
        if let Ok(added) = read_documents_jsonl(&out.join(phase.to_string()).join(files::ADDED_DOCS)) {
            for d in added {
                texts.insert(d.doc_id, d.text);
            }
        }
    }
    let mut checked = 0;
    for i in 1..=3 {
        let ctx: Vec<ContextRecord> = read_jsonl(&out.join(Phase::Iteration(i).to_string()).join(files::CONTEXTS)).unwrap();
        for c in ctx {
            let docs: Vec<&str> = c.doc_ids.iter().map(|id| texts[id].as_str()).collect();
            let score = self_bleu(&docs, 3).unwrap();
            let exhausted = c.flags.iter().any(|f| f == FilterFlag::Exhausted.as_str());
            assert!(score <= 0.4 + 1e-12 || exhausted, "{} at {i}: {score}", c.query_id);
            checked += 1;
        }
    }
    assert_eq!(checked, 36);
}

#[test]
fn series_single_iteration_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 1);
    let out = cfg.output_dir.clone();
    run_experiment(cfg, RunOptions::default()).unwrap();
    let report = emit_plot_series(&out).unwrap();
    assert_eq!(report.iterations, [0, 1]);
    assert!(report.gaps.is_empty());
    let share = std::fs::read_to_string(out.join(SERIES_DIR).join("source_share.csv")).unwrap();
    let lines: Vec<&str> = share.lines().collect();
    assert!(lines[0].starts_with("iteration,"));
    assert!(lines[0].contains("human"));
    assert_eq!(lines.len(), 3);
    assert!(out.join(SUMMARY).is_file());

    let bad = out.join(Phase::Iteration(1).to_string()).join(files::METRICS);
    std::fs::write(&bad, "{\"iteration\": 1,").unwrap();
    let err = emit_plot_series(&out).unwrap_err().to_string();
    assert!(err.contains("iter_01") && err.contains(files::METRICS), "{err}");
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_plot_series(dir.path()), Err(RunError::NotARun(_))));
}

#[test]
fn resume_with_other_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 2);
    run_experiment(cfg.clone(), RunOptions { stop_after: Some(Phase::Inject) }).unwrap();
    let mut other = cfg;
    other.seed += 1;
    assert!(matches!(
        run_experiment(other, RunOptions::default()),
        Err(RunError::ConfigMismatch { .. })
    ));
}
