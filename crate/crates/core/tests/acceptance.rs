//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing capture) before asserting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

mod common;

use common::oracle_self_bleu;
use spiral_sim::generation::MisinfoSpec;
use spiral_sim::corpus::{write_documents_jsonl, CorpusSnapshot, Document};
use spiral_sim::dataset::{synthetic_dataset, write_queries, SynthParams};
use spiral_sim::filters::{diversity_filter, FilterFlag, CONTEXT_WINDOW, DEFAULT_DIVERSITY_THRESHOLD};
use spiral_sim::metrics::{
    dominance_p, em_llm, self_bleu_tokens, AnswerKey, EvalRecord, IterationMetrics, Verdict,
};
use spiral_sim::postprocess::{clean_detailed, PhraseList};
use spiral_sim::retrieval::{tokenize, InvertedIndex, RankedList, ScoredDoc};
use spiral_sim::runner::{
    files, read_json, read_jsonl, resume, run_experiment, ExperimentConfig,
    Phase, RunOptions, METRICS_LOG, SERIES_DIR, SUMMARY,
};

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {n:>2} [{}] {name}: {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

struct Dataset {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    queries: PathBuf,
}

fn write_dataset(params: SynthParams) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let (docs, queries) = synthetic_dataset(params);
    let corpus = dir.path().join("corpus.jsonl");
    write_documents_jsonl(&docs, BufWriter::new(File::create(&corpus).unwrap())).unwrap();
    let qpath = dir.path().join("queries.jsonl");
    write_queries(BufWriter::new(File::create(&qpath).unwrap()), &queries).unwrap();
    Dataset {
        _dir: dir,
        corpus,
        queries: qpath,
    }
}

fn config(ds: &Dataset, out: &Path, queries: usize, iterations: u32, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::offline_defaults(ds.corpus.clone(), ds.queries.clone(), out.to_path_buf());
    cfg.sample_size = queries;
    cfg.iterations = iterations;
    cfg.seed = seed;
    cfg
}

// ---------------------------------------------------------------- 1

#[test]
fn c01_index_equivalence() {
    let start = Instant::now();
    let (docs, queries) = synthetic_dataset(SynthParams {
        documents: 1000,
        queries: 50,
        vocabulary: 3000,
        seed: 11,
    });
    let full = InvertedIndex::build(&docs).unwrap();
    let mut inc = InvertedIndex::new();
    for batch in docs.chunks(200) {
        inc.add(batch).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab: Vec<String> = docs.iter().flat_map(|d| tokenize(&d.text).tokens).collect();
    let mut mismatches = 0;
    let mut checked = 0;
    for q in &queries {
        // half the queries are dataset questions, half random term bags
        let text = if rng.gen_bool(0.5) {
            q.question.clone()
        } else {
            (0..rng.gen_range(1..6)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect::<Vec<_>>().join(" ")
        };
        let a = full.search(&text, 100).unwrap();
        let b = inc.search(&text, 100).unwrap();
        let same = a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| x.doc_id == y.doc_id && x.score.to_bits() == y.score.to_bits());
        if !same {
            mismatches += 1;
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    report(
        1,
        "index equivalence",
        mismatches == 0 && checked == 50 && elapsed < Duration::from_secs(10),
        &format!("{checked} queries, {mismatches} mismatching top-100 lists, {:.2}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_bm25_value() {
    let docs = vec![
        Document::human("d1", "apple banana").unwrap(),
        Document::human("d2", "banana cherry").unwrap(),
    ];
    let index = InvertedIndex::build(&docs).unwrap();
    let hits = index.search("apple", 2).unwrap();
    // N=2, df=1: idf = ln(1 + 1.5/1.5) = ln 2; tf=1, dl=avgdl: 1/(1+1.2)
    let expected = 2f64.ln() / 2.2;
    let ok = hits.len() == 1 && hits[0].doc_id == "d1" && (hits[0].score - expected).abs() < 1e-9;
    report(2, "bm25 value", ok, &format!("{hits:?} vs expected {expected:.10}"));
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_self_bleu_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n_docs = rng.gen_range(2..=5);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| (0..rng.gen_range(1..=12)).map(|_| words[rng.gen_range(0..words.len())].clone()).collect())
            .collect();
        let got = self_bleu_tokens(&docs, 3).unwrap();
        worst = worst.max((got - oracle_self_bleu(&docs)).abs());
    }
    let mut identical_ok = true;
    let mut disjoint_ok = true;
    for k in 0..20 {
        let doc: Vec<String> = (0..rng.gen_range(3..15)).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
        identical_ok &= self_bleu_tokens(&vec![doc.clone(); 2 + k % 4], 3).unwrap() == 1.0;
        let disjoint: Vec<Vec<String>> = (0..2 + k % 4)
            .map(|d| (0..rng.gen_range(3..10)).map(|i| format!("w{d}x{i}")).collect())
            .collect();
        disjoint_ok &= self_bleu_tokens(&disjoint, 3).unwrap() == 0.0;
    }
    report(
        3,
        "self-bleu oracle",
        worst < 1e-9 && identical_ok && disjoint_ok,
        &format!("max |module - oracle| = {worst:e}, identical = 1.0: {identical_ok}, disjoint = 0.0: {disjoint_ok}"),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn c04_dominance_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let human: Vec<Document> = (0..60).map(|i| Document::human(format!("h{i}"), format!("text {i}")).unwrap()).collect();
    let base = CorpusSnapshot::from_seed(human).unwrap();
    let generated: Vec<Document> = (0..60)
        .map(|i| Document::generated(if i % 2 == 0 { "ga" } else { "gb" }, 1, &format!("q{i}"), format!("gen {i}")).unwrap())
        .collect();
    let corpus = base.add_documents(generated).unwrap();
    let ids: Vec<String> = corpus.iter().map(|d| d.doc_id.clone()).collect();
    let mut mismatches = 0;
    for trial in 0..1000 {
        let lists: Vec<RankedList> = (0..rng.gen_range(1..=20))
            .map(|q| {
                let len = rng.gen_range(0..=12);
                let picked: Vec<ScoredDoc> = ids
                    .choose_multiple(&mut rng, len)
                    .enumerate()
                    .map(|(i, id)| ScoredDoc { doc_id: id.clone(), score: -(i as f64) })
                    .collect();
                RankedList::new(format!("t{trial}q{q}"), 1, picked)
            })
            .collect();
        let (mut llm, mut all) = (0usize, 0usize);
        for l in &lists {
            for e in l.entries.iter().take(5) {
                all += 1;
                if e.doc_id.starts_with('g') {
                    llm += 1;
                }
            }
        }
        let expected = if all == 0 { 0.0 } else { llm as f64 / all as f64 * 100.0 };
        if dominance_p(&lists, &corpus, 5).unwrap() != expected {
            mismatches += 1;
        }
    }
    report(4, "dominance recount", mismatches == 0, &format!("1000 randomized list sets, {mismatches} mismatches"));
}

// ---------------------------------------------------------------- 5

#[test]
fn c05_diversity_filter_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = Vec::new();
    let (mut exhausted, mut met) = (0, 0);
    for pool in 0..500 {
        let size = rng.gen_range(CONTEXT_WINDOW..=25);
        let vocab = rng.gen_range(3..=30);
        let docs: Vec<Document> = (0..size)
            .map(|i| {
                let text: Vec<String> = (0..rng.gen_range(4..=20)).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect();
                Document::human(format!("p{pool}d{i:02}"), text.join(" ")).unwrap()
            })
            .collect();
        let ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
        let corpus = CorpusSnapshot::from_seed(docs).unwrap();
        let list = RankedList::new(
            "q",
            1,
            ids.iter().enumerate().map(|(i, id)| ScoredDoc { doc_id: id.clone(), score: -(i as f64) }).collect(),
        );
        let sel = diversity_filter(&list, &corpus, DEFAULT_DIVERSITY_THRESHOLD, CONTEXT_WINDOW).unwrap();
        let texts: Vec<Vec<String>> = sel.entries.iter().map(|e| tokenize(&corpus.get(&e.doc_id).unwrap().text).tokens).collect();
        let score = self_bleu_tokens(&texts, 3).unwrap();
        let flagged = sel.has_flag(FilterFlag::Exhausted);
        if flagged {
            exhausted += 1;
        } else {
            met += 1;
        }
        if !(score <= DEFAULT_DIVERSITY_THRESHOLD || flagged) || sel.removals > size - CONTEXT_WINDOW || sel.entries.len() != CONTEXT_WINDOW {
            violations.push(pool);
        }
    }
    report(
        5,
        "diversity filter contract",
        violations.is_empty(),
        &format!("500 pools ({met} met threshold, {exhausted} exhausted), violations {violations:?}"),
    );
}

// ---------------------------------------------------------------- 6-10 share one run

struct SpiralRun {
    _ds: Dataset,
    _out: tempfile::TempDir,
    dir: PathBuf,
    elapsed: Duration,
    metrics: Vec<IterationMetrics>,
}

fn spiral_run() -> &'static SpiralRun {
    static RUN: OnceLock<SpiralRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ds = write_dataset(SynthParams {
            documents: 5000,
            queries: 200,
            vocabulary: 5000,
            seed: 1,
        });
        let out = tempfile::tempdir().unwrap();
        let dir = out.path().join("run");
        let mut cfg = config(&ds, &dir, 200, 10, 1);
        for g in &mut cfg.generators {
            g.accuracy = Some(0.8);
            g.echo_query = true;
        }
        let start = Instant::now();
        let summary = run_experiment(cfg, RunOptions::default()).expect("offline run");
        let elapsed = start.elapsed();
        SpiralRun {
            _ds: ds,
            _out: out,
            dir,
            elapsed,
            metrics: summary.metrics,
        }
    })
}

fn by_iteration(run: &SpiralRun) -> BTreeMap<u32, &IterationMetrics> {
    run.metrics.iter().map(|m| (m.iteration, m)).collect()
}

#[test]
fn c06_spiral_trend() {
    let run = spiral_run();
    let m = by_iteration(run);
    let shares: Vec<f64> = (1..=10).map(|i| m[&i].human_share_top5).collect();
    let mut monotone = true;
    for i in 2..10u32 {
        if m[&(i + 1)].human_share_top5 > m[&i].human_share_top5 + 2.0 {
            monotone = false;
        }
    }
    let last = m[&10].human_share_top5;
    report(
        6,
        "spiral trend",
        last < 10.0 && monotone && run.elapsed < Duration::from_secs(300) && m.len() == 11,
        &format!(
            "human top-5 share by iteration {:?}; final {last:.1}% ; monotone after 2: {monotone}; {:.1}s",
            shares.iter().map(|s| (s * 10.0).round() / 10.0).collect::<Vec<_>>(),
            run.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn c07_homogenization_trend() {
    let run = spiral_run();
    let m = by_iteration(run);
    let bleu: Vec<f64> = (1..=10).map(|i| m[&i].self_bleu_top5).collect();
    let rises = m[&10].self_bleu_top5 > m[&1].self_bleu_top5;
    let worst_drop = (3..10u32)
        .map(|i| m[&i].self_bleu_top5 - m[&(i + 1)].self_bleu_top5)
        .fold(f64::NEG_INFINITY, f64::max);
    report(
        7,
        "homogenization trend",
        rises && worst_drop <= 0.05,
        &format!(
            "self-bleu by iteration {:?}; largest drop after 3: {worst_drop:.4}",
            bleu.iter().map(|b| (b * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c08_em_stability() {
    let run = spiral_run();
    let m = by_iteration(run);
    let ems: Vec<f64> = (2..=10).map(|i| m[&i].em_mean * 100.0).collect();
    let spread = ems.iter().cloned().fold(f64::MIN, f64::max) - ems.iter().cloned().fold(f64::MAX, f64::min);
    report(
        8,
        "em stability",
        spread <= 5.0,
        &format!("EM% iterations 2-10 {ems:?}, spread {spread:.2} points"),
    );
}

fn evals_of(dir: &Path, phase: Phase) -> Vec<EvalRecord> {
    read_jsonl(&dir.join(phase.to_string()).join(files::EVAL)).unwrap()
}

#[test]
fn c09_transition_identity() {
    let run = spiral_run();
    let m = by_iteration(run);
    let mut bad = Vec::new();
    let mut phases = vec![Phase::Baseline];
    phases.extend((1..=10).map(Phase::Iteration));
    let mut total_moves = 0;
    for pair in phases.windows(2) {
        let next_it = match pair[1] {
            Phase::Iteration(i) => i,
            _ => unreachable!(),
        };
        let sum = |v: &[EvalRecord]| v.iter().map(|e| e.em as i64).sum::<i64>();
        let delta = sum(&evals_of(&run.dir, pair[1])) - sum(&evals_of(&run.dir, pair[0]));
        let t = m[&next_it];
        total_moves += t.transitions_01 + t.transitions_10;
        if delta != t.transitions_01 as i64 - t.transitions_10 as i64 {
            bad.push(next_it);
        }
    }
    report(
        9,
        "transition identity",
        bad.is_empty(),
        &format!("10 consecutive pairs, {total_moves} transitions in total, mismatching pairs {bad:?}"),
    );
}

#[test]
fn c10_rank_dominance() {
    let run = spiral_run();
    let mut compared = 0;
    let mut violations = 0;
    let mut phases = vec![Phase::Baseline];
    phases.extend((1..=10).map(Phase::Iteration));
    for phase in phases {
        for e in evals_of(&run.dir, phase) {
            if let (Some(any), Some(human)) = (e.first_right_any, e.first_right_human) {
                compared += 1;
                if any > human {
                    violations += 1;
                }
            }
        }
    }
    report(
        10,
        "rank dominance",
        violations == 0 && compared > 0,
        &format!("{compared} records with both ranks, {violations} violations"),
    );
}

// ---------------------------------------------------------------- 11

#[test]
fn c11_misinfo_contract() {
    let ds = write_dataset(SynthParams {
        documents: 1000,
        queries: 40,
        vocabulary: 3000,
        seed: 7,
    });
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("run");
    let mut cfg = config(&ds, &dir, 40, 2, 7);
    cfg.misinfo = true;
    run_experiment(cfg, RunOptions::default()).unwrap();

    let inject = dir.join(Phase::Inject.to_string());
    let specs: Vec<MisinfoSpec> = read_jsonl(&inject.join(files::MISINFO)).unwrap();
    let specs: BTreeMap<String, MisinfoSpec> = specs.into_iter().map(|s| (s.query_id.clone(), s)).collect();
    let queries: Vec<spiral_sim::dataset::Query> = read_jsonl(&dir.join(files::QUERIES)).unwrap();
    let golds: BTreeMap<String, Vec<String>> = queries.into_iter().map(|q| (q.query_id, q.answers)).collect();
    let added: Vec<Document> = read_jsonl(&inject.join(files::ADDED_DOCS)).unwrap();
    let mut passage_violations = 0;
    for d in &added {
        let qid = d.origin_query_id.as_ref().unwrap();
        let spec = &specs[qid];
        let has_false = d.text.contains(&spec.chosen_false_answer)
            && AnswerKey::new(&[spec.chosen_false_answer.as_str()]).matches(&d.text);
        let has_gold = AnswerKey::new(&golds[qid]).matches(&d.text);
        if !has_false || has_gold || spec.false_answers.len() != 5 || !spec.false_answers.contains(&spec.chosen_false_answer) {
            passage_violations += 1;
        }
    }

    let table = [(1, Verdict::Yes, 1), (1, Verdict::No, 0), (0, Verdict::Yes, 0), (0, Verdict::No, 0)];
    let table_ok = table.iter().all(|&(c, v, want)| em_llm(c, v) == want);
    let mut records = 0;
    let mut conj_violations = 0;
    for it in 1..=2 {
        for e in evals_of(&dir, Phase::Iteration(it)) {
            records += 1;
            let ok_gold = e.em_llm == e.verdict.map(|v| em_llm(e.em, v));
            let ok_false = match (e.em_false, e.verdict_false) {
                (Some(c), Some(v)) => e.em_llm_false == Some(em_llm(c, v)),
                _ => false,
            };
            if !ok_gold || !ok_false || e.em_llm.is_none() {
                conj_violations += 1;
            }
        }
    }
    report(
        11,
        "misinformation contract",
        !added.is_empty() && passage_violations == 0 && table_ok && conj_violations == 0 && records > 0,
        &format!(
            "{} injected passages, {passage_violations} violations; truth table ok: {table_ok}; {records} graded records, {conj_violations} conjunction mismatches",
            added.len()
        ),
    );
}

// ---------------------------------------------------------------- 12

fn metric_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut add = |rel: String| {
        let p = dir.join(&rel);
        out.insert(rel, std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display())));
    };
    add(METRICS_LOG.to_string());
    add(SUMMARY.to_string());
    add(format!("{}/{}", Phase::Baseline, files::METRICS));
    for entry in std::fs::read_dir(dir.join(SERIES_DIR)).unwrap() {
        add(format!("{SERIES_DIR}/{}", entry.unwrap().file_name().to_string_lossy()));
    }
    for i in 1.. {
        let rel = format!("{}/{}", Phase::Iteration(i), files::METRICS);
        if !dir.join(&rel).is_file() {
            break;
        }
        add(rel);
        add(format!("{}/{}", Phase::Iteration(i), files::GENERATIONS));
    }
    out
}

#[test]
fn c12_determinism_and_resume() {
    let ds = write_dataset(SynthParams {
        documents: 1500,
        queries: 60,
        vocabulary: 3000,
        seed: 12,
    });
    let out = tempfile::tempdir().unwrap();
    let cfg = |name: &str, threads: usize| {
        let mut c = config(&ds, &out.path().join(name), 60, 5, 12);
        c.threads = threads;
        c
    };
    run_experiment(cfg("a", 0), RunOptions::default()).unwrap();
    run_experiment(cfg("b", 1), RunOptions::default()).unwrap();
    let a = metric_files(&out.path().join("a"));
    let b = metric_files(&out.path().join("b"));
    let identical = a == b;

    // kill after iteration 2 commits, leave a half-written iteration 3 behind
    let partial = run_experiment(cfg("c", 3), RunOptions { stop_after: Some(Phase::Iteration(2)) }).unwrap();
    let junk = out.path().join("c").join(Phase::Iteration(3).to_string());
    std::fs::create_dir_all(&junk).unwrap();
    std::fs::write(junk.join(files::EVAL), "{ truncated").unwrap();
    let resumed = resume(&out.path().join("c"), RunOptions::default()).unwrap();
    let c = metric_files(&out.path().join("c"));
    let resume_ok = !partial.completed
        && resumed.completed
        && resumed.replayed == vec![Phase::Baseline, Phase::Inject, Phase::Iteration(1), Phase::Iteration(2)]
        && c == a;
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k) || c.get(*k) != a.get(*k)).collect();
    report(
        12,
        "determinism and resume",
        identical && resume_ok,
        &format!("{} files compared; repeat run identical: {identical}; resumed run identical: {resume_ok}; differing {differing:?}", a.len()),
    );
    let _: IterationMetrics = read_json(&out.path().join("a").join("iter_05").join(files::METRICS)).unwrap();
}

// ---------------------------------------------------------------- 13

#[test]
fn c13_postprocessor_fuzz() {
    let list = PhraseList::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let words = ["paris", "is", "the", "capital", "river", "an", "ai", "model", "of", "knowledge", "1889", "tower"];
    let seps = [" ", "  ", "\n", " , ", ". "];
    let mut missed = 0;
    let mut not_idempotent = 0;
    let mut reverted = 0;
    for _ in 0..10_000 {
        let mut parts: Vec<String> = (0..rng.gen_range(1..25)).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect();
        for _ in 0..rng.gen_range(0..5) {
            let mut phrase = list.phrases()[rng.gen_range(0..list.len())].clone();
            match rng.gen_range(0..3) {
                0 => phrase = phrase.to_uppercase(),
                1 => phrase = phrase.to_lowercase(),
                _ => {}
            }
            let at = rng.gen_range(0..=parts.len());
            parts.insert(at, phrase);
        }
        let mut text = String::new();
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                text.push_str(seps[rng.gen_range(0..seps.len())]);
            }
            text.push_str(p);
        }
        let c = clean_detailed(&text, &list);
        if c.reverted {
            reverted += 1;
        }
        if list.is_match(&c.text) && !c.reverted {
            missed += 1;
        }
        if clean_detailed(&c.text, &list).text != c.text {
            not_idempotent += 1;
        }
    }
    report(
        13,
        "postprocessor fuzz",
        missed == 0 && not_idempotent == 0 && reverted == 0,
        &format!("10000 cases: {missed} with residual phrases, {not_idempotent} not idempotent, {reverted} reverted"),
    );
}

