use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::artifacts::{self as art, Manifest, Phase, RunLayout};
use super::config::{
    DetectorKind, EmbeddingKind, ExperimentConfig, FilterMode, GeneratorConfig, GeneratorKind,
    RerankKind, RetrievalKind,
};
use super::RunError;
use crate::corpus::{ingest_seed_corpus, CorpusFormat, CorpusSnapshot, Document};
use crate::dataset::{load_queries, sample_queries, write_queries, Query};
use crate::filters::{diversity_filter, source_filter, ContextSelection, DetectorBackend, CONTEXT_WINDOW};
use crate::generation::{
    generate_false_answers, generate_mis_passage, judge_support, GenerationRecord,
    GenerationRequest, Generator, MisinfoSpec, RemoteChat, SyntheticGenerator, Task,
    CONTEXT_SLOTS,
};
use crate::metrics::{
    acc_at_k, context_right_num, dominance_p, em_llm, first_right_ranks, hits_at_k, pearson,
    self_bleu, significance, source_share, transitions, AnswerKey, CoveredMean, EvalRecord,
    IterationMetrics, Verdict, BOOTSTRAP_RESAMPLES,
};
use crate::postprocess::{clean_detailed, PhraseList};
use crate::rerank::{rerank, FailurePolicy, RerankBackend, RerankError};
use crate::retrieval::{
    Bm25Params, DenseRetriever, Embedder, HashedEmbedder, HttpEmbedder, InvertedIndex,
    RankedList, Retriever,
};
use crate::seed::derive_seed;

const SELF_BLEU_ORDER: usize = 3;

/// The contexts handed to the generators for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub query_id: String,
    pub iteration: u32,
    pub doc_ids: Vec<String>,
    /// Ranks in the retrieved list, aligned with `doc_ids`.
    pub ranks: Vec<usize>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub removals: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_bleu: Option<f64>,
    /// Empty slots filled to reach five contexts.
    #[serde(default)]
    pub padded: usize,
}

/// A logged, non-fatal failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub phase: String,
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub stage: String,
    pub message: String,
}

/// Outputs of the baseline (iteration 0) or of one loop iteration.
#[derive(Debug, Clone)]
pub struct IterationArtifacts {
    pub iteration: u32,
    pub ranked: Vec<RankedList>,
    pub contexts: Vec<ContextRecord>,
    pub generations: Vec<GenerationRecord>,
    pub evals: Vec<EvalRecord>,
    pub events: Vec<Event>,
    pub metrics: IterationMetrics,
    /// Corpus version after this phase's commit.
    pub corpus_version: u64,
    pub added_docs: usize,
}

/// Result of the zero-shot (or misinformation) injection.
#[derive(Debug, Clone)]
pub struct InjectionArtifacts {
    pub generations: Vec<GenerationRecord>,
    pub misinfo: Vec<MisinfoSpec>,
    pub events: Vec<Event>,
    pub added_docs: usize,
    pub corpus_version: u64,
}

struct Reranker {
    backend: RerankBackend,
    depth: usize,
    policy: FailurePolicy,
}

#[derive(Default)]
struct QueryOutcome {
    ranked: Option<RankedList>,
    context: Option<ContextRecord>,
    records: Vec<GenerationRecord>,
    evals: Vec<EvalRecord>,
    events: Vec<Event>,
    failed_generations: usize,
    failed: bool,
    abort: Option<RerankError>,
}

fn build_generator(cfg: &GeneratorConfig, seed: u64) -> Result<Arc<dyn Generator>, RunError> {
    Ok(match cfg.kind {
        GeneratorKind::Synthetic => Arc::new(
            SyntheticGenerator::new(cfg.name.clone(), cfg.accuracy.unwrap_or(0.0), seed)
                .with_marker(cfg.marker.clone())
                .with_echo_query(cfg.echo_query)
                .with_context_uptake(cfg.context_uptake)
                .with_boilerplate_rate(cfg.boilerplate_rate),
        ),
        GeneratorKind::RemoteChat => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| RunError::Setup(format!("generator {:?} has no endpoint", cfg.name)))?;
            Arc::new(RemoteChat::new(cfg.name.clone(), endpoint)?.with_temperature(cfg.temperature))
        }
    })
}

/// One experiment: configuration, live corpus and index, and carried state.
pub struct Experiment {
    config: ExperimentConfig,
    config_hash: String,
    queries: Vec<Query>,
    keys: BTreeMap<String, AnswerKey>,
    corpus: CorpusSnapshot,
    retriever: Box<dyn Retriever>,
    reranker: Option<Reranker>,
    detector: DetectorBackend,
    generators: BTreeMap<String, Arc<dyn Generator>>,
    judge: Arc<dyn Generator>,
    misinfo_writer: Arc<dyn Generator>,
    phrases: PhraseList,
    pool: rayon::ThreadPool,
    layout: RunLayout,
    prev_evals: Option<Vec<EvalRecord>>,
    baseline_hits: Option<BTreeMap<String, u8>>,
    misinfo: BTreeMap<String, MisinfoSpec>,
}

impl Experiment {
    /// Validates the configuration, loads and samples the queries, ingests the
    /// seed corpus and indexes it.
    pub fn new(mut config: ExperimentConfig) -> Result<Self, RunError> {
        config.validate()?;
        // absolute inputs keep the hash stable when a run is resumed from its own copy
        for p in [&mut config.corpus_path, &mut config.queries_path] {
            *p = std::fs::canonicalize(&*p).map_err(|source| RunError::Io {
                path: p.display().to_string(),
                source,
            })?;
        }
        let seed = config.seed;
        let queries = sample_queries(load_queries(&config.queries_path)?, config.sample_size, seed);
        let keys = queries
            .iter()
            .map(|q| (q.query_id.clone(), q.answer_key()))
            .collect();
        let corpus = ingest_seed_corpus(&config.corpus_path, CorpusFormat::from_path(&config.corpus_path))?;

        let mut retriever: Box<dyn Retriever> = match config.retrieval.kind {
            RetrievalKind::Bm25 => Box::new(InvertedIndex::with_params(Bm25Params {
                k1: config.retrieval.k1,
                b: config.retrieval.b,
            })),
            RetrievalKind::Dense => {
                let e = config
                    .retrieval
                    .embedding
                    .as_ref()
                    .ok_or_else(|| RunError::Setup("dense retrieval without embedding".into()))?;
                let embedder: Arc<dyn Embedder> = match e.kind {
                    EmbeddingKind::Hashed => Arc::new(HashedEmbedder::new(seed)),
                    EmbeddingKind::Remote => Arc::new(HttpEmbedder::new(
                        e.endpoint.clone().ok_or_else(|| RunError::Setup("embedding endpoint missing".into()))?,
                        e.batch_size,
                    )?),
                };
                Box::new(DenseRetriever::new(embedder))
            }
        };
        let docs: Vec<Document> = corpus.iter().cloned().collect();
        retriever.index_documents(&docs)?;

        let reranker = match &config.rerank {
            None => None,
            Some(r) => Some(Reranker {
                backend: match r.kind {
                    RerankKind::Lexical => RerankBackend::LexicalOverlap,
                    RerankKind::Remote => RerankBackend::remote(
                        r.endpoint.clone().ok_or_else(|| RunError::Setup("rerank endpoint missing".into()))?,
                        r.batch_size,
                    )?,
                },
                depth: r.depth,
                policy: r.on_failure,
            }),
        };
        let detector = match config.detector.kind {
            DetectorKind::Marker => DetectorBackend::marker(config.detector.marker.clone()),
            DetectorKind::Remote => DetectorBackend::remote(
                config
                    .detector
                    .endpoint
                    .clone()
                    .ok_or_else(|| RunError::Setup("detector endpoint missing".into()))?,
                config.detector.batch_size,
            )?,
        };
        let mut generators = BTreeMap::new();
        for g in &config.generators {
            generators.insert(g.name.clone(), build_generator(g, seed)?);
        }
        let judge = build_generator(config.judge.as_ref().unwrap_or(&config.generators[0]), seed)?;
        let misinfo_writer =
            build_generator(config.misinfo_generator.as_ref().unwrap_or(&config.generators[0]), seed)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| RunError::Setup(e.to_string()))?;

        Ok(Experiment {
            config_hash: config.config_hash(),
            layout: RunLayout::new(&config.output_dir),
            config,
            queries,
            keys,
            corpus,
            retriever,
            reranker,
            detector,
            generators,
            judge,
            misinfo_writer,
            phrases: PhraseList::bundled(),
            pool,
            prev_evals: None,
            baseline_hits: None,
            misinfo: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn corpus(&self) -> &CorpusSnapshot {
        &self.corpus
    }

    pub fn layout(&self) -> &RunLayout {
        &self.layout
    }

    pub fn misinfo_specs(&self) -> &BTreeMap<String, MisinfoSpec> {
        &self.misinfo
    }

    /// Replaces the phrase list used for cleaning.
    pub fn set_phrases(&mut self, phrases: PhraseList) {
        self.phrases = phrases;
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            config_hash: self.config_hash.clone(),
            seed: self.config.seed,
            iterations: self.config.iterations,
            queries: self.queries.len(),
            generators: self.config.generators.iter().map(|g| g.name.clone()).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Creates the run directory, or checks an existing one belongs to this configuration.
    pub fn open_run_dir(&self) -> Result<(), RunError> {
        let root = self.layout.root();
        let manifest_path = root.join(art::MANIFEST);
        if manifest_path.is_file() {
            let found: Manifest = art::read_json(&manifest_path)?;
            if found.config_hash != self.config_hash {
                return Err(RunError::ConfigMismatch {
                    expected: self.config_hash.clone(),
                    found: found.config_hash,
                });
            }
            return Ok(());
        }
        std::fs::create_dir_all(root).map_err(|source| RunError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let cfg_path = root.join(art::CONFIG_COPY);
        let mut stored = self.config.clone();
        stored.output_dir = ".".into();
        let toml = stored.to_toml().map_err(|e| RunError::Setup(e.to_string()))?;
        std::fs::write(&cfg_path, toml).map_err(|source| RunError::Io {
            path: cfg_path.display().to_string(),
            source,
        })?;
        let q_path = root.join(art::QUERIES);
        let file = std::fs::File::create(&q_path).map_err(|source| RunError::Io {
            path: q_path.display().to_string(),
            source,
        })?;
        write_queries(std::io::BufWriter::new(file), &self.queries).map_err(|source| RunError::Io {
            path: q_path.display().to_string(),
            source,
        })?;
        art::write_json(&manifest_path, &self.manifest())
    }

    fn retrieve(&self, query: &Query, iteration: u32, phase: &str) -> Result<(RankedList, Vec<Event>), QueryOutcome> {
        let mut events = Vec::new();
        let fail = |stage: &str, message: String| {
            let mut o = QueryOutcome {
                failed: true,
                ..Default::default()
            };
            o.events.push(Event {
                phase: phase.to_string(),
                query_id: query.query_id.clone(),
                generator: None,
                stage: stage.to_string(),
                message,
            });
            o
        };
        let scored = self
            .retriever
            .search(&query.question, self.config.retrieval_depth)
            .map_err(|e| fail("retrieval", e.to_string()))?;
        let mut ranked = RankedList::new(query.query_id.clone(), iteration, scored);
        if let Some(r) = &self.reranker {
            match rerank(&r.backend, &query.question, &ranked, r.depth, &self.corpus) {
                Ok(list) => ranked = list,
                Err(e) => match r.policy {
                    FailurePolicy::AbortIteration => {
                        let mut o = fail("rerank", e.to_string());
                        o.abort = Some(e);
                        return Err(o);
                    }
                    FailurePolicy::PassThrough => {
                        warn!(query = %query.query_id, error = %e, "reranker failed, keeping retrieval order");
                        events.push(Event {
                            phase: phase.to_string(),
                            query_id: query.query_id.clone(),
                            generator: None,
                            stage: "rerank".into(),
                            message: format!("passed through: {e}"),
                        });
                    }
                },
            }
        }
        Ok((ranked, events))
    }

    fn select(&self, ranked: &RankedList) -> Result<ContextSelection, String> {
        let want = self.config.context_size;
        match self.config.filter {
            FilterMode::None => Ok(ContextSelection::top(ranked, want)),
            FilterMode::Source => source_filter(ranked, &self.detector, &self.corpus, want).map_err(|e| e.to_string()),
            FilterMode::Diversity => {
                diversity_filter(ranked, &self.corpus, self.config.diversity_threshold, CONTEXT_WINDOW)
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn judge(&self, query: &Query, iteration: u32, text: &str, answer: &str) -> Result<(Verdict, bool), String> {
        judge_support(self.judge.as_ref(), query, iteration, text, answer)
            .map(|o| (o.verdict, o.parse_failed))
            .map_err(|e| e.to_string())
    }

    fn answer_query(&self, query: &Query, iteration: u32, generators: &[String], phase: &str) -> QueryOutcome {
        let (ranked, mut events) = match self.retrieve(query, iteration, phase) {
            Ok(r) => r,
            Err(outcome) => return outcome,
        };
        let event = |generator: Option<&str>, stage: &str, message: String| Event {
            phase: phase.to_string(),
            query_id: query.query_id.clone(),
            generator: generator.map(str::to_string),
            stage: stage.to_string(),
            message,
        };
        let selection = match self.select(&ranked) {
            Ok(s) => s,
            Err(message) => {
                events.push(event(None, "filter", message));
                return QueryOutcome {
                    ranked: Some(ranked),
                    events,
                    failed: true,
                    ..Default::default()
                };
            }
        };
        let mut texts: Vec<String> = selection
            .entries
            .iter()
            .filter_map(|e| self.corpus.get(&e.doc_id).map(|d| d.text.clone()))
            .collect();
        let padded = CONTEXT_SLOTS.saturating_sub(texts.len());
        texts.resize(CONTEXT_SLOTS.max(texts.len()), String::new());
        texts.truncate(CONTEXT_SLOTS);
        let context = ContextRecord {
            query_id: query.query_id.clone(),
            iteration,
            doc_ids: selection.entries.iter().map(|e| e.doc_id.clone()).collect(),
            ranks: selection.entries.iter().map(|e| e.rank).collect(),
            flags: selection.flags.iter().map(|f| f.as_str().to_string()).collect(),
            removals: selection.removals,
            self_bleu: selection.self_bleu,
            padded,
        };

        let key = &self.keys[&query.query_id];
        let context_list = RankedList {
            query_id: query.query_id.clone(),
            iteration,
            entries: selection.entries.clone(),
        };
        let right = context_right_num(&context_list, key, &self.corpus).unwrap_or(0);
        let first = first_right_ranks(&ranked, key, &self.corpus, None).unwrap_or_default();
        let spec = self.misinfo.get(&query.query_id);
        let use_judge = self.config.grade_with_judge || self.config.misinfo;

        let mut outcome = QueryOutcome {
            context: Some(context.clone()),
            events,
            ..Default::default()
        };
        for name in generators {
            let generator = &self.generators[name];
            let request = GenerationRequest::new(query, iteration, Task::WithContexts(&texts));
            let raw = match generator.generate(&request) {
                Ok(raw) => raw,
                Err(e) => {
                    warn!(query = %query.query_id, generator = %name, error = %e, "generation failed");
                    outcome.events.push(event(Some(name), "generation", e.to_string()));
                    outcome.failed_generations += 1;
                    continue;
                }
            };
            let cleaned = clean_detailed(&raw, &self.phrases);
            let em = key.matches(&cleaned.text) as u8;
            let mut eval = EvalRecord {
                query_id: query.query_id.clone(),
                generator: name.clone(),
                iteration,
                em,
                em_llm: None,
                verdict: None,
                em_false: None,
                em_llm_false: None,
                verdict_false: None,
                judge_parse_failed: false,
                context_right_num: right,
                first_right_any: first.any,
                first_right_human: first.human,
            };
            if use_judge {
                let gold = query.answers.first().map(String::as_str).unwrap_or("");
                match self.judge(query, iteration, &cleaned.text, gold) {
                    Ok((v, parse_failed)) => {
                        eval.verdict = Some(v);
                        eval.em_llm = Some(em_llm(em, v));
                        eval.judge_parse_failed |= parse_failed;
                    }
                    Err(message) => outcome.events.push(event(Some(name), "judge", message)),
                }
                if let Some(spec) = spec {
                    let false_answer = spec.chosen_false_answer.as_str();
                    let em_false = AnswerKey::new(&[false_answer]).matches(&cleaned.text) as u8;
                    eval.em_false = Some(em_false);
                    match self.judge(query, iteration, &cleaned.text, false_answer) {
                        Ok((v, parse_failed)) => {
                            eval.verdict_false = Some(v);
                            eval.em_llm_false = Some(em_llm(em_false, v));
                            eval.judge_parse_failed |= parse_failed;
                        }
                        Err(message) => outcome.events.push(event(Some(name), "judge", message)),
                    }
                }
            }
            outcome.records.push(GenerationRecord {
                query_id: query.query_id.clone(),
                iteration,
                generator: name.clone(),
                context_ids: context.doc_ids.clone(),
                raw_text: raw,
                cleaned_text: cleaned.text,
                cleaning_reverted: cleaned.reverted,
                em,
                em_llm: eval.em_llm,
                em_llm_false: eval.em_llm_false,
                doc_id: None,
            });
            outcome.evals.push(eval);
        }
        outcome.failed = outcome.records.is_empty();
        outcome.ranked = Some(ranked);
        outcome
    }

    fn run_queries(&self, iteration: u32, phase: &str) -> Result<Vec<QueryOutcome>, RunError> {
        let generators = self.config.generators_for(iteration);
        let outcomes: Vec<QueryOutcome> = self.pool.install(|| {
            self.queries
                .par_iter()
                .map(|q| self.answer_query(q, iteration, &generators, phase))
                .collect()
        });
        if let Some(e) = outcomes.iter().find_map(|o| o.abort.as_ref()) {
            return Err(RunError::Aborted {
                phase: phase.to_string(),
                reason: format!("reranker failed: {e}"),
            });
        }
        let failed = outcomes.iter().filter(|o| o.failed).count();
        let total = outcomes.len();
        if failed as f64 > self.config.max_failure_fraction * total as f64 {
            return Err(RunError::Aborted {
                phase: phase.to_string(),
                reason: format!("{failed} of {total} queries failed"),
            });
        }
        Ok(outcomes)
    }

    fn metrics(
        &self,
        iteration: u32,
        outcomes: &[QueryOutcome],
        generators: &[String],
    ) -> Result<(IterationMetrics, BTreeMap<String, u8>), RunError> {
        let corpus = &self.corpus;
        let ranked: Vec<RankedList> = outcomes.iter().filter_map(|o| o.ranked.clone()).collect();
        let evals: Vec<&EvalRecord> = outcomes.iter().flat_map(|o| &o.evals).collect();
        let hits5 = hits_at_k(&ranked, &self.keys, 5, corpus)?;

        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let em_values: Vec<f64> = evals.iter().map(|e| e.em as f64).collect();
        let mut em_by_generator = BTreeMap::new();
        for g in generators {
            let v: Vec<f64> = evals.iter().filter(|e| &e.generator == g).map(|e| e.em as f64).collect();
            em_by_generator.insert(g.clone(), mean(&v));
        }

        let mut bleus = Vec::new();
        for list in &ranked {
            let texts: Vec<&str> = list
                .top(5)
                .iter()
                .filter_map(|e| corpus.get(&e.doc_id).map(|d| d.text.as_str()))
                .collect();
            if texts.len() >= 2 {
                bleus.push(self_bleu(&texts, SELF_BLEU_ORDER)?);
            }
        }

        let mut em1 = [0usize; 6];
        let mut em0 = [0usize; 6];
        for e in &evals {
            let slot = e.context_right_num.min(5);
            if e.em == 1 {
                em1[slot] += 1;
            } else {
                em0[slot] += 1;
            }
        }

        let (t01, t10) = match &self.prev_evals {
            Some(prev) => {
                let current: Vec<EvalRecord> = evals.iter().map(|e| (*e).clone()).collect();
                let (a, b) = transition_maps(prev, &current);
                transitions(&a, &b)?
            }
            None => (0, 0),
        };

        let per_query_first: BTreeMap<&str, &EvalRecord> =
            evals.iter().map(|e| (e.query_id.as_str(), *e)).collect();
        let first_any = CoveredMean::of(per_query_first.values().map(|e| e.first_right_any));
        let first_human = CoveredMean::of(per_query_first.values().map(|e| e.first_right_human));

        let acc5_vs_baseline = match &self.baseline_hits {
            Some(base) if iteration > 0 => {
                let common: BTreeSet<&String> = base.keys().filter(|k| hits5.contains_key(*k)).collect();
                let b: BTreeMap<String, u8> = common.iter().map(|k| ((*k).clone(), base[*k])).collect();
                let t: BTreeMap<String, u8> = common.iter().map(|k| ((*k).clone(), hits5[*k])).collect();
                if b.is_empty() {
                    None
                } else {
                    Some(significance(
                        &b,
                        &t,
                        self.config.significance_alpha,
                        BOOTSTRAP_RESAMPLES,
                        derive_seed(self.config.seed, &["significance", &iteration.to_string()]),
                    )?)
                }
            }
            _ => None,
        };

        let judged: Vec<(f64, f64)> = evals
            .iter()
            .filter_map(|e| e.em_llm.map(|l| (e.em as f64, l as f64)))
            .collect();
        let em_llm_mean = (!judged.is_empty()).then(|| mean(&judged.iter().map(|p| p.1).collect::<Vec<_>>()));
        let pearson_em_em_llm = if judged.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = judged.iter().copied().unzip();
            pearson(&x, &y).ok()
        } else {
            None
        };
        let falses: Vec<f64> = evals.iter().filter_map(|e| e.em_llm_false.map(f64::from)).collect();

        let mut filter_flags = BTreeMap::new();
        for c in outcomes.iter().filter_map(|o| o.context.as_ref()) {
            for f in &c.flags {
                *filter_flags.entry(f.clone()).or_insert(0) += 1;
            }
        }

        let metrics = IterationMetrics {
            iteration,
            config_hash: self.config_hash.clone(),
            corpus_version: corpus.version(),
            corpus_size: corpus.len(),
            queries: ranked.len(),
            generators: generators.to_vec(),
            acc_at_5: acc_at_k(&ranked, &self.keys, 5, corpus)?,
            acc_at_20: acc_at_k(&ranked, &self.keys, 20, corpus)?,
            em_mean: mean(&em_values),
            em_by_generator,
            dominance_p: dominance_p(&ranked, corpus, 5)?,
            human_share_top5: 100.0 - dominance_p(&ranked, corpus, 5)?,
            source_share_top50: source_share(&ranked, corpus, 50)?
                .into_iter()
                .map(|(k, v)| (k.as_str().to_string(), v))
                .collect(),
            self_bleu_top5: mean(&bleus),
            context_right_em1: em1,
            context_right_em0: em0,
            transitions_01: t01,
            transitions_10: t10,
            first_right_any: first_any,
            first_right_human: first_human,
            acc5_vs_baseline,
            em_llm_mean,
            em_llm_false_mean: (!falses.is_empty()).then(|| mean(&falses)),
            pearson_em_em_llm,
            failed_generations: outcomes.iter().map(|o| o.failed_generations).sum(),
            filter_flags,
        };
        Ok((metrics, hits5))
    }

    fn collect(outcomes: Vec<QueryOutcome>) -> (Vec<RankedList>, Vec<ContextRecord>, Vec<GenerationRecord>, Vec<EvalRecord>, Vec<Event>) {
        let mut ranked = Vec::new();
        let mut contexts = Vec::new();
        let mut records = Vec::new();
        let mut evals = Vec::new();
        let mut events = Vec::new();
        for o in outcomes {
            ranked.extend(o.ranked);
            contexts.extend(o.context);
            records.extend(o.records);
            evals.extend(o.evals);
            events.extend(o.events);
        }
        (ranked, contexts, records, evals, events)
    }

    fn persist(&self, phase: Phase, a: &IterationArtifacts, hits5: Option<&BTreeMap<String, u8>>) -> Result<(), RunError> {
        let dir = self.layout.begin(phase)?;
        art::write_jsonl(&dir.join(art::RANKED), &a.ranked)?;
        art::write_jsonl(&dir.join(art::CONTEXTS), &a.contexts)?;
        art::write_jsonl(&dir.join(art::GENERATIONS), &a.generations)?;
        art::write_jsonl(&dir.join(art::EVAL), &a.evals)?;
        art::write_jsonl(&dir.join(art::EVENTS), &a.events)?;
        if let Some(h) = hits5 {
            art::write_json(&dir.join(art::HITS_AT_5), h)?;
        }
        if phase != Phase::Baseline {
            let added: Vec<&Document> = self.corpus.latest_additions().iter().collect();
            let added: Vec<&Document> = if a.added_docs == 0 { Vec::new() } else { added };
            art::write_jsonl(&dir.join(art::ADDED_DOCS), &added)?;
        }
        art::write_json(&dir.join(art::METRICS), &a.metrics)?;
        self.layout.commit(phase, a.corpus_version)
    }

    /// Retrieval, generation and grading over the seed corpus. Nothing is
    /// committed and the index is untouched.
    pub fn run_baseline(&mut self) -> Result<IterationArtifacts, RunError> {
        info!(queries = self.queries.len(), docs = self.corpus.len(), "running baseline");
        let outcomes = self.run_queries(0, "baseline")?;
        let generators = self.config.generators_for(0);
        let (metrics, hits5) = self.metrics(0, &outcomes, &generators)?;
        let (ranked, contexts, generations, evals, events) = Self::collect(outcomes);
        let artifacts = IterationArtifacts {
            iteration: 0,
            ranked,
            contexts,
            generations,
            evals,
            events,
            metrics,
            corpus_version: self.corpus.version(),
            added_docs: 0,
        };
        self.persist(Phase::Baseline, &artifacts, Some(&hits5))?;
        self.baseline_hits = Some(hits5);
        self.prev_evals = Some(artifacts.evals.clone());
        Ok(artifacts)
    }

    fn commit_docs(&mut self, mut records: Vec<GenerationRecord>, iteration_added: u32) -> Result<(Vec<GenerationRecord>, usize), RunError> {
        records.sort_by(|a, b| (&a.query_id, &a.generator).cmp(&(&b.query_id, &b.generator)));
        let mut docs = Vec::with_capacity(records.len());
        for r in &mut records {
            let doc = Document::generated(&r.generator, iteration_added, &r.query_id, r.cleaned_text.clone())?;
            r.doc_id = Some(doc.doc_id.clone());
            docs.push(doc);
        }
        let n = docs.len();
        let next = self.corpus.add_documents(docs)?;
        if n > 0 {
            self.retriever.index_documents(next.latest_additions())?;
        }
        self.corpus = next;
        Ok((records, n))
    }

    /// Adds one zero-shot document per (query, generator) as the iteration-1
    /// additions; in misinformation mode, passages supporting a planted false
    /// answer instead.
    pub fn inject_zero_shot(&mut self) -> Result<InjectionArtifacts, RunError> {
        let generators = self.config.generators_for(1);
        info!(generators = ?generators, misinfo = self.config.misinfo, "injecting zero-shot documents");
        let budget = self.config.retry_budget;
        let seed = self.config.seed;
        let misinfo = self.config.misinfo;
        let this = &*self;
        let per_query: Vec<(Option<MisinfoSpec>, Vec<GenerationRecord>, Vec<Event>)> = this.pool.install(|| {
            this.queries
                .par_iter()
                .map(|q| {
                    let mut events = Vec::new();
                    let mut records = Vec::new();
                    let event = |generator: Option<&str>, stage: &str, message: String| Event {
                        phase: "inject".into(),
                        query_id: q.query_id.clone(),
                        generator: generator.map(str::to_string),
                        stage: stage.into(),
                        message,
                    };
                    let spec = if misinfo {
                        match generate_false_answers(this.misinfo_writer.as_ref(), q, budget) {
                            Ok(answers) => Some(MisinfoSpec::choose(&q.query_id, answers, seed)),
                            Err(e) => {
                                warn!(query = %q.query_id, error = %e, "query excluded from misinformation");
                                events.push(event(None, "false_answers", e.to_string()));
                                None
                            }
                        }
                    } else {
                        None
                    };
                    let key = &this.keys[&q.query_id];
                    for name in &generators {
                        let generator = this.generators[name].as_ref();
                        let produced = match &spec {
                            Some(spec) => generate_mis_passage(generator, q, &spec.chosen_false_answer, &this.phrases, budget)
                                .map(|p| (p.raw_text, p.cleaned_text, p.cleaning_reverted)),
                            None if misinfo => continue,
                            None => generator
                                .generate(&GenerationRequest::new(q, 1, Task::ZeroShot))
                                .map(|raw| {
                                    let c = clean_detailed(&raw, &this.phrases);
                                    (raw, c.text, c.reverted)
                                }),
                        };
                        match produced {
                            Ok((raw_text, cleaned_text, cleaning_reverted)) => records.push(GenerationRecord {
                                query_id: q.query_id.clone(),
                                iteration: 1,
                                generator: name.clone(),
                                context_ids: Vec::new(),
                                em: key.matches(&cleaned_text) as u8,
                                raw_text,
                                cleaned_text,
                                cleaning_reverted,
                                em_llm: None,
                                em_llm_false: None,
                                doc_id: None,
                            }),
                            Err(e) => {
                                warn!(query = %q.query_id, generator = %name, error = %e, "zero-shot generation failed");
                                events.push(event(Some(name), "generation", e.to_string()));
                            }
                        }
                    }
                    (spec, records, events)
                })
                .collect()
        });
        let mut specs = Vec::new();
        let mut records = Vec::new();
        let mut events = Vec::new();
        for (spec, r, e) in per_query {
            specs.extend(spec);
            records.extend(r);
            events.extend(e);
        }
        if records.is_empty() {
            return Err(RunError::NoGenerations);
        }
        let (records, added) = self.commit_docs(records, 1)?;
        self.misinfo = specs.iter().map(|s| (s.query_id.clone(), s.clone())).collect();

        let dir = self.layout.begin(Phase::Inject)?;
        art::write_jsonl(&dir.join(art::GENERATIONS), &records)?;
        art::write_jsonl(&dir.join(art::EVENTS), &events)?;
        art::write_jsonl(&dir.join(art::MISINFO), &specs)?;
        art::write_jsonl(&dir.join(art::ADDED_DOCS), self.corpus.latest_additions())?;
        self.layout.commit(Phase::Inject, self.corpus.version())?;
        Ok(InjectionArtifacts {
            generations: records,
            misinfo: specs,
            events,
            added_docs: added,
            corpus_version: self.corpus.version(),
        })
    }

    /// One loop iteration over D_i: retrieve, filter, generate, clean, grade,
    /// then commit every cleaned answer as D_{i+1}.
    pub fn run_iteration(&mut self, iteration: u32) -> Result<IterationArtifacts, RunError> {
        if iteration == 0 {
            return Err(RunError::Setup("loop iterations start at 1".into()));
        }
        let phase = Phase::Iteration(iteration);
        info!(iteration, docs = self.corpus.len(), "running iteration");
        let outcomes = self.run_queries(iteration, &phase.to_string())?;
        let generators = self.config.generators_for(iteration);
        let (metrics, _) = self.metrics(iteration, &outcomes, &generators)?;
        let (ranked, contexts, generations, evals, events) = Self::collect(outcomes);
        let (generations, added) = self.commit_docs(generations, iteration + 1)?;
        let artifacts = IterationArtifacts {
            iteration,
            ranked,
            contexts,
            generations,
            evals,
            events,
            metrics,
            corpus_version: self.corpus.version(),
            added_docs: added,
        };
        self.persist(phase, &artifacts, None)?;
        self.prev_evals = Some(artifacts.evals.clone());
        Ok(artifacts)
    }

    /// Restores the state left by an already committed phase.
    pub fn replay(&mut self, phase: Phase) -> Result<(), RunError> {
        let dir = self.layout.phase_dir(phase);
        match phase {
            Phase::Baseline => {
                self.baseline_hits = Some(art::read_json(&dir.join(art::HITS_AT_5))?);
                self.prev_evals = Some(art::read_jsonl(&dir.join(art::EVAL))?);
            }
            Phase::Inject => {
                self.replay_docs(&dir)?;
                let specs: Vec<MisinfoSpec> = art::read_jsonl(&dir.join(art::MISINFO))?;
                self.misinfo = specs.into_iter().map(|s| (s.query_id.clone(), s)).collect();
            }
            Phase::Iteration(_) => {
                self.replay_docs(&dir)?;
                self.prev_evals = Some(art::read_jsonl(&dir.join(art::EVAL))?);
            }
        }
        Ok(())
    }

    fn replay_docs(&mut self, dir: &std::path::Path) -> Result<(), RunError> {
        let docs: Vec<Document> = art::read_jsonl(&dir.join(art::ADDED_DOCS))?;
        if docs.is_empty() {
            return Ok(());
        }
        let next = self.corpus.add_documents(docs)?;
        self.retriever.index_documents(next.latest_additions())?;
        self.corpus = next;
        Ok(())
    }
}

/// EM maps for transition counting. Answers are keyed by (query, generator)
/// when both iterations used the same generators, otherwise by query with
/// "any generator correct". Only keys present on both sides are compared.
pub fn transition_maps(prev: &[EvalRecord], next: &[EvalRecord]) -> (BTreeMap<String, u8>, BTreeMap<String, u8>) {
    let gens = |v: &[EvalRecord]| v.iter().map(|e| e.generator.clone()).collect::<BTreeSet<_>>();
    let same = gens(prev) == gens(next);
    let map = |v: &[EvalRecord]| {
        let mut m: BTreeMap<String, u8> = BTreeMap::new();
        for e in v {
            let key = if same {
                format!("{}\u{1f}{}", e.query_id, e.generator)
            } else {
                e.query_id.clone()
            };
            let slot = m.entry(key).or_insert(0);
            *slot = (*slot).max(e.em);
        }
        m
    };
    let (mut a, mut b) = (map(prev), map(next));
    a.retain(|k, _| b.contains_key(k));
    b.retain(|k, _| a.contains_key(k));
    (a, b)
}
