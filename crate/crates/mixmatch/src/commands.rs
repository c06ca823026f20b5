//! Train, generate and revise, shared by the CLI and the test suites.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use mixmatch_core::experts::{
    DiscriminatorExpert, EmbeddingTable, EnergyModel, Expert, ExpertKind, FuzzyExpert, HammingExpert, LexiconExpert,
    MlmExpert,
};
use mixmatch_core::metrics::{corpus_bleu, distinct_n, internal_accuracy, mean_hamming, EvalReport};
use mixmatch_core::sampler::{
    chain_seed, ensemble_jobs, init_prompted, init_revision, init_single_slot, run_chain, ChainResult, SamplerConfig,
};
use mixmatch_core::text::{build_vocab, detokenize, tokenize, Corpus, Sequence, TokenId, UNK};
use mixmatch_core::toy::{fit_nb_classifier, fit_neighbor_mlm, Classifier, MaskedConditional, NaiveBayes, NeighborMlm};
use serde::Serialize;

use crate::config::{ExpertSpec, ProposalSpec, RunConfig, Task, TraceFormat, CLASSIFIER_FILE, MLM_FILE, VOCAB_FILE};
use crate::error::{Error, Result};
use crate::formats::{
    load_model, read_corpus, read_embeddings, read_labeled, read_lexicon, read_text, read_vocab, save_model,
    write_report, write_samples, write_trace_csv, write_trace_jsonl, write_vocab,
};
use crate::remote::{RemoteClient, RemoteEnergyExpert, RemoteProposal};

pub const MLM_KIND: &str = "neighbor_mlm";
pub const CLASSIFIER_KIND: &str = "naive_bayes";
pub const SAMPLES_FILE: &str = "samples.txt";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub corpus: PathBuf,
    pub labeled: Option<PathBuf>,
    /// Add-k smoothing for both models.
    pub k: f64,
    pub min_count: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub vocab_size: usize,
    pub corpus_lines: usize,
    pub labeled_lines: usize,
    pub classes: usize,
    pub classifier_accuracy: Option<f64>,
}

/// Builds the vocabulary from both files, fits the neighbor MLM on the
/// corpus and the classifier on the labeled file.
pub fn cmd_train(opts: &TrainOptions) -> Result<TrainSummary> {
    let mut errs = Vec::new();
    if !(opts.k.is_finite() && opts.k > 0.0) {
        errs.push(format!("smoothing k must be positive, got {}", opts.k));
    }
    if opts.min_count == 0 {
        errs.push("min_count must be at least 1".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let lines = read_corpus(&opts.corpus)?;
    let labeled = match &opts.labeled {
        Some(p) => read_labeled(p)?,
        None => Vec::new(),
    };
    let vocab =
        build_vocab(lines.iter().map(String::as_str).chain(labeled.iter().map(|(_, t)| t.as_str())), opts.min_count)?;
    let mlm = fit_neighbor_mlm(&Corpus::from_lines(lines.iter().map(String::as_str), &vocab), vocab.len(), opts.k)?;

    write_vocab(&opts.out_dir.join(VOCAB_FILE), &vocab)?;
    save_model(&opts.out_dir.join(MLM_FILE), MLM_KIND, &vocab, &mlm)?;

    let mut summary = TrainSummary {
        vocab_size: vocab.len(),
        corpus_lines: lines.len(),
        labeled_lines: labeled.len(),
        classes: 0,
        classifier_accuracy: None,
    };
    if !labeled.is_empty() {
        let texts = Corpus::from_lines(labeled.iter().map(|(_, t)| t.as_str()), &vocab);
        let labels: Vec<usize> = labeled.iter().map(|(l, _)| *l).collect();
        let corpus = Corpus::labeled(texts.lines, labels.clone())?;
        let clf = fit_nb_classifier(&corpus, vocab.len(), opts.k)?;
        let hits = corpus.lines.iter().zip(&labels).filter(|(x, &y)| clf.predict(x) == y).count();
        summary.classes = clf.num_classes();
        summary.classifier_accuracy = Some(hits as f64 / labels.len() as f64);
        save_model(&opts.out_dir.join(CLASSIFIER_FILE), CLASSIFIER_KIND, &vocab, &clf)?;
    }
    Ok(summary)
}

/// Trained artifacts referenced by a run.
pub struct Models {
    pub vocab: Arc<mixmatch_core::Vocabulary>,
    pub mlm: Option<Arc<NeighborMlm>>,
    pub classifier: Option<Arc<NaiveBayes>>,
}

impl Models {
    /// Loads the vocabulary plus whichever models exist in the directory.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let vocab = read_vocab(&cfg.vocab_path())?;
        let mlm_path = cfg.mlm_path();
        let clf_path = cfg.classifier_path();
        let mlm = if mlm_path.is_file() {
            Some(Arc::new(load_model::<NeighborMlm>(&mlm_path, MLM_KIND, &vocab)?))
        } else {
            None
        };
        let classifier = if clf_path.is_file() {
            Some(Arc::new(load_model::<NaiveBayes>(&clf_path, CLASSIFIER_KIND, &vocab)?))
        } else {
            None
        };
        Ok(Self { vocab: Arc::new(vocab), mlm, classifier })
    }

    fn require_mlm(&self, cfg: &RunConfig) -> Result<Arc<NeighborMlm>> {
        self.mlm
            .clone()
            .ok_or_else(|| Error::Config(vec![format!("masked LM not found: {}", cfg.mlm_path().display())]))
    }
}

enum Slot {
    Fixed(Arc<dyn Expert>, f64),
    Hamming(f64),
    Fuzzy(Arc<EmbeddingTable>, f64),
}

/// The configured expert list with shared resources loaded once; experts that
/// compare against a source are bound per sequence.
pub struct EnergyTemplate {
    slots: Vec<Slot>,
}

impl EnergyTemplate {
    pub fn build(cfg: &RunConfig, models: &Models) -> Result<Self> {
        let mut lexicons: HashMap<PathBuf, BTreeSet<TokenId>> = HashMap::new();
        let mut tables: HashMap<PathBuf, Arc<EmbeddingTable>> = HashMap::new();
        let mut slots = Vec::with_capacity(cfg.experts.len());
        for spec in &cfg.experts {
            let slot = match spec {
                ExpertSpec::Mlm { weight } => {
                    let mlm: Arc<dyn MaskedConditional> = models.require_mlm(cfg)?;
                    Slot::Fixed(Arc::new(MlmExpert::new(mlm)), *weight)
                }
                ExpertSpec::Discriminator { weight, mode } => {
                    let clf: Arc<dyn Classifier> = models.classifier.clone().ok_or_else(|| {
                        Error::Config(vec![format!("classifier not found: {}", cfg.classifier_path().display())])
                    })?;
                    let expert = DiscriminatorExpert::new(clf, cfg.target_class, *mode)
                        .map_err(|e| Error::Config(vec![format!("target_class: {e}")]))?;
                    Slot::Fixed(Arc::new(expert), *weight)
                }
                ExpertSpec::Hamming { weight } => Slot::Hamming(*weight),
                ExpertSpec::Fuzzy { weight, embeddings } => {
                    let path = embeddings
                        .clone()
                        .or_else(|| cfg.embeddings.clone())
                        .ok_or_else(|| Error::Config(vec!["fuzzy expert has no embeddings file".into()]))?;
                    let table = match tables.get(&path) {
                        Some(t) => t.clone(),
                        None => {
                            let t = Arc::new(read_embeddings(&path, &models.vocab)?);
                            tables.insert(path, t.clone());
                            t
                        }
                    };
                    Slot::Fuzzy(table, *weight)
                }
                ExpertSpec::Lexicon { weight, lexicon } => {
                    let path = lexicon
                        .clone()
                        .or_else(|| cfg.lexicon.clone())
                        .ok_or_else(|| Error::Config(vec!["lexicon expert has no lexicon file".into()]))?;
                    let words = match lexicons.get(&path) {
                        Some(w) => w.clone(),
                        None => {
                            let w = read_lexicon(&path, &models.vocab)?;
                            lexicons.insert(path, w.clone());
                            w
                        }
                    };
                    Slot::Fixed(Arc::new(LexiconExpert::new(words)), *weight)
                }
                ExpertSpec::Remote { weight, endpoint } => {
                    let client = RemoteClient::new(endpoint.clone())?;
                    Slot::Fixed(Arc::new(RemoteEnergyExpert::new(client, models.vocab.clone())), *weight)
                }
            };
            slots.push(slot);
        }
        Ok(Self { slots })
    }

    pub fn needs_reference(&self) -> bool {
        self.slots.iter().any(|s| !matches!(s, Slot::Fixed(..)))
    }

    /// Binds source-comparing experts to `reference`.
    pub fn instantiate(&self, reference: Option<&Sequence>) -> Result<EnergyModel> {
        let mut model = EnergyModel::new();
        for slot in &self.slots {
            match slot {
                Slot::Fixed(e, w) => model.push_shared(e.clone(), *w)?,
                Slot::Hamming(w) | Slot::Fuzzy(_, w) => {
                    let reference = reference.ok_or_else(|| {
                        Error::Config(vec!["hamming and fuzzy experts need a source sequence".into()])
                    })?;
                    let reference = Sequence::new(reference.ids().to_vec());
                    match slot {
                        Slot::Fuzzy(table, _) => model.push(FuzzyExpert::new(reference, table.clone()), *w)?,
                        _ => model.push(HammingExpert::new(reference), *w)?,
                    }
                }
            }
        }
        Ok(model)
    }
}

/// Builds the proposal named by the config.
pub fn build_proposal(cfg: &RunConfig, models: &Models) -> Result<Arc<dyn MaskedConditional>> {
    Ok(match &cfg.proposal {
        ProposalSpec::Local => models.require_mlm(cfg)?,
        ProposalSpec::Remote { endpoint } => {
            Arc::new(RemoteProposal::new(RemoteClient::new(endpoint.clone())?, models.vocab.clone()))
        }
    })
}

/// Runs `f` over `jobs` on up to `threads` workers. Results come back in job
/// order, so output does not depend on scheduling; the first failing job (by
/// index) determines the error.
pub fn run_jobs<T, R, F>(jobs: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().enumerate().map(|(i, j)| f(i, j)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(i, &jobs[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every job index is claimed exactly once"))
        .collect()
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Everything a generate or revise run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub chains: Vec<ChainResult>,
    /// Source per chain, for revision runs.
    pub sources: Vec<Sequence>,
    pub texts: Vec<String>,
    pub report: EvalReport,
}

impl RunOutput {
    pub fn samples(&self) -> Vec<Sequence> {
        self.chains.iter().map(|c| c.sequence.clone()).collect()
    }
}

/// Reads the prompts from the config and its prompt file, in that order.
pub fn collect_prompts(cfg: &RunConfig) -> Result<Vec<String>> {
    let mut prompts = cfg.prompts.clone();
    if let Some(p) = &cfg.prompt_file {
        prompts.extend(read_corpus(p)?);
    }
    Ok(prompts)
}

/// A revision source line with the position to revise in Verb-Replace mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLine {
    pub text: String,
    pub slot: Option<usize>,
}

pub fn read_sources(path: &Path, verb_replace: bool) -> Result<Vec<SourceLine>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        if verb_replace {
            let (pos, body) = line.split_once('\t').ok_or_else(|| parse_err("expected `position<TAB>text`".into()))?;
            let pos: usize = pos.trim().parse().map_err(|e| parse_err(format!("bad position {pos:?}: {e}")))?;
            let len = body.split_whitespace().count();
            if pos >= len {
                return Err(parse_err(format!("position {pos} outside a {len}-token line")));
            }
            out.push(SourceLine { text: body.to_string(), slot: Some(pos) });
        } else {
            out.push(SourceLine { text: line.to_string(), slot: None });
        }
    }
    if out.is_empty() {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, message: "no source lines".into() });
    }
    Ok(out)
}

fn sampler_config(cfg: &RunConfig, chain: usize) -> SamplerConfig {
    SamplerConfig { epochs: cfg.epochs(), seed: chain_seed(cfg.seed, chain), order: cfg.order }
}

fn warn_unknown(seq: &Sequence, text: &str) {
    if seq.ids().contains(&UNK) {
        log::warn!("{text:?} contains tokens outside the vocabulary");
    }
}

/// Prompted generation: every prompt gets `samples_per_prompt` chains.
pub fn run_generate(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.task != Task::Generate {
        return Err(Error::Config(vec!["config task is not generate".into()]));
    }
    let models = Models::load(cfg)?;
    let template = EnergyTemplate::build(cfg, &models)?;
    let energy = template.instantiate(None)?;
    let proposal = build_proposal(cfg, &models)?;
    let length = cfg.length.expect("validated");
    let inits = collect_prompts(cfg)?
        .iter()
        .map(|p| {
            let seq = tokenize(p, &models.vocab);
            warn_unknown(&seq, p);
            init_prompted(&seq, length).map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, &Sequence)> = ensemble_jobs(&inits, cfg.samples_per_prompt).collect();
    let threads = cfg.threads.unwrap_or_else(default_threads);
    let chains = run_jobs(&jobs, threads, |_, &(c, init)| {
        Ok(run_chain(init, &sampler_config(cfg, c), &energy, proposal.as_ref())?)
    })?;
    finish(cfg, &models, chains, Vec::new())
}

/// Revision: every source line gets `samples_per_source` chains.
pub fn run_revise(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.task != Task::Revise {
        return Err(Error::Config(vec!["config task is not revise".into()]));
    }
    let models = Models::load(cfg)?;
    let template = EnergyTemplate::build(cfg, &models)?;
    let proposal = build_proposal(cfg, &models)?;
    let lines = read_sources(cfg.source_file.as_deref().expect("validated"), cfg.verb_replace)?;
    let mut sources = Vec::with_capacity(lines.len());
    let mut inits = Vec::with_capacity(lines.len());
    for line in &lines {
        let seq = tokenize(&line.text, &models.vocab);
        warn_unknown(&seq, &line.text);
        inits.push(match line.slot {
            Some(pos) => init_single_slot(&seq, pos)?,
            None => init_revision(&seq, None)?,
        });
        sources.push(seq);
    }
    let jobs: Vec<(usize, &Sequence)> = ensemble_jobs(&inits, cfg.samples_per_source).collect();
    let threads = cfg.threads.unwrap_or_else(default_threads);
    let chains = run_jobs(&jobs, threads, |_, &(c, init)| {
        let energy = template.instantiate(Some(init))?;
        Ok(run_chain(init, &sampler_config(cfg, c), &energy, proposal.as_ref())?)
    })?;
    let per_chain_sources =
        sources.iter().flat_map(|s| std::iter::repeat_n(s.clone(), cfg.samples_per_source)).collect();
    finish(cfg, &models, chains, per_chain_sources)
}

fn finish(cfg: &RunConfig, models: &Models, chains: Vec<ChainResult>, sources: Vec<Sequence>) -> Result<RunOutput> {
    let samples: Vec<Sequence> = chains.iter().map(|c| c.sequence.clone()).collect();
    let texts = samples.iter().map(|s| detokenize(s, &models.vocab)).collect::<mixmatch_core::Result<Vec<_>>>()?;
    let report = evaluate(&samples, &sources, &chains, models.classifier.as_deref(), cfg.target_class)?;
    Ok(RunOutput { chains, sources, texts, report })
}

/// Report over finished chains; revision adds hamming and BLEU against the
/// sources.
pub fn evaluate(
    samples: &[Sequence],
    sources: &[Sequence],
    chains: &[ChainResult],
    classifier: Option<&NaiveBayes>,
    target: usize,
) -> Result<EvalReport> {
    let ids: Vec<&[TokenId]> = samples.iter().map(Sequence::ids).collect();
    let mut report = EvalReport { samples: samples.len(), ..EvalReport::default() };
    if samples.is_empty() {
        return Ok(report);
    }
    if let Some(clf) = classifier.filter(|c| target < c.num_classes()) {
        report.internal_accuracy = Some(internal_accuracy(samples, clf, target)?);
    }
    report.distinct_1 = distinct_n(&ids, 1).ok();
    report.distinct_2 = distinct_n(&ids, 2).ok();
    report.distinct_3 = distinct_n(&ids, 3).ok();
    if !sources.is_empty() {
        report.mean_hamming = Some(mean_hamming(samples, sources)?);
        let refs: Vec<&[TokenId]> = sources.iter().map(Sequence::ids).collect();
        report.bleu = corpus_bleu(&ids, &refs, 4).ok();
    }
    let energies: Vec<f64> = chains.iter().filter_map(ChainResult::final_energy).collect();
    if !energies.is_empty() {
        report.mean_energy = Some(energies.iter().sum::<f64>() / energies.len() as f64);
    }
    report.acceptance_rate = Some(chains.iter().map(|c| c.acceptance_rate).sum::<f64>() / chains.len() as f64);
    Ok(report)
}

/// Writes samples, report and (if enabled) one trace file per chain.
pub fn write_outputs(cfg: &RunConfig, out: &RunOutput) -> Result<()> {
    write_samples(&cfg.out_dir.join(SAMPLES_FILE), &out.texts)?;
    write_report(&cfg.out_dir.join(REPORT_FILE), &out.report)?;
    if cfg.trace {
        let dir = cfg.out_dir.join(TRACE_DIR);
        for (c, chain) in out.chains.iter().enumerate() {
            match cfg.trace_format {
                TraceFormat::Csv => write_trace_csv(&dir.join(format!("chain_{c:05}.csv")), &chain.trace)?,
                TraceFormat::Jsonl => write_trace_jsonl(&dir.join(format!("chain_{c:05}.jsonl")), &chain.trace)?,
            }
        }
    }
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<RunOutput> {
    let out = run_generate(cfg)?;
    write_outputs(cfg, &out)?;
    Ok(out)
}

pub fn cmd_revise(cfg: &RunConfig) -> Result<RunOutput> {
    let out = run_revise(cfg)?;
    write_outputs(cfg, &out)?;
    Ok(out)
}

/// Command-line adjustments layered over a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub trace: bool,
    pub weights: Vec<(ExpertKind, f64)>,
    pub remote_experts: Vec<ExpertSpec>,
}

/// Loads a config, applies preset and overrides, and validates, collecting
/// every problem before returning.
pub fn prepare_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    let mut errs = Vec::new();
    if let Some(name) = overrides.preset.clone().or_else(|| cfg.preset.clone()) {
        if let Err(Error::Config(e)) = cfg.apply_preset(&name) {
            errs.extend(e);
        }
    }
    cfg.experts.extend(overrides.remote_experts.iter().cloned());
    for &(kind, w) in &overrides.weights {
        if cfg.set_weight(kind, w) == 0 {
            errs.push(format!("--weight {}: no expert of that kind is configured", kind.as_str()));
        }
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = out.clone();
    }
    cfg.trace |= overrides.trace;
    if let Err(Error::Config(e)) = cfg.validate() {
        errs.extend(e);
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}
