//! Turns items into scored units: sampling, option injection, black-box and
//! white-box scoring, and correctness labels.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::config::{CorrectnessSource, NliSource, RunConfig};
use super::report::{evaluate, MetricReport};
use super::{Exclusion, FailedItem, OutputLock, Result, ScoreRow, ScoreSet, StudyError, UnitLabel};
use crate::blackbox::{
    degree_confidence, effective_similarity, eccentricity_scores, BlackboxMethod, CandidateScorer,
};
use crate::dataset::{load_dataset, subsample, McqItem, PromptTemplate};
use crate::gateway::{Gateway, GatewayError, GenerationConfig, RecordStore, TokenLogprobSeq};
use crate::methods::{Family, Method};
use crate::metrics::{gold_labels, similarity_correctness, EvalMode, Origin};
use crate::similarity::matrix_file::load_precomputed;
use crate::similarity::nli::HttpNliProvider;
use crate::similarity::{
    build_matrix, JaccardProvider, PrecomputedProvider, SimilarityKind, SimilarityProvider,
};
use crate::whitebox::{self, WhiteboxError, WhiteboxMethod};

/// A provider for one item: local Jaccard, a matrix file, or the shared NLI
/// client.
enum ProviderHandle {
    Jaccard(JaccardProvider),
    Precomputed(PrecomputedProvider),
    Shared(Arc<HttpNliProvider>),
}

impl ProviderHandle {
    fn get(&self) -> &dyn SimilarityProvider {
        match self {
            ProviderHandle::Jaccard(p) => p,
            ProviderHandle::Precomputed(p) => p,
            ProviderHandle::Shared(p) => p.as_ref(),
        }
    }
}

/// Why a method produced no score for an item.
enum Failure {
    /// The backend cannot serve the method at all.
    Unavailable(String),
    /// Something went wrong with this item; it is skipped.
    Item(String),
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Capability { .. } => Failure::Unavailable(e.to_string()),
            other => Failure::Item(other.to_string()),
        }
    }
}

impl From<WhiteboxError> for Failure {
    fn from(e: WhiteboxError) -> Self {
        match e {
            WhiteboxError::MissingAttention { .. } => Failure::Unavailable(e.to_string()),
            other => Failure::Item(other.to_string()),
        }
    }
}

fn item_err(e: impl std::fmt::Display) -> Failure {
    Failure::Item(e.to_string())
}

#[derive(Debug, Default)]
struct ItemOutput {
    scores: Vec<ScoreRow>,
    labels: Vec<UnitLabel>,
    exclusions: Vec<Exclusion>,
    unavailable: Vec<(Method, String)>,
    channels: Vec<(Method, String)>,
    p_true_modes: Vec<String>,
}

impl ItemOutput {
    fn push_scores(&mut self, item_id: &str, method: Method, indices: &[usize], values: &[f64]) {
        for (&i, &v) in indices.iter().zip(values) {
            self.scores.push(ScoreRow {
                item_id: item_id.to_string(),
                option_index: i,
                method,
                confidence: v,
            });
        }
    }
}

/// One text scored by the white-box methods, with tokens when the backend
/// already returned them.
struct Unit<'a> {
    index: usize,
    text: &'a str,
    tokens: Option<&'a TokenLogprobSeq>,
}

/// Question text shown to P(true) and the judge: passage first, if any.
pub fn question_text(item: &McqItem) -> String {
    match &item.context {
        Some(c) => format!("{c}\n{}", item.question),
        None => item.question.clone(),
    }
}

struct Collector<'a> {
    cfg: &'a RunConfig,
    gateway: &'a Gateway,
    judge: Option<&'a Gateway>,
    template: PromptTemplate,
    shared: Vec<(SimilarityKind, Arc<HttpNliProvider>)>,
}

impl<'a> Collector<'a> {
    fn new(cfg: &'a RunConfig, gateway: &'a Gateway, judge: Option<&'a Gateway>) -> Result<Self> {
        let mut shared = Vec::new();
        for kind in cfg.required_kinds() {
            if let Some(NliSource::Sidecar { endpoint }) = cfg.similarity.source(kind) {
                let p = HttpNliProvider::new(
                    endpoint,
                    kind,
                    cfg.similarity.contextualize,
                    cfg.generation.retry.clone(),
                    Duration::from_secs(cfg.generation.timeout_secs),
                )
                .map_err(|e| StudyError::Config(e.to_string()))?;
                shared.push((kind, Arc::new(p)));
            }
        }
        if cfg.methods.contains(&Method::TokenSar) {
            if let Some(NliSource::Precomputed { .. }) = cfg.similarity.source(cfg.whitebox.relevance) {
                return Err(StudyError::Config(
                    "TokenSAR relevance scores token removals and needs a live similarity source, not precomputed matrices".into(),
                ));
            }
        }
        Ok(Self {
            cfg,
            gateway,
            judge,
            template: cfg.template()?,
            shared,
        })
    }

    /// Provider of `kind` for one item; `texts` are the strings a matrix
    /// file indexes (samples, then options).
    fn provider(&self, kind: SimilarityKind, item_id: &str, texts: &[String]) -> Result<ProviderHandle, Failure> {
        match self.cfg.similarity.source(kind) {
            None => Ok(ProviderHandle::Jaccard(JaccardProvider)),
            Some(NliSource::Sidecar { .. }) => {
                let (_, p) = self
                    .shared
                    .iter()
                    .find(|(k, _)| *k == kind)
                    .ok_or_else(|| item_err(format!("no {kind} client")))?;
                Ok(ProviderHandle::Shared(Arc::clone(p)))
            }
            Some(NliSource::Precomputed { path }) => {
                let file = path.join(format!("{item_id}.{kind}.txt"));
                let matrix = load_precomputed(&file).map_err(|e| item_err(format!("{}: {e}", file.display())))?;
                if matrix.kind() != kind {
                    return Err(item_err(format!("{} holds {} scores", file.display(), matrix.kind())));
                }
                Ok(ProviderHandle::Precomputed(
                    PrecomputedProvider::new(texts, matrix).map_err(item_err)?,
                ))
            }
        }
    }

    fn nli_context<'i>(&self, item: &'i McqItem) -> Option<&'i str> {
        self.cfg.similarity.contextualize.then_some(item.question.as_str())
    }

    fn blackbox_methods(&self) -> Vec<BlackboxMethod> {
        self.cfg
            .methods
            .iter()
            .filter_map(|m| match m.family() {
                Family::Blackbox(b) => Some(b),
                Family::Whitebox(_) => None,
            })
            .collect()
    }

    fn whitebox_methods(&self) -> Vec<WhiteboxMethod> {
        self.cfg
            .methods
            .iter()
            .filter_map(|m| match m.family() {
                Family::Whitebox(w) => Some(w),
                Family::Blackbox(_) => None,
            })
            .collect()
    }

    fn blackbox_kinds(&self) -> Vec<SimilarityKind> {
        let kinds: BTreeSet<SimilarityKind> = self.blackbox_methods().iter().map(|b| b.kind()).collect();
        kinds.into_iter().collect()
    }

    fn process(&self, item: &McqItem) -> std::result::Result<ItemOutput, String> {
        let result = match self.cfg.mode {
            EvalMode::McqaEval => self.mcqa_item(item),
            EvalMode::Baseline => self.baseline_item(item),
        };
        result.map_err(|f| match f {
            Failure::Item(m) | Failure::Unavailable(m) => m,
        })
    }

    fn mcqa_item(&self, item: &McqItem) -> Result<ItemOutput, Failure> {
        let rendered = self.template.render(item).map_err(item_err)?;
        let mut out = ItemOutput::default();
        let bb = self.blackbox_methods();
        let wb = self.whitebox_methods();
        let p_true_samples = wb.contains(&WhiteboxMethod::PTrue) && self.cfg.whitebox.p_true_with_samples;
        let samples: Vec<String> = if !bb.is_empty() || p_true_samples {
            match self.gateway.sample_responses(&item.id, &rendered.prompt) {
                Ok(s) => s.into_iter().map(|r| r.text).collect(),
                Err(e) => match Failure::from(e) {
                    Failure::Unavailable(reason) => {
                        for m in self.cfg.methods.iter().filter(|m| m.is_blackbox()) {
                            out.unavailable.push((*m, reason.clone()));
                        }
                        Vec::new()
                    }
                    f => return Err(f),
                },
            }
        } else {
            Vec::new()
        };
        let indices: Vec<usize> = (0..item.options.len()).collect();

        if !samples.is_empty() {
            let mut texts = samples.clone();
            texts.extend(item.options.iter().cloned());
            let ctx = self.nli_context(item);
            for kind in self.blackbox_kinds() {
                let provider = self.provider(kind, &item.id, &texts)?;
                let scorer = CandidateScorer::new(&samples, provider.get(), ctx).map_err(item_err)?;
                let ks = scorer.score_all(&item.options, &self.cfg.spectral).map_err(item_err)?;
                for b in bb.iter().filter(|b| b.kind() == kind) {
                    let values = if b.is_degree() { &ks.degree } else { &ks.eccentricity };
                    out.push_scores(&item.id, Method::from(*b), &indices, values);
                }
            }
        }

        let units: Vec<Unit> = item
            .options
            .iter()
            .enumerate()
            .map(|(index, text)| Unit {
                index,
                text,
                tokens: None,
            })
            .collect();
        let samples_for_p_true = p_true_samples.then_some(samples.as_slice());
        self.whitebox_scores(item, &rendered.prompt, &units, samples_for_p_true, &mut out)?;

        for (i, label) in gold_labels(item).into_iter().enumerate() {
            out.labels.push(UnitLabel {
                item_id: item.id.clone(),
                option_index: i,
                origin: Origin::InjectedOption,
                correctness: Some(label),
                continuous: None,
            });
        }
        Ok(out)
    }

    fn baseline_item(&self, item: &McqItem) -> Result<ItemOutput, Failure> {
        let rendered = self.template.render(item).map_err(item_err)?;
        let mut out = ItemOutput::default();
        let responses = self.gateway.sample_responses(&item.id, &rendered.prompt)?;
        let samples: Vec<String> = responses.iter().map(|r| r.text.clone()).collect();
        let mut texts = samples.clone();
        texts.extend(item.options.iter().cloned());
        let ctx = self.nli_context(item);
        let gold = item.correct_option().to_string();
        let baseline = self.cfg.baseline.clone().unwrap_or_default();

        let label_provider = match baseline.correctness {
            CorrectnessSource::Similarity => Some(self.provider(baseline.similarity, &item.id, &texts)?),
            CorrectnessSource::Judge => None,
        };
        let question = question_text(item);
        for (j, text) in samples.iter().enumerate() {
            let mut label = UnitLabel {
                item_id: item.id.clone(),
                option_index: j,
                origin: Origin::SampledResponse,
                correctness: None,
                continuous: None,
            };
            if text.trim().is_empty() {
                out.exclusions.push(Exclusion {
                    item_id: item.id.clone(),
                    option_index: Some(j),
                    method: None,
                    reason: "empty response".into(),
                });
                continue;
            }
            match &label_provider {
                Some(p) => {
                    let (sim, _) = similarity_correctness(text, std::slice::from_ref(&gold), 0.0, p.get(), ctx)
                        .map_err(item_err)?;
                    label.continuous = Some(sim);
                }
                None => {
                    let judge = self.judge.ok_or_else(|| item_err("no judge configured"))?;
                    match judge.judge_correctness(&item.id, &question, text, &gold) {
                        Ok(l) => label.correctness = Some(l),
                        Err(GatewayError::Indeterminate { reply }) => {
                            out.exclusions.push(Exclusion {
                                item_id: item.id.clone(),
                                option_index: Some(j),
                                method: None,
                                reason: format!("indeterminate judge reply {reply:?}"),
                            });
                            continue;
                        }
                        Err(e) => return Err(item_err(e)),
                    }
                }
            }
            out.labels.push(label);
        }

        let indices: Vec<usize> = (0..samples.len()).collect();
        let bb = self.blackbox_methods();
        for kind in self.blackbox_kinds() {
            let provider = self.provider(kind, &item.id, &texts)?;
            let m = build_matrix(&samples, kind, provider.get(), ctx).map_err(item_err)?;
            let w = effective_similarity(&m);
            for b in bb.iter().filter(|b| b.kind() == kind) {
                let values: Vec<f64> = if b.is_degree() {
                    indices.iter().map(|&j| degree_confidence(&w, j)).collect()
                } else {
                    eccentricity_scores(&w, &self.cfg.spectral).map_err(item_err)?
                };
                out.push_scores(&item.id, Method::from(*b), &indices, &values);
            }
        }

        let units: Vec<Unit> = responses
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.text.trim().is_empty())
            .map(|(index, r)| Unit {
                index,
                text: &r.text,
                tokens: r.tokens.as_ref().filter(|t| !t.is_empty()),
            })
            .collect();
        let p_true_samples = self.cfg.whitebox.p_true_with_samples.then_some(samples.as_slice());
        self.whitebox_scores(item, &rendered.prompt, &units, p_true_samples, &mut out)?;
        Ok(out)
    }

    fn whitebox_scores(
        &self,
        item: &McqItem,
        prompt: &str,
        units: &[Unit],
        p_true_samples: Option<&[String]>,
        out: &mut ItemOutput,
    ) -> Result<(), Failure> {
        let indices: Vec<usize> = units.iter().map(|u| u.index).collect();
        for w in self.whitebox_methods() {
            let method = Method::from(w);
            match self.whitebox_method(w, item, prompt, units, p_true_samples, out) {
                Ok(values) => out.push_scores(&item.id, method, &indices, &values),
                Err(Failure::Unavailable(reason)) => out.unavailable.push((method, reason)),
                Err(f) => return Err(f),
            }
        }
        Ok(())
    }

    fn plain_tokens(&self, item: &McqItem, prompt: &str, unit: &Unit) -> Result<TokenLogprobSeq, Failure> {
        match unit.tokens {
            Some(t) => Ok(t.clone()),
            None => Ok(self.gateway.score_candidate(&item.id, prompt, unit.text, None)?),
        }
    }

    fn whitebox_method(
        &self,
        w: WhiteboxMethod,
        item: &McqItem,
        prompt: &str,
        units: &[Unit],
        p_true_samples: Option<&[String]>,
        out: &mut ItemOutput,
    ) -> Result<Vec<f64>, Failure> {
        let mut values = Vec::with_capacity(units.len());
        match w {
            WhiteboxMethod::Sl | WhiteboxMethod::Perplexity | WhiteboxMethod::TokenSar => {
                let relevance = if w == WhiteboxMethod::TokenSar {
                    Some(self.provider(self.cfg.whitebox.relevance, &item.id, &[])?)
                } else {
                    None
                };
                for unit in units {
                    let seq = self.plain_tokens(item, prompt, unit)?;
                    let v = match w {
                        WhiteboxMethod::Sl => whitebox::sl(&seq)?,
                        WhiteboxMethod::Perplexity => whitebox::perplexity_conf(&seq)?,
                        _ => {
                            let tokens: Vec<String> = seq.tokens.iter().map(|t| t.text.clone()).collect();
                            let p = relevance.as_ref().expect("set for TokenSAR");
                            let weights = whitebox::relevance_weights(&tokens, p.get(), self.nli_context(item))?;
                            whitebox::token_sar(&seq, &weights)?
                        }
                    };
                    values.push(v);
                }
            }
            WhiteboxMethod::Csl | WhiteboxMethod::CslNext => {
                let channel = w.channel().expect("attention methods have a channel");
                for unit in units {
                    let seq = self.gateway.score_candidate(&item.id, prompt, unit.text, Some(channel))?;
                    if let Some(id) = &seq.channel {
                        if !out.channels.iter().any(|(m, _)| *m == Method::from(w)) {
                            out.channels.push((Method::from(w), id.clone()));
                        }
                    }
                    values.push(if w == WhiteboxMethod::Csl {
                        whitebox::csl(&seq)?
                    } else {
                        whitebox::csl_next(&seq)?
                    });
                }
            }
            WhiteboxMethod::PTrue => {
                let question = question_text(item);
                for unit in units {
                    let est = self
                        .gateway
                        .elicit_p_true(&item.id, &question, unit.text, p_true_samples)?;
                    out.p_true_modes.push(
                        serde_json::to_value(est.mode)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                    );
                    values.push(est.probability);
                }
            }
        }
        Ok(values)
    }
}

/// Score every item. Items are processed in parallel up to the generation
/// concurrency limit and assembled in input order. Methods the backend
/// cannot serve are recorded as unavailable and contribute no scores.
pub fn collect(
    cfg: &RunConfig,
    items: &[McqItem],
    gateway: &Gateway,
    judge: Option<&Gateway>,
) -> Result<ScoreSet> {
    let collector = Collector::new(cfg, gateway, judge)?;
    let results: Mutex<Vec<Option<std::result::Result<ItemOutput, String>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = cfg.generation.concurrency_limit.clamp(1, items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = collector.process(&items[i]);
                if let Err(e) = &r {
                    log::warn!("item {}: {e}", items[i].id);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut set = ScoreSet {
        mode: cfg.mode,
        item_ids: items.iter().map(|i| i.id.clone()).collect(),
        ..Default::default()
    };
    let results = results.into_inner().expect("results lock");
    for (item, r) in items.iter().zip(results) {
        match r.expect("every item processed") {
            Ok(o) => {
                set.scores.extend(o.scores);
                set.labels.extend(o.labels);
                set.exclusions.extend(o.exclusions);
                for (m, reason) in o.unavailable {
                    set.unavailable.entry(m).or_insert(reason);
                }
                for (m, ch) in o.channels {
                    set.channels.entry(m).or_insert(ch);
                }
                for mode in o.p_true_modes {
                    *set.p_true_modes.entry(mode).or_insert(0) += 1;
                }
            }
            Err(error) => set.failed_items.push(FailedItem {
                item_id: item.id.clone(),
                error,
            }),
        }
    }
    set.scores.retain(|s| !set.unavailable.contains_key(&s.method));
    Ok(set)
}

/// Load and optionally subsample the configured dataset.
pub fn load_items(cfg: &RunConfig) -> Result<Vec<McqItem>> {
    let items = load_dataset(&cfg.dataset.path, &cfg.dataset.name).map_err(|e| StudyError::Config(e.to_string()))?;
    match &cfg.dataset.subsample {
        Some(s) => subsample(&items, s.n, s.seed).map_err(|e| StudyError::Config(e.to_string())),
        None => Ok(items),
    }
}

fn open_gateway(cfg: &GenerationConfig, records: &Path, dataset: &str) -> Result<Gateway> {
    let read_only = cfg.backend == crate::gateway::BackendKind::Replay;
    let store = RecordStore::open(records, dataset, &cfg.model, &cfg.digest(), read_only)?;
    Gateway::connect(cfg.clone(), store).map_err(|e| StudyError::Config(e.to_string()))
}

/// Gateways for a run: the generation backend and, in judge mode, the judge.
pub fn open_gateways(cfg: &RunConfig) -> Result<(Gateway, Option<Gateway>)> {
    let gateway = open_gateway(&cfg.generation, &cfg.records.root, &cfg.dataset.name)?;
    let judge = match &cfg.judge {
        Some(j) if cfg.mode == EvalMode::Baseline => {
            Some(open_gateway(j, &cfg.records.root.join("judge"), &cfg.dataset.name)?)
        }
        _ => None,
    };
    Ok((gateway, judge))
}

/// Fill the record store with sampled responses for every item.
pub fn generate_samples(cfg: &RunConfig, items: &[McqItem], gateway: &Gateway) -> Result<usize> {
    let template = cfg.template()?;
    let mut done = 0;
    for item in items {
        let rendered = template.render(item).map_err(|e| StudyError::Config(e.to_string()))?;
        match gateway.sample_responses(&item.id, &rendered.prompt) {
            Ok(_) => done += 1,
            Err(e @ GatewayError::Capability { .. }) => return Err(StudyError::Capability(e.to_string())),
            Err(e) => log::warn!("item {}: {e}", item.id),
        }
    }
    Ok(done)
}

/// Exit status checks shared by every command that scores items.
pub fn check_outcome(cfg: &RunConfig, set: &ScoreSet) -> Result<()> {
    let total = set.item_ids.len();
    let failed = set.failed_items.len();
    if total > 0 && failed as f64 > cfg.max_failed_fraction * total as f64 {
        return Err(StudyError::PartialFailure {
            failed,
            total,
            limit_percent: cfg.max_failed_fraction * 100.0,
        });
    }
    if let Some((m, reason)) = set.unavailable.iter().next() {
        return Err(StudyError::Capability(format!(
            "{} method(s) unavailable, first {m}: {reason}",
            set.unavailable.len()
        )));
    }
    Ok(())
}

/// Score, write `scores.jsonl`/`units.json` and the report files into
/// `out`, then apply the exit-status checks.
pub fn run_with_gateways(
    cfg: &RunConfig,
    items: &[McqItem],
    gateway: &Gateway,
    judge: Option<&Gateway>,
    out: &Path,
) -> Result<(ScoreSet, MetricReport)> {
    let _lock = OutputLock::acquire(out)?;
    let set = collect(cfg, items, gateway, judge)?;
    set.write(out)?;
    let report = evaluate(cfg, &set)?;
    report.write(out)?;
    check_outcome(cfg, &set)?;
    Ok((set, report))
}

/// The full pipeline from a configuration.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<(ScoreSet, MetricReport)> {
    let items = load_items(cfg)?;
    let (gateway, judge) = open_gateways(cfg)?;
    run_with_gateways(cfg, &items, &gateway, judge.as_ref(), out)
}
