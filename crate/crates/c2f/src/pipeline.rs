//! End-to-end orchestration: balance the weak supervision, train the
//! label-conditioned generator, synthesize pseudo-documents per fine label,
//! train the classifier, predict, then replace each class's supervision with
//! its top-scoring predictions and go around again.
//!
//! Every random stage draws from its own seed stream, and per-task seeds are
//! derived from (iteration, label, task index), so results are independent of
//! worker count and stage interleaving. The stage functions are public so the
//! command-line layer can run them one at a time against files and still
//! reproduce `run_c2f` byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    predict, save_nb_checkpoint, train_classifier, ClassifierError, NaiveBayesModel, Prediction,
};
use crate::corpus::{
    CoarseId, Corpus, CorpusError, DocId, FineId, Label, LabelHierarchy, TokenId, Vocabulary,
};
use crate::eval::{entropy_drop_bags, micro_macro_f1, EntropyStats, EvalError};
use crate::langmodel::ckpt::{save_lm_checkpoint, CkptError};
use crate::langmodel::{
    doc_log_likelihood, generate_doc, train, GeneratedDoc, LMConfig, LMError, LMParams,
    TrainingBatchPlan, TrainingTrace,
};
use crate::seeds;
use crate::weaksup::{extract_weak_supervision, stratified_balance, WeakSupError, WeakSupervision};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("pipeline configuration: {0}")]
    BadConfig(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("top-k selection requires balanced weak supervision")]
    UnbalancedInput,
    #[error("gold fine labels are required but absent")]
    NoGoldLabels,
    #[error("predictions cover {got} documents, corpus has {want}")]
    PredictionCoverage { got: usize, want: usize },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    WeakSup(#[from] WeakSupError),
    #[error(transparent)]
    Lm(#[from] LMError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o under {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Joint trains one generator/classifier over the whole hierarchy;
/// independent trains one per coarse class over its children only and
/// concatenates the predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Joint,
    Independent,
}

/// One independent seed stream per random stage. Iteration, scope, and task
/// seeds are derived from these, never drawn sequentially.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSeeds {
    pub balance: u64,
    pub lm_init: u64,
    pub lm_shuffle: u64,
    pub generation: u64,
}

impl StageSeeds {
    /// Spreads one master seed into the four stage streams.
    pub fn from_master(master: u64) -> Self {
        StageSeeds {
            balance: seeds::derive(master, 1),
            lm_init: seeds::derive(master, 2),
            lm_shuffle: seeds::derive(master, 3),
            generation: seeds::derive(master, 4),
        }
    }
}

impl Default for StageSeeds {
    fn default() -> Self {
        StageSeeds::from_master(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub iterations: u32,
    pub mode: Mode,
    pub lm_config: LMConfig,
    /// Pseudo-docs generated per coarse class = factor x its document count,
    /// split equally among its children.
    pub generation_factor: f64,
    pub seeds: StageSeeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            iterations: 2,
            mode: Mode::Joint,
            lm_config: LMConfig::default(),
            generation_factor: 2.0,
            seeds: StageSeeds::default(),
        }
    }
}

fn scope_stream(scope: Option<CoarseId>) -> u64 {
    match scope {
        None => 0,
        Some(c) => 1 + c.idx() as u64,
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.iterations < 1 {
            return Err(PipelineError::BadConfig("iterations must be >= 1".into()));
        }
        if !(self.generation_factor > 0.0 && self.generation_factor.is_finite()) {
            return Err(PipelineError::BadConfig(
                "generation_factor must be a finite positive real".into(),
            ));
        }
        self.lm_config.validate()?;
        Ok(())
    }

    // The seed-derivation contract. Stage commands replaying one iteration
    // against files use these and land on the exact RNG streams of run_c2f.

    pub fn balance_seed(&self, iteration: u32) -> u64 {
        seeds::derive(self.seeds.balance, iteration as u64)
    }

    pub fn lm_init_seed(&self, iteration: u32, scope: Option<CoarseId>) -> u64 {
        seeds::derive(
            seeds::derive(self.seeds.lm_init, iteration as u64),
            scope_stream(scope),
        )
    }

    pub fn lm_shuffle_seed(&self, iteration: u32, scope: Option<CoarseId>) -> u64 {
        seeds::derive(
            seeds::derive(self.seeds.lm_shuffle, iteration as u64),
            scope_stream(scope),
        )
    }

    /// Every pseudo-document is its own task: (iteration, label, index).
    pub fn generation_seed(&self, iteration: u32, fine: FineId, task: usize) -> u64 {
        seeds::derive(
            seeds::derive(
                seeds::derive(self.seeds.generation, iteration as u64),
                fine.0 as u64,
            ),
            task as u64,
        )
    }
}

/// Docs to generate per child of `coarse`: floor(factor * N_c / #children),
/// but at least one each so the classifier always sees every class.
pub fn generation_budget(
    hier: &LabelHierarchy,
    corpus: &Corpus,
    coarse: CoarseId,
    factor: f64,
) -> BTreeMap<FineId, usize> {
    let children = hier.children(coarse);
    let n_c = corpus.coarse_count(coarse) as f64;
    let per = ((factor * n_c / children.len() as f64).floor() as usize).max(1);
    children.iter().map(|&f| (f, per)).collect()
}

/// A fine label whose prediction pool could not fill its previous quota.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Shortfall {
    pub fine: FineId,
    pub missing: usize,
}

/// Replaces each class's supervision with the ids of its top-|W_prev(F_j)|
/// predictions: documents whose argmax is F_j, ranked by masked score
/// descending with ties to the lower doc id. Pools smaller than the quota are
/// kept whole and reported. Output is unbalanced, iteration + 1.
pub fn select_topk(
    predictions: &[Prediction],
    ws_prev: &WeakSupervision,
) -> Result<(WeakSupervision, Vec<Shortfall>), PipelineError> {
    if !ws_prev.balanced {
        return Err(PipelineError::UnbalancedInput);
    }
    let num_fine = ws_prev.assignments().len();
    let mut pools: Vec<Vec<(f64, DocId)>> = vec![Vec::new(); num_fine];
    for p in predictions {
        pools[p.fine.idx()].push((p.score, p.doc));
    }
    let mut assignments = Vec::with_capacity(num_fine);
    let mut shortfalls = Vec::new();
    for (i, mut pool) in pools.into_iter().enumerate() {
        let fine = FineId(i as u32);
        let k = ws_prev.class_size(fine);
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if pool.len() < k {
            shortfalls.push(Shortfall {
                fine,
                missing: k - pool.len(),
            });
        }
        pool.truncate(k);
        let mut ids: Vec<DocId> = pool.into_iter().map(|(_, d)| d).collect();
        ids.sort();
        assignments.push(ids);
    }
    let ws = WeakSupervision::new(assignments, num_fine, ws_prev.iteration + 1, false)?;
    Ok((ws, shortfalls))
}

/// Fraction of weakly assigned documents whose gold fine label matches their
/// assignment; `None` when no assigned document carries a gold label.
pub fn weak_precision(ws: &WeakSupervision, corpus: &Corpus) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, list) in ws.assignments().iter().enumerate() {
        for &d in list {
            if let Some(gold) = corpus.doc(d).gold_fine {
                total += 1;
                hits += usize::from(gold == FineId(i as u32));
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Stage functions

/// The generator/classifier scopes a mode trains: the single whole-hierarchy
/// scope, or one per coarse class.
pub fn scopes_for(mode: Mode, hier: &LabelHierarchy) -> Vec<Option<CoarseId>> {
    match mode {
        Mode::Joint => vec![None],
        Mode::Independent => hier.coarse_ids().map(Some).collect(),
    }
}

/// Name-mention extraction that aborts when every class came up empty,
/// listing all the fine labels that matched nothing.
pub fn initial_weak_supervision(
    corpus: &Corpus,
    hier: &LabelHierarchy,
) -> Result<WeakSupervision, PipelineError> {
    let ws = extract_weak_supervision(corpus, hier)?;
    if ws.is_all_empty() {
        return Err(WeakSupError::AllEmpty(
            hier.fine_ids().map(|f| hier.fine_name(f).to_owned()).collect(),
        )
        .into());
    }
    Ok(ws)
}

/// Stable filename tag for per-scope artifacts: "joint" or the coarse index.
pub fn scope_tag(scope: Option<CoarseId>) -> String {
    match scope {
        None => "joint".to_owned(),
        Some(c) => format!("c{}", c.0),
    }
}

fn scope_name(scope: Option<CoarseId>, hier: &LabelHierarchy) -> String {
    match scope {
        None => "joint".to_owned(),
        Some(c) => hier.coarse_name(c).to_owned(),
    }
}

/// One trained generator and the scope it covers (`None` = whole hierarchy).
pub struct TrainedScope {
    pub scope: Option<CoarseId>,
    pub params: LMParams,
    pub trace: TrainingTrace,
}

/// Trains one generator per scope of `config.mode`. Coarse classes without
/// documents (independent mode only) are skipped and reported separately.
pub fn train_scope_lms(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    config: &PipelineConfig,
    balanced: &WeakSupervision,
    iteration: u32,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<TrainedScope>, Vec<CoarseId>), PipelineError> {
    let lm_cfg = &config.lm_config;
    let trained: Vec<Option<TrainedScope>> = pool.install(|| {
        scopes_for(config.mode, hier)
            .into_par_iter()
            .map(|scope| {
                let plan = TrainingBatchPlan::build(
                    corpus,
                    hier,
                    balanced,
                    scope,
                    config.lm_shuffle_seed(iteration, scope),
                )?;
                if plan.is_empty() {
                    return Ok(None); // coarse class with no documents
                }
                let init =
                    LMParams::init(lm_cfg, &corpus.vocab, hier, config.lm_init_seed(iteration, scope))?;
                let (params, trace) = train(init, lm_cfg, corpus, &plan)?;
                Ok(Some(TrainedScope {
                    scope,
                    params,
                    trace,
                }))
            })
            .collect::<Result<_, PipelineError>>()
    })?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (scope, lm) in scopes_for(config.mode, hier).into_iter().zip(trained) {
        match lm {
            Some(lm) => out.push(lm),
            None => skipped.push(scope.expect("the joint scope is never empty")),
        }
    }
    Ok((out, skipped))
}

/// The generator responsible for a fine label under the given scope set.
fn lm_for<'a>(
    lms: &'a [(Option<CoarseId>, &'a LMParams)],
    hier: &LabelHierarchy,
    f: FineId,
) -> Option<&'a LMParams> {
    lms.iter()
        .find(|(s, _)| s.is_none() || *s == Some(hier.parent(f)))
        .map(|(_, p)| *p)
}

/// Generates every coarse class's budget, one derived seed per document, in
/// deterministic (fine label, task index) order regardless of worker count.
pub fn generate_pseudo_docs(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    config: &PipelineConfig,
    lms: &[(Option<CoarseId>, &LMParams)],
    iteration: u32,
    pool: &rayon::ThreadPool,
) -> Result<Vec<(FineId, GeneratedDoc)>, PipelineError> {
    let mut tasks: Vec<(FineId, u64, &LMParams)> = Vec::new();
    for c in hier.coarse_ids() {
        for (&f, &budget) in &generation_budget(hier, corpus, c, config.generation_factor) {
            let Some(params) = lm_for(lms, hier, f) else {
                continue; // scope skipped upstream
            };
            for j in 0..budget {
                tasks.push((f, config.generation_seed(iteration, f, j), params));
            }
        }
    }
    let generated = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(f, seed, params)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                generate_doc(params, &config.lm_config, &corpus.vocab, f, &mut rng)
                    .map(|g| (f, g))
            })
            .collect::<Result<_, LMError>>()
    })?;
    Ok(generated)
}

/// Trains the per-coarse classifier table: in joint mode every slot holds the
/// same model over all fine labels; in independent mode each slot is trained
/// on its own children's pseudo-docs, `None` where a scope produced nothing.
pub fn train_scope_classifiers(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    mode: Mode,
    pseudo: &[(Vec<TokenId>, FineId)],
) -> Result<Vec<Option<NaiveBayesModel>>, PipelineError> {
    let mut models: Vec<Option<NaiveBayesModel>> = vec![None; hier.num_coarse()];
    match mode {
        Mode::Joint => {
            let model = train_classifier(pseudo, &corpus.vocab, hier, None)?;
            models = vec![Some(model); hier.num_coarse()];
        }
        Mode::Independent => {
            for c in hier.coarse_ids() {
                let scoped: Vec<(Vec<TokenId>, FineId)> = pseudo
                    .iter()
                    .filter(|(_, f)| hier.parent(*f) == c)
                    .cloned()
                    .collect();
                if scoped.is_empty() {
                    continue; // skipped scope: no docs to predict either
                }
                let model =
                    train_classifier(&scoped, &corpus.vocab, hier, Some(hier.children(c)))?;
                models[c.idx()] = Some(model);
            }
        }
    }
    Ok(models)
}

/// Masked prediction for every document, in corpus order.
pub fn predict_all(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    models: &[Option<NaiveBayesModel>],
    pool: &rayon::ThreadPool,
) -> Result<Vec<Prediction>, PipelineError> {
    pool.install(|| {
        corpus
            .docs
            .par_iter()
            .map(|d| {
                let model = models[d.coarse.idx()]
                    .as_ref()
                    .ok_or(ClassifierError::UntrainedMask)?;
                Ok(predict(model, d, hier)?)
            })
            .collect::<Result<_, PipelineError>>()
    })
}

// ---------------------------------------------------------------------------
// File formats shared by run_c2f and the stage commands

const PROMPT_FORMAT: &str = "<label> <labelsep> <text>";

#[derive(Serialize)]
struct PseudoRecordOut<'a> {
    text: String,
    fine: &'a str,
    prompt_format: &'static str,
}

#[derive(Deserialize)]
struct PseudoRecordIn {
    text: String,
    fine: String,
}

pub fn write_pseudo_jsonl(
    path: &Path,
    generated: &[(FineId, GeneratedDoc)],
    hier: &LabelHierarchy,
    vocab: &Vocabulary,
) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    for (f, g) in generated {
        let rec = PseudoRecordOut {
            text: vocab.detokenize(&g.tokens),
            fine: hier.fine_name(*f),
            prompt_format: PROMPT_FORMAT,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| io_at(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// Re-tokenizes a pseudo-corpus under the frozen vocabulary. Generated text
/// is made of vocabulary words, so this reproduces the generator's tokens.
pub fn read_pseudo_jsonl(
    path: &Path,
    hier: &LabelHierarchy,
    vocab: &Vocabulary,
) -> Result<Vec<(Vec<TokenId>, FineId)>, PipelineError> {
    let r = BufReader::new(File::open(path).map_err(io_at(path))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| PipelineError::Malformed {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let rec: PseudoRecordIn =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let fine = hier
            .fine_by_name(&rec.fine)
            .ok_or_else(|| malformed(format!("unknown fine label {:?}", rec.fine)))?;
        out.push((vocab.tokenize_frozen(&rec.text), fine));
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionRecordOut<'a> {
    id: u32,
    fine: &'a str,
    score: f64,
}

#[derive(Deserialize)]
struct PredictionRecordIn {
    id: u32,
    fine: String,
    score: f64,
}

pub fn write_predictions_jsonl(
    path: &Path,
    predictions: &[Prediction],
    hier: &LabelHierarchy,
) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_at(path))?);
    for pred in predictions {
        let rec = PredictionRecordOut {
            id: pred.doc.0,
            fine: hier.fine_name(pred.fine),
            score: pred.score,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| io_at(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// Reads predictions back for scoring; per-class score vectors are not stored.
pub fn read_predictions_jsonl(
    path: &Path,
    corpus: &Corpus,
    hier: &LabelHierarchy,
) -> Result<Vec<Prediction>, PipelineError> {
    let r = BufReader::new(File::open(path).map_err(io_at(path))?);
    let mut out = Vec::new();
    let mut seen = vec![false; corpus.len()];
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| PipelineError::Malformed {
            path: path.to_owned(),
            line: i + 1,
            msg,
        };
        let rec: PredictionRecordIn =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if rec.id as usize >= corpus.len() {
            return Err(malformed(format!("doc id {} out of range", rec.id)));
        }
        if std::mem::replace(&mut seen[rec.id as usize], true) {
            return Err(malformed(format!("duplicate prediction for doc id {}", rec.id)));
        }
        let fine = hier
            .fine_by_name(&rec.fine)
            .ok_or_else(|| malformed(format!("unknown fine label {:?}", rec.fine)))?;
        out.push(Prediction {
            doc: DocId(rec.id),
            fine,
            score: rec.score,
            scores: Vec::new(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The full loop

/// One loop pass. `iteration` counts from 0 (the pass fed by the initial
/// name-mention supervision).
#[derive(Clone, Debug, Serialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub ws_sizes: BTreeMap<String, usize>,
    pub ws_sizes_balanced: BTreeMap<String, usize>,
    pub empty_classes: Vec<String>,
    pub ws_precision: Option<f64>,
    /// Coarse classes with no documents (independent mode trains nothing there).
    pub skipped_scopes: Vec<String>,
    /// Objective trace per trained scope, one value per epoch.
    pub objective_trace: BTreeMap<String, Vec<f64>>,
    /// Fraction of balanced weak-supervision docs whose fine-conditioned
    /// log-likelihood beats the coarse one by at least epsilon.
    pub margin_fraction: f64,
    pub generated_counts: BTreeMap<String, usize>,
    pub degenerate_generated: usize,
    pub weak_entropy: EntropyStats,
    /// Absent when every generated token was filtered as a special.
    pub generated_entropy: Option<EntropyStats>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Quota gaps from the replacement step (absent on the final pass).
    pub shortfalls: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub mode: Mode,
    pub num_docs: usize,
    pub num_with_gold: usize,
    pub iterations: Vec<IterationReport>,
    /// Wall-clock (stage name, seconds); kept out of report.json so reruns
    /// stay byte-identical — written to timing.log instead.
    #[serde(skip)]
    pub stage_seconds: Vec<(String, f64)>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: PipelineReport,
    /// Final-iteration predictions, one per document in corpus order.
    pub predictions: Vec<Prediction>,
}

/// Runs `config.iterations` passes of {balance, train generator, generate,
/// train classifier, predict, replace supervision}. `workers` = 0 uses one
/// thread per core. With `out_dir` set, writes report.json, predictions.jsonl,
/// per-iteration checkpoints, the pseudo corpora, and timing.log.
pub fn run_c2f(
    corpus: &Corpus,
    hier: &LabelHierarchy,
    config: &PipelineConfig,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::BadConfig(format!("worker pool: {e}")))?;
    if let Some(dir) = out_dir {
        for sub in ["checkpoints", "pseudo"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_at(&p))?;
        }
    }
    let lm_cfg = &config.lm_config;
    let vocab = &corpus.vocab;
    let num_with_gold = corpus.docs.iter().filter(|d| d.gold_fine.is_some()).count();
    let scored = num_with_gold == corpus.len();

    let mut ws = initial_weak_supervision(corpus, hier)?;

    let mut stage_seconds = Vec::new();
    let mut reports = Vec::with_capacity(config.iterations as usize);
    let mut final_predictions = Vec::new();

    for it in 0..config.iterations {
        let mut mark = Instant::now();
        let lap = |name: &str, mark: &mut Instant, out: &mut Vec<(String, f64)>| {
            out.push((format!("iter{it}/{name}"), mark.elapsed().as_secs_f64()));
            *mark = Instant::now();
        };

        let ws_sizes = sizes_by_name(&ws, hier);
        let ws_precision = weak_precision(&ws, corpus);
        let (balanced, empty) = stratified_balance(&ws, config.balance_seed(it))?;
        let weak_entropy = ws_entropy(&balanced, corpus)?;
        lap("balance", &mut mark, &mut stage_seconds);

        let (trained, skipped) = train_scope_lms(corpus, hier, config, &balanced, it, &pool)?;
        let skipped_scopes: Vec<String> =
            skipped.iter().map(|&c| hier.coarse_name(c).to_owned()).collect();
        let objective_trace: BTreeMap<String, Vec<f64>> = trained
            .iter()
            .map(|lm| (scope_name(lm.scope, hier), lm.trace.objective_per_epoch.clone()))
            .collect();
        let lm_view: Vec<(Option<CoarseId>, &LMParams)> =
            trained.iter().map(|t| (t.scope, &t.params)).collect();
        let margin_fraction = {
            let (mut hit, mut total) = (0usize, 0usize);
            for (i, list) in balanced.assignments().iter().enumerate() {
                let f = FineId(i as u32);
                let Some(params) = lm_for(&lm_view, hier, f) else {
                    continue;
                };
                for &d in list {
                    let doc = corpus.doc(d);
                    let ll_f = doc_log_likelihood(params, &doc.tokens, Label::Fine(f))?;
                    let ll_c =
                        doc_log_likelihood(params, &doc.tokens, Label::Coarse(doc.coarse))?;
                    total += 1;
                    hit += usize::from(ll_f - ll_c >= lm_cfg.epsilon);
                }
            }
            if total == 0 {
                0.0
            } else {
                hit as f64 / total as f64
            }
        };
        if let Some(dir) = out_dir {
            for lm in &trained {
                let p = dir
                    .join("checkpoints")
                    .join(format!("iter{it}_{}.lm.ckpt", scope_tag(lm.scope)));
                save_lm_checkpoint(&p, &lm.params, lm_cfg, vocab)?;
            }
        }
        lap("train_lm", &mut mark, &mut stage_seconds);

        let generated = generate_pseudo_docs(corpus, hier, config, &lm_view, it, &pool)?;
        let mut generated_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut degenerate_generated = 0usize;
        for (f, g) in &generated {
            *generated_counts.entry(hier.fine_name(*f).to_owned()).or_insert(0) += 1;
            degenerate_generated += usize::from(g.degenerate);
        }
        if let Some(dir) = out_dir {
            let p = dir.join("pseudo").join(format!("iter{it}.jsonl"));
            write_pseudo_jsonl(&p, &generated, hier, vocab)?;
        }
        let generated_entropy = {
            let all: Vec<&[TokenId]> = generated.iter().map(|(_, g)| g.tokens.as_slice()).collect();
            let mut cells: BTreeMap<FineId, Vec<&[TokenId]>> = BTreeMap::new();
            for (f, g) in &generated {
                cells.entry(*f).or_default().push(g.tokens.as_slice());
            }
            let cells: Vec<_> = cells.into_values().collect();
            match entropy_drop_bags(&all, &cells, vocab) {
                Ok(stats) => Some(stats),
                Err(EvalError::EmptySet) => None,
                Err(e) => return Err(e.into()),
            }
        };
        lap("generate", &mut mark, &mut stage_seconds);

        let pseudo: Vec<(Vec<TokenId>, FineId)> = generated
            .iter()
            .map(|(f, g)| (g.tokens.clone(), *f))
            .collect();
        let models = train_scope_classifiers(corpus, hier, config.mode, &pseudo)?;
        if let Some(dir) = out_dir {
            for (scope, model) in scopes_for(config.mode, hier).iter().zip(&models) {
                // joint mode stores one copy of its shared model
                let Some(model) = model else { continue };
                let p = dir
                    .join("checkpoints")
                    .join(format!("iter{it}_{}.nb.ckpt", scope_tag(*scope)));
                save_nb_checkpoint(&p, model)?;
            }
        }
        lap("train_clf", &mut mark, &mut stage_seconds);

        let predictions = predict_all(corpus, hier, &models, &pool)?;
        let (micro_f1, macro_f1) = if scored {
            let pred: Vec<FineId> = predictions.iter().map(|p| p.fine).collect();
            let gold: Vec<FineId> = corpus.docs.iter().map(|d| d.gold_fine.unwrap()).collect();
            let scores = micro_macro_f1(&pred, &gold, hier.num_fine())?;
            (Some(scores.micro_f1), Some(scores.macro_f1))
        } else {
            (None, None)
        };
        lap("predict", &mut mark, &mut stage_seconds);

        let mut shortfalls = BTreeMap::new();
        if it + 1 < config.iterations {
            let (next, falls) = select_topk(&predictions, &balanced)?;
            for s in falls {
                shortfalls.insert(hier.fine_name(s.fine).to_owned(), s.missing);
            }
            ws = next;
            lap("select_topk", &mut mark, &mut stage_seconds);
        }

        reports.push(IterationReport {
            iteration: it,
            ws_sizes,
            ws_sizes_balanced: sizes_by_name(&balanced, hier),
            empty_classes: empty.iter().map(|&f| hier.fine_name(f).to_owned()).collect(),
            ws_precision,
            skipped_scopes,
            objective_trace,
            margin_fraction,
            generated_counts,
            degenerate_generated,
            weak_entropy,
            generated_entropy,
            micro_f1,
            macro_f1,
            shortfalls,
        });
        final_predictions = predictions;
    }

    let report = PipelineReport {
        mode: config.mode,
        num_docs: corpus.len(),
        num_with_gold,
        iterations: reports,
        stage_seconds,
    };
    if let Some(dir) = out_dir {
        write_artifacts(dir, &report, &final_predictions, hier)?;
    }
    Ok(RunOutcome {
        report,
        predictions: final_predictions,
    })
}

fn sizes_by_name(ws: &WeakSupervision, hier: &LabelHierarchy) -> BTreeMap<String, usize> {
    ws.assignments()
        .iter()
        .enumerate()
        .map(|(i, l)| (hier.fine_name(FineId(i as u32)).to_owned(), l.len()))
        .collect()
}

fn ws_entropy(ws: &WeakSupervision, corpus: &Corpus) -> Result<EntropyStats, PipelineError> {
    let cells: Vec<Vec<&[TokenId]>> = ws
        .assignments()
        .iter()
        .map(|l| l.iter().map(|&d| corpus.doc(d).tokens.as_slice()).collect())
        .collect();
    let all: Vec<&[TokenId]> = cells.iter().flatten().copied().collect();
    Ok(entropy_drop_bags(&all, &cells, &corpus.vocab)?)
}

/// report.json and predictions.jsonl are byte-stable under fixed seeds;
/// wall-clock goes to timing.log only.
fn write_artifacts(
    dir: &Path,
    report: &PipelineReport,
    predictions: &[Prediction],
    hier: &LabelHierarchy,
) -> Result<(), PipelineError> {
    let p = dir.join("report.json");
    let mut w = BufWriter::new(File::create(&p).map_err(io_at(&p))?);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| io_at(&p)(e.into()))?;
    w.write_all(b"\n").map_err(io_at(&p))?;
    drop(w);

    write_predictions_jsonl(&dir.join("predictions.jsonl"), predictions, hier)?;

    let p = dir.join("timing.log");
    let mut w = BufWriter::new(File::create(&p).map_err(io_at(&p))?);
    for (stage, secs) in &report.stage_seconds {
        writeln!(w, "{stage}\t{secs:.3}s").map_err(io_at(&p))?;
    }
    Ok(())
}
