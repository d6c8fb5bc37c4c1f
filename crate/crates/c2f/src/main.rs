//! Command-line front end. `run` drives the whole loop; the stage commands
//! (`weaksup`, `train-lm`, `generate`, `train-clf`) replay one iteration
//! against files and, under the same configuration, reproduce `run`'s
//! iteration-0 artifacts byte for byte.
//!
//! Failures print a single machine-readable line to stderr:
//! `{"kind": ..., "stage": ..., "message": ...}`. Exit code 1 means bad
//! input or configuration; 2 means the numerics aborted (non-finite
//! gradients or a degenerate sampling distribution).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use c2f::classifier::{save_nb_checkpoint, ClassifierError};
use c2f::corpus::synth::{synth_corpus, SynthSpec};
use c2f::corpus::{
    load_corpus, save_corpus, CoarseId, Corpus, CorpusError, DocId, Document, FineId,
    LabelHierarchy,
};
use c2f::eval::{
    default_epsilon_grid, entropy_drop, epsilon_sweep, micro_macro_f1, paired_t_test, sig6,
};
use c2f::langmodel::ckpt::{load_lm_checkpoint, save_lm_checkpoint, CkptError};
use c2f::langmodel::{LMError, LMParams};
use c2f::pipeline::{
    generate_pseudo_docs, initial_weak_supervision, predict_all, read_predictions_jsonl,
    read_pseudo_jsonl, run_c2f, scope_tag, scopes_for, train_scope_classifiers, train_scope_lms,
    write_predictions_jsonl, write_pseudo_jsonl, Mode, PipelineConfig, PipelineError, StageSeeds,
};
use c2f::weaksup::{stratified_balance, WeakSupError, WeakSupervision};

#[derive(Parser)]
#[command(name = "c2f", version, about = "Coarse-to-fine text classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON-lines corpus: {"text", "coarse", "fine_gold"?}
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Hierarchy manifest: {"coarse label": ["fine label", ...], ...}
    #[arg(long)]
    hierarchy: Option<PathBuf>,
    /// Pipeline configuration JSON; the flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, env = "C2F_OUT")]
    out: Option<PathBuf>,
    /// Master seed, spread into the per-stage streams
    #[arg(long)]
    seed: Option<u64>,
    /// Number of loop passes
    #[arg(long)]
    iterations: Option<u32>,
    /// joint | independent
    #[arg(long)]
    mode: Option<String>,
    /// Margin of the coarse-vs-fine likelihood hinge
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight of the hinge in the training objective
    #[arg(long)]
    lambda: Option<f64>,
    /// Nucleus sampling mass
    #[arg(long)]
    top_p: Option<f64>,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Progress notes on stderr
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and hierarchy from a spec
    Synth {
        /// Synthesis spec JSON
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Extract and balance the name-mention weak supervision
    Weaksup {
        #[command(flatten)]
        common: Common,
    },
    /// Train the label-conditioned generator(s) on balanced supervision
    TrainLm {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the pseudo-corpus from trained generator checkpoints
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier on the pseudo-corpus and predict every document
    TrainClf {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full loop end to end
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Score prediction files against gold labels
    Eval {
        /// predictions.jsonl to score
        predictions: PathBuf,
        /// Second predictions file: adds a paired t-test on per-document accuracy
        baseline: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Word-entropy drop of a label partition over the corpus
    Entropy {
        /// Weak-supervision JSON to use as the partition (default: gold labels)
        #[arg(long)]
        weaksup: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rerun the pipeline across a margin grid and tabulate score stability
    Sweep {
        /// Comma-separated margin values (default: ln 1 through ln 10)
        #[arg(long)]
        epsilons: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

impl Cmd {
    fn stage(&self) -> &'static str {
        match self {
            Cmd::Synth { .. } => "synth",
            Cmd::Weaksup { .. } => "weaksup",
            Cmd::TrainLm { .. } => "train-lm",
            Cmd::Generate { .. } => "generate",
            Cmd::TrainClf { .. } => "train-clf",
            Cmd::Run { .. } => "run",
            Cmd::Eval { .. } => "eval",
            Cmd::Entropy { .. } => "entropy",
            Cmd::Sweep { .. } => "sweep",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("required input {} does not exist", .0.display())]
    MissingInput(PathBuf),
    #[error("missing required flag --{0}")]
    MissingFlag(&'static str),
    #[error("{0}")]
    BadFlag(String),
    #[error("{0}")]
    BadConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    WeakSup(#[from] WeakSupError),
    #[error(transparent)]
    Ckpt(#[from] CkptError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Lm(#[from] LMError),
    #[error(transparent)]
    Eval(#[from] c2f::eval::EvalError),
    #[error("i/o under {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn lm_kind(e: &LMError) -> (&'static str, u8) {
    match e {
        LMError::NumericalInstability { .. } | LMError::NonFiniteGradient { .. } => {
            ("NumericalInstability", 2)
        }
        LMError::DegenerateDistribution => ("DegenerateDistribution", 2),
        LMError::BadConfig(_) => ("BadConfig", 1),
        _ => ("LanguageModel", 1),
    }
}

fn weaksup_kind(e: &WeakSupError) -> (&'static str, u8) {
    match e {
        WeakSupError::AllEmpty(_) => ("AllEmptyWeakSupervision", 1),
        _ => ("WeakSupervision", 1),
    }
}

fn pipeline_kind(e: &PipelineError) -> (&'static str, u8) {
    match e {
        PipelineError::BadConfig(_) => ("BadConfig", 1),
        PipelineError::EmptyCorpus => ("EmptyCorpus", 1),
        PipelineError::UnbalancedInput => ("UnbalancedInput", 1),
        PipelineError::NoGoldLabels => ("NoGoldLabels", 1),
        PipelineError::PredictionCoverage { .. } => ("PredictionCoverage", 1),
        PipelineError::Malformed { .. } => ("MalformedInput", 1),
        PipelineError::Corpus(_) => ("BadCorpus", 1),
        PipelineError::WeakSup(w) => weaksup_kind(w),
        PipelineError::Lm(l) => lm_kind(l),
        PipelineError::Classifier(_) => ("Classifier", 1),
        PipelineError::Ckpt(_) => ("BadCheckpoint", 1),
        PipelineError::Eval(_) => ("Eval", 1),
        PipelineError::Io { .. } => ("Io", 1),
    }
}

fn kind_and_code(e: &CliError) -> (&'static str, u8) {
    match e {
        CliError::MissingInput(_) => ("MissingInput", 1),
        CliError::MissingFlag(_) | CliError::BadFlag(_) => ("BadFlag", 1),
        CliError::BadConfig(_) => ("BadConfig", 1),
        CliError::Pipeline(p) => pipeline_kind(p),
        CliError::Corpus(_) => ("BadCorpus", 1),
        CliError::WeakSup(w) => weaksup_kind(w),
        CliError::Ckpt(_) => ("BadCheckpoint", 1),
        CliError::Classifier(_) => ("Classifier", 1),
        CliError::Lm(l) => lm_kind(l),
        CliError::Eval(_) => ("Eval", 1),
        CliError::Io { .. } => ("Io", 1),
    }
}

fn main() -> ExitCode {
    // clap's own usage failures exit 2 by default, which this interface
    // reserves for numerical aborts; fold them into the validation path
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if e.use_stderr() => {
            fail("cli", "BadFlag", &e.to_string());
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version; ignore a closed pipe
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            fail("cli", "BadFlag", &e.to_string());
            return ExitCode::from(1);
        }
    };
    let stage = cli.cmd.stage();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = kind_and_code(&e);
            fail(stage, kind, &e.to_string());
            ExitCode::from(code)
        }
    }
}

fn fail(stage: &str, kind: &str, message: &str) {
    let line = serde_json::json!({
        "kind": kind,
        "stage": stage,
        "message": message,
    });
    eprintln!("{line}");
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Synth { spec, common } => cmd_synth(&spec, &common),
        Cmd::Weaksup { common } => cmd_weaksup(&common),
        Cmd::TrainLm { common } => cmd_train_lm(&common),
        Cmd::Generate { common } => cmd_generate(&common),
        Cmd::TrainClf { common } => cmd_train_clf(&common),
        Cmd::Run { common } => cmd_run(&common),
        Cmd::Eval {
            predictions,
            baseline,
            common,
        } => cmd_eval(&predictions, baseline.as_deref(), &common),
        Cmd::Entropy { weaksup, common } => cmd_entropy(weaksup.as_deref(), &common),
        Cmd::Sweep { epsilons, common } => cmd_sweep(epsilons.as_deref(), &common),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path.to_owned()))
    }
}

fn required<'a>(opt: &'a Option<PathBuf>, flag: &'static str) -> Result<&'a Path, CliError> {
    existing(opt.as_deref().ok_or(CliError::MissingFlag(flag))?)
}

fn out_dir(c: &Common) -> Result<&Path, CliError> {
    let dir = c.out.as_deref().ok_or(CliError::MissingFlag("out"))?;
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })?;
    Ok(dir)
}

fn load_inputs(c: &Common) -> Result<(LabelHierarchy, Corpus), CliError> {
    let hier = LabelHierarchy::load(required(&c.hierarchy, "hierarchy")?)?;
    let corpus = load_corpus(required(&c.corpus, "corpus")?, &hier)?;
    Ok((hier, corpus))
}

/// Config file first, then flag overrides, then validation.
fn effective_config(c: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &c.config {
        None => PipelineConfig::default(),
        Some(p) => {
            let p = existing(p)?;
            let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_owned(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::BadConfig(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(master) = c.seed {
        cfg.seeds = StageSeeds::from_master(master);
    }
    if let Some(n) = c.iterations {
        cfg.iterations = n;
    }
    if let Some(m) = &c.mode {
        cfg.mode = match m.as_str() {
            "joint" => Mode::Joint,
            "independent" => Mode::Independent,
            other => {
                return Err(CliError::BadFlag(format!(
                    "--mode must be joint or independent, got {other:?}"
                )))
            }
        };
    }
    if let Some(eps) = c.epsilon {
        cfg.lm_config.epsilon = eps;
    }
    if let Some(lam) = c.lambda {
        cfg.lm_config.lambda = lam;
    }
    if let Some(p) = c.top_p {
        cfg.lm_config.top_p = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn make_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::BadFlag(format!("worker pool: {e}")))
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    fs::write(&path, bytes).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn note(c: &Common, msg: impl FnOnce() -> String) {
    if c.verbose {
        eprintln!("{}", msg());
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_synth(spec_path: &Path, common: &Common) -> Result<(), CliError> {
    let spec = SynthSpec::load(existing(spec_path)?)?;
    let corpus = synth_corpus(&spec, common.seed.unwrap_or(0))?;
    let hier = spec.hierarchy();
    let dir = out_dir(common)?;

    let path = dir.join("corpus.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?);
    save_corpus(&corpus, hier, &mut w).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    w.flush().map_err(|source| CliError::Io { path, source })?;

    let mut manifest = serde_json::to_vec_pretty(&hier.to_manifest_value()).expect("json");
    manifest.push(b'\n');
    write_out(dir, "hierarchy.json", &manifest)?;
    note(common, || {
        format!("synthesized {} documents, {} fine labels", corpus.len(), hier.num_fine())
    });
    Ok(())
}

fn cmd_weaksup(common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let ws = initial_weak_supervision(&corpus, &hier)?;
    ws.write(&hier, &dir.join("weaksup_raw.json"))?;
    let (balanced, empty) = stratified_balance(&ws, cfg.balance_seed(0))?;
    balanced.write(&hier, &dir.join("weaksup.json"))?;
    note(common, || {
        format!(
            "extracted {} weakly labeled docs, balanced to {} per class ({} empty classes)",
            ws.total(),
            balanced.class_size(FineId(0)),
            empty.len(),
        )
    });
    Ok(())
}

fn cmd_train_lm(common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let balanced = WeakSupervision::read(existing(&dir.join("weaksup.json"))?, &hier)?;
    balanced.validate_against(&corpus, &hier)?;
    let pool = make_pool(common.workers)?;
    let (trained, skipped) = train_scope_lms(&corpus, &hier, &cfg, &balanced, 0, &pool)?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|source| CliError::Io {
        path: ckpt_dir.clone(),
        source,
    })?;
    for lm in &trained {
        let path = ckpt_dir.join(format!("iter0_{}.lm.ckpt", scope_tag(lm.scope)));
        save_lm_checkpoint(&path, &lm.params, &cfg.lm_config, &corpus.vocab)?;
        note(common, || {
            format!(
                "{}: objective per epoch {:?}",
                path.display(),
                lm.trace.objective_per_epoch
            )
        });
    }
    for c in skipped {
        note(common, || {
            format!("scope {:?} has no documents; skipped", hier.coarse_name(c))
        });
    }
    Ok(())
}

fn cmd_generate(common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let mut loaded: Vec<(Option<CoarseId>, LMParams)> = Vec::new();
    for scope in scopes_for(cfg.mode, &hier) {
        if let Some(c) = scope {
            if corpus.coarse_count(c) == 0 {
                continue; // skipped at training time too
            }
        }
        let path = dir
            .join("checkpoints")
            .join(format!("iter0_{}.lm.ckpt", scope_tag(scope)));
        let (params, _stored_cfg) = load_lm_checkpoint(existing(&path)?, &corpus.vocab)?;
        // sampling knobs may be overridden; the architecture may not
        if params.context_size != cfg.lm_config.context_size
            || params.embed_dim != cfg.lm_config.embed_dim
            || params.hidden_dim != cfg.lm_config.hidden_dim
            || params.label_embed_dim != cfg.lm_config.label_embed_dim
        {
            return Err(CliError::BadConfig(format!(
                "{}: checkpoint architecture disagrees with the configuration",
                path.display()
            )));
        }
        loaded.push((scope, params));
    }
    let view: Vec<(Option<CoarseId>, &LMParams)> =
        loaded.iter().map(|(s, p)| (*s, p)).collect();
    let pool = make_pool(common.workers)?;
    let generated = generate_pseudo_docs(&corpus, &hier, &cfg, &view, 0, &pool)?;
    let pseudo_dir = dir.join("pseudo");
    fs::create_dir_all(&pseudo_dir).map_err(|source| CliError::Io {
        path: pseudo_dir.clone(),
        source,
    })?;
    write_pseudo_jsonl(&pseudo_dir.join("iter0.jsonl"), &generated, &hier, &corpus.vocab)?;
    note(common, || {
        let degenerate = generated.iter().filter(|(_, g)| g.degenerate).count();
        format!("generated {} pseudo-docs ({degenerate} degenerate)", generated.len())
    });
    Ok(())
}

fn cmd_train_clf(common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let pseudo = read_pseudo_jsonl(existing(&dir.join("pseudo/iter0.jsonl"))?, &hier, &corpus.vocab)?;
    let models = train_scope_classifiers(&corpus, &hier, cfg.mode, &pseudo)?;
    for (scope, model) in scopes_for(cfg.mode, &hier).iter().zip(&models) {
        let Some(model) = model else { continue };
        let path = dir
            .join("checkpoints")
            .join(format!("iter0_{}.nb.ckpt", scope_tag(*scope)));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_owned(),
                source,
            })?;
        }
        save_nb_checkpoint(&path, model)?;
    }
    let pool = make_pool(common.workers)?;
    let predictions = predict_all(&corpus, &hier, &models, &pool)?;
    write_predictions_jsonl(&dir.join("predictions.jsonl"), &predictions, &hier)?;
    note(common, || format!("predicted {} documents", predictions.len()));
    Ok(())
}

fn cmd_run(common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let out = run_c2f(&corpus, &hier, &cfg, common.workers, Some(dir))?;
    let last = out.report.iterations.last().expect("iterations >= 1");
    let summary = serde_json::json!({
        "iterations": out.report.iterations.len(),
        "num_docs": out.report.num_docs,
        "micro_f1": last.micro_f1,
        "macro_f1": last.macro_f1,
    });
    println!("{summary}");
    note(common, || {
        out.report
            .stage_seconds
            .iter()
            .map(|(s, t)| format!("{s}\t{t:.3}s"))
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(())
}

/// Per-document accuracy indicators plus the pooled scores for one file.
fn score_file(
    path: &Path,
    corpus: &Corpus,
    hier: &LabelHierarchy,
    gold: &[FineId],
) -> Result<(serde_json::Value, Vec<f64>), CliError> {
    let preds = read_predictions_jsonl(existing(path)?, corpus, hier)?;
    if preds.len() != corpus.len() {
        return Err(PipelineError::PredictionCoverage {
            got: preds.len(),
            want: corpus.len(),
        }
        .into());
    }
    let mut by_doc = vec![FineId(0); corpus.len()];
    for p in &preds {
        by_doc[p.doc.idx()] = p.fine;
    }
    let scores = micro_macro_f1(&by_doc, gold, hier.num_fine())?;
    let indicators: Vec<f64> = by_doc
        .iter()
        .zip(gold)
        .map(|(p, g)| f64::from(u8::from(p == g)))
        .collect();
    let value = serde_json::json!({
        "path": path.display().to_string(),
        "micro_f1": scores.micro_f1,
        "macro_f1": scores.macro_f1,
        "per_class_f1": scores.per_class,
    });
    Ok((value, indicators))
}

fn cmd_eval(
    predictions: &Path,
    baseline: Option<&Path>,
    common: &Common,
) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let gold: Vec<FineId> = corpus
        .docs
        .iter()
        .map(|d| d.gold_fine.ok_or(PipelineError::NoGoldLabels))
        .collect::<Result<_, _>>()?;
    let (main_value, main_ind) = score_file(predictions, &corpus, &hier, &gold)?;
    let mut report = serde_json::json!({ "predictions": main_value });
    if let Some(base) = baseline {
        let (base_value, base_ind) = score_file(base, &corpus, &hier, &gold)?;
        let t = paired_t_test(&main_ind, &base_ind)?;
        report["baseline"] = base_value;
        report["t_test"] = serde_json::to_value(&t).expect("json");
    }
    let mut line = serde_json::to_string(&report).expect("json");
    line.push('\n');
    print!("{line}");
    if common.out.is_some() {
        let dir = out_dir(common)?;
        write_out(dir, "eval.json", line.as_bytes())?;
    }
    Ok(())
}

fn cmd_entropy(weaksup: Option<&Path>, common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let stats = match weaksup {
        Some(path) => {
            let ws = WeakSupervision::read(existing(path)?, &hier)?;
            ws.validate_against(&corpus, &hier)?;
            let partition: BTreeMap<FineId, Vec<DocId>> = ws
                .assignments()
                .iter()
                .enumerate()
                .map(|(i, ids)| (FineId(i as u32), ids.clone()))
                .collect();
            let docs: Vec<&Document> = partition
                .values()
                .flatten()
                .map(|&d| corpus.doc(d))
                .collect();
            entropy_drop(&docs, &partition, &corpus.vocab)?
        }
        None => {
            let mut partition: BTreeMap<FineId, Vec<DocId>> = BTreeMap::new();
            for d in &corpus.docs {
                let gold = d.gold_fine.ok_or(PipelineError::NoGoldLabels)?;
                partition.entry(gold).or_default().push(d.id);
            }
            let docs: Vec<&Document> = corpus.docs.iter().collect();
            entropy_drop(&docs, &partition, &corpus.vocab)?
        }
    };
    let mut line = serde_json::to_string(&stats).expect("json");
    line.push('\n');
    print!("{line}");
    if common.out.is_some() {
        let dir = out_dir(common)?;
        write_out(dir, "entropy.json", line.as_bytes())?;
    }
    Ok(())
}

fn cmd_sweep(epsilons: Option<&str>, common: &Common) -> Result<(), CliError> {
    let (hier, corpus) = load_inputs(common)?;
    let cfg = effective_config(common)?;
    let dir = out_dir(common)?;
    let grid: Vec<f64> = match epsilons {
        None => default_epsilon_grid(),
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::BadFlag(format!("--epsilons {v:?}: {e}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let table = epsilon_sweep(&corpus, &hier, &cfg, &grid, common.workers)?;
    write_out(dir, "sweep.csv", table.to_csv().as_bytes())?;
    for row in &table.rows {
        note(common, || {
            format!(
                "epsilon {} -> micro {} macro {}",
                sig6(row.epsilon),
                sig6(row.micro_f1),
                sig6(row.macro_f1)
            )
        });
    }
    let summary = serde_json::json!({
        "micro_f1_std": table.micro_f1_std,
        "macro_f1_std": table.macro_f1_std,
    });
    println!("{summary}");
    Ok(())
}
