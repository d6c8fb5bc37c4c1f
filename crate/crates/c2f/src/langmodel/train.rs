//! Stochastic gradient ascent over per-document items in shuffled order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CoarseId, Corpus, DocId, FineId, Label, LabelHierarchy};
use crate::seeds;
use crate::weaksup::WeakSupervision;

use super::grad::{accumulate_fine_item, accumulate_ll, LMGradient};
use super::{doc_log_likelihood, LMConfig, LMError, LMParams};

/// The two training streams: every document conditioned on its coarse label,
/// plus each weakly supervised document conditioned on its fine label.
#[derive(Clone, Debug)]
pub struct TrainingBatchPlan {
    pub coarse_stream: Vec<(DocId, CoarseId)>,
    pub fine_stream: Vec<(DocId, FineId)>,
    pub shuffle_seed: u64,
}

impl TrainingBatchPlan {
    /// `scope` restricts both streams to one coarse class and its children
    /// (independent mode); `None` covers the whole corpus.
    pub fn build(
        corpus: &Corpus,
        hier: &LabelHierarchy,
        ws: &WeakSupervision,
        scope: Option<CoarseId>,
        shuffle_seed: u64,
    ) -> Result<TrainingBatchPlan, LMError> {
        if !ws.balanced {
            return Err(LMError::UnbalancedWeakSupervision);
        }
        ws.validate_against(corpus, hier)?;
        let in_scope = |c: CoarseId| scope.map_or(true, |s| s == c);
        let coarse_stream = corpus
            .docs
            .iter()
            .filter(|d| in_scope(d.coarse))
            .map(|d| (d.id, d.coarse))
            .collect();
        let fine_stream = hier
            .fine_ids()
            .filter(|&f| in_scope(hier.parent(f)))
            .flat_map(|f| ws.class(f).iter().map(move |&d| (d, f)))
            .collect();
        Ok(TrainingBatchPlan {
            coarse_stream,
            fine_stream,
            shuffle_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.coarse_stream.len() + self.fine_stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct TrainingTrace {
    /// Full objective over the plan's streams after each epoch.
    pub objective_per_epoch: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Item {
    Coarse(DocId, CoarseId),
    Fine(DocId, FineId),
}

fn promote(e: LMError, epoch: usize, step: usize) -> LMError {
    match e {
        LMError::NonFiniteGradient { block } => {
            LMError::NumericalInstability { epoch, step, block }
        }
        other => other,
    }
}

/// Objective restricted to the plan's streams (forward passes only).
pub(crate) fn objective_of_plan(
    params: &LMParams,
    cfg: &LMConfig,
    corpus: &Corpus,
    plan: &TrainingBatchPlan,
) -> Result<f64, LMError> {
    let mut obj = 0.0;
    for &(d, c) in &plan.coarse_stream {
        obj += doc_log_likelihood(params, &corpus.doc(d).tokens, Label::Coarse(c))?;
    }
    for &(d, f) in &plan.fine_stream {
        let doc = corpus.doc(d);
        let ll_f = doc_log_likelihood(params, &doc.tokens, Label::Fine(f))?;
        if cfg.lambda == 0.0 {
            obj += ll_f;
        } else {
            let ll_c = doc_log_likelihood(params, &doc.tokens, Label::Coarse(doc.coarse))?;
            obj += ll_f - cfg.lambda * (ll_c - ll_f + cfg.epsilon).max(0.0);
        }
    }
    Ok(obj)
}

/// Runs `cfg.epochs` passes of per-item SGD ascent in seeded shuffled order.
/// Returns the trained parameters and the objective after each epoch.
pub fn train(
    params_init: LMParams,
    cfg: &LMConfig,
    corpus: &Corpus,
    plan: &TrainingBatchPlan,
) -> Result<(LMParams, TrainingTrace), LMError> {
    cfg.validate()?;
    let mut items: Vec<Item> = plan
        .coarse_stream
        .iter()
        .map(|&(d, c)| Item::Coarse(d, c))
        .chain(plan.fine_stream.iter().map(|&(d, f)| Item::Fine(d, f)))
        .collect();
    if items.is_empty() {
        return Err(LMError::EmptySlice);
    }
    let mut params = params_init;
    let mut grad = LMGradient::zeros(&params);
    let mut trace = Vec::with_capacity(cfg.epochs as usize);
    for epoch in 0..cfg.epochs as usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(plan.shuffle_seed, epoch as u64));
        items.shuffle(&mut rng);
        for (step, item) in items.iter().enumerate() {
            match *item {
                Item::Coarse(d, c) => {
                    let row = params.label_row(Label::Coarse(c))?;
                    accumulate_ll(&params, &mut grad, row, &corpus.doc(d).tokens, 1.0)
                }
                Item::Fine(d, f) => {
                    let doc = corpus.doc(d);
                    let fine_row = params.label_row(Label::Fine(f))?;
                    let coarse_row = params.label_row(Label::Coarse(doc.coarse))?;
                    accumulate_fine_item(&params, cfg, &mut grad, &doc.tokens, fine_row, coarse_row)
                }
            }
            .map_err(|e| promote(e, epoch, step))?;
            grad.check_finite().map_err(|e| promote(e, epoch, step))?;
            params.apply_ascent(&grad, cfg.learning_rate);
            grad.reset();
        }
        let obj = objective_of_plan(&params, cfg, corpus, plan)?;
        if !obj.is_finite() {
            return Err(LMError::NumericalInstability {
                epoch,
                step: items.len(),
                block: "objective",
            });
        }
        trace.push(obj);
    }
    Ok((
        params,
        TrainingTrace {
            objective_per_epoch: trace,
        },
    ))
}
