//! Label-conditioned feedforward language model.
//!
//! The predictor sees a fixed window of preceding tokens plus a label
//! embedding: concatenated embeddings -> one tanh hidden layer -> softmax
//! over the vocabulary. Conditioning on a label is what makes P(D|l)
//! trainable per class; documents score as the sum of per-step
//! log-probabilities with a terminal `<eos>` step. Training maximizes the
//! conditioned log-likelihood minus a lambda-weighted hinge that pushes each
//! weakly supervised document to be likelier under its fine label than under
//! its coarse label by a margin epsilon.

pub mod ckpt;
mod grad;
mod sample;
mod train;

pub use grad::{gradient, LMGradient};
pub use sample::{generate_doc, nucleus_prefix, nucleus_sample, GeneratedDoc};
pub use train::{train, TrainingBatchPlan, TrainingTrace};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CoarseId, Corpus, FineId, Label, LabelHierarchy, TokenId, Vocabulary};
use crate::weaksup::{WeakSupError, WeakSupervision};

#[derive(Debug, thiserror::Error)]
pub enum LMError {
    #[error("label row {row} out of range for {num_labels} labels")]
    LabelOutOfRange { row: usize, num_labels: usize },
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("context has {got} tokens, model expects {want}")]
    BadContext { got: usize, want: usize },
    #[error("cannot score an empty document")]
    EmptyDoc,
    #[error("fine label `{fine}` is not a child of coarse label `{coarse}`")]
    HierarchyMismatch { fine: String, coarse: String },
    #[error("weak supervision must be balanced before training")]
    UnbalancedWeakSupervision,
    #[error("gradient slice holds no documents")]
    EmptySlice,
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("sampling distribution contains NaN")]
    DegenerateDistribution,
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: &'static str },
    #[error("numerical instability at epoch {epoch}, step {step} (block `{block}`)")]
    NumericalInstability {
        epoch: usize,
        step: usize,
        block: &'static str,
    },
    #[error(transparent)]
    WeakSup(#[from] WeakSupError),
}

/// Model and optimizer hyperparameters, including the hinge margin
/// (`epsilon`), its weight (`lambda`), and the nucleus budget (`top_p`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LMConfig {
    pub context_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub label_embed_dim: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: u32,
    pub seed: u64,
    pub top_p: f64,
    pub max_gen_len: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            context_size: 4,
            embed_dim: 16,
            hidden_dim: 32,
            label_embed_dim: 8,
            epsilon: 5.0_f64.ln(),
            lambda: 0.01,
            learning_rate: 5e-4,
            epochs: 5,
            seed: 0,
            top_p: 0.95,
            max_gen_len: 200,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<(), LMError> {
        let bad = |msg: &str| Err(LMError::BadConfig(msg.to_owned()));
        if self.context_size < 1
            || self.embed_dim < 1
            || self.hidden_dim < 1
            || self.label_embed_dim < 1
        {
            return bad("all dimension fields must be >= 1");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be a finite non-negative real");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative real");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite positive real");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.max_gen_len < 1 {
            return bad("max_gen_len must be >= 1");
        }
        Ok(())
    }
}

/// All trainable parameters, flat row-major. Label embedding rows are
/// coarse labels first (`num_coarse` rows) then fine labels, so one table
/// serves both conditioning streams.
#[derive(Clone, Debug, PartialEq)]
pub struct LMParams {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub num_coarse: usize,
    pub context_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub label_embed_dim: usize,
    /// vocab_size x embed_dim
    pub token_embeddings: Vec<f64>,
    /// num_labels x label_embed_dim
    pub label_embeddings: Vec<f64>,
    /// (context_size * embed_dim + label_embed_dim) x hidden_dim
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// hidden_dim x vocab_size
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl LMParams {
    pub fn input_dim(&self) -> usize {
        self.context_size * self.embed_dim + self.label_embed_dim
    }

    /// Uniform [-0.1, 0.1] weights under `seed`; biases zero.
    pub fn init(
        cfg: &LMConfig,
        vocab: &Vocabulary,
        hier: &LabelHierarchy,
        seed: u64,
    ) -> Result<LMParams, LMError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect()
        };
        let (v, l, m) = (vocab.len(), hier.num_labels(), hier.num_coarse());
        let input_dim = cfg.context_size * cfg.embed_dim + cfg.label_embed_dim;
        Ok(LMParams {
            vocab_size: v,
            num_labels: l,
            num_coarse: m,
            context_size: cfg.context_size,
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            label_embed_dim: cfg.label_embed_dim,
            token_embeddings: uniform(v * cfg.embed_dim),
            label_embeddings: uniform(l * cfg.label_embed_dim),
            hidden_weights: uniform(input_dim * cfg.hidden_dim),
            hidden_bias: vec![0.0; cfg.hidden_dim],
            output_weights: uniform(cfg.hidden_dim * v),
            output_bias: vec![0.0; v],
        })
    }

    pub fn label_row(&self, label: Label) -> Result<usize, LMError> {
        let row = label.embedding_row(self.num_coarse);
        if row >= self.num_labels {
            return Err(LMError::LabelOutOfRange {
                row,
                num_labels: self.num_labels,
            });
        }
        Ok(row)
    }

    /// Named parameter blocks in canonical (checkpoint) order.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("token_embeddings", &self.token_embeddings),
            ("label_embeddings", &self.label_embeddings),
            ("hidden_weights", &self.hidden_weights),
            ("hidden_bias", &self.hidden_bias),
            ("output_weights", &self.output_weights),
            ("output_bias", &self.output_bias),
        ]
    }
}

/// One prediction step: input vector, hidden activations, log-softmax.
pub(crate) struct StepForward {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub log_probs: Vec<f64>,
}

fn check_token(params: &LMParams, t: TokenId) -> Result<(), LMError> {
    if t.idx() >= params.vocab_size {
        return Err(LMError::TokenOutOfRange {
            token: t.0,
            vocab: params.vocab_size,
        });
    }
    Ok(())
}

pub(crate) fn forward(
    params: &LMParams,
    label_row: usize,
    context: &[TokenId],
) -> Result<StepForward, LMError> {
    if context.len() != params.context_size {
        return Err(LMError::BadContext {
            got: context.len(),
            want: params.context_size,
        });
    }
    if label_row >= params.num_labels {
        return Err(LMError::LabelOutOfRange {
            row: label_row,
            num_labels: params.num_labels,
        });
    }
    let (e, dl, hd, v) = (
        params.embed_dim,
        params.label_embed_dim,
        params.hidden_dim,
        params.vocab_size,
    );
    let mut x = Vec::with_capacity(params.input_dim());
    for &t in context {
        check_token(params, t)?;
        x.extend_from_slice(&params.token_embeddings[t.idx() * e..(t.idx() + 1) * e]);
    }
    x.extend_from_slice(&params.label_embeddings[label_row * dl..(label_row + 1) * dl]);

    let mut pre = params.hidden_bias.clone();
    for (i, &xi) in x.iter().enumerate() {
        for (p, &w) in pre.iter_mut().zip(&params.hidden_weights[i * hd..(i + 1) * hd]) {
            *p += xi * w;
        }
    }
    let h: Vec<f64> = pre.iter().map(|p| p.tanh()).collect();

    let mut logits = params.output_bias.clone();
    for (j, &hj) in h.iter().enumerate() {
        for (l, &w) in logits.iter_mut().zip(&params.output_weights[j * v..(j + 1) * v]) {
            *l += hj * w;
        }
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_probs = logits.iter().map(|l| l - lse).collect();
    Ok(StepForward { x, h, log_probs })
}

/// Log-softmax over the vocabulary for the next token after `context`,
/// conditioned on `label`. `context` must be exactly `context_size` long
/// (left-pad with `<labelsep>` at document start).
pub fn log_prob_next(
    params: &LMParams,
    label: Label,
    context: &[TokenId],
) -> Result<Vec<f64>, LMError> {
    let row = params.label_row(label)?;
    Ok(forward(params, row, context)?.log_probs)
}

/// Runs `f` on each (context window, target) step of a document, including
/// the terminal `<eos>` step. The window starts as all `<labelsep>`.
pub(crate) fn fold_doc_steps<E>(
    context_size: usize,
    tokens: &[TokenId],
    mut f: impl FnMut(&[TokenId], TokenId) -> Result<(), E>,
) -> Result<(), E> {
    let mut ctx = vec![Vocabulary::LABELSEP; context_size];
    for &t in tokens.iter().chain(std::iter::once(&Vocabulary::EOS)) {
        f(&ctx, t)?;
        ctx.rotate_left(1);
        ctx[context_size - 1] = t;
    }
    Ok(())
}

/// log P(D | label) = sum of per-step log-probabilities plus a terminal
/// `<eos>` step.
pub fn doc_log_likelihood(
    params: &LMParams,
    tokens: &[TokenId],
    label: Label,
) -> Result<f64, LMError> {
    if tokens.is_empty() {
        return Err(LMError::EmptyDoc);
    }
    let row = params.label_row(label)?;
    let mut total = 0.0;
    fold_doc_steps(params.context_size, tokens, |ctx, target| {
        check_token(params, target)?;
        total += forward(params, row, ctx)?.log_probs[target.idx()];
        Ok::<(), LMError>(())
    })?;
    Ok(total)
}

/// max(0, log P(D|coarse) - log P(D|fine) + epsilon): positive while the
/// document is not yet likelier under its fine label by the margin.
pub fn hinge_loss(
    params: &LMParams,
    cfg: &LMConfig,
    hier: &LabelHierarchy,
    tokens: &[TokenId],
    fine: FineId,
    coarse: CoarseId,
) -> Result<f64, LMError> {
    if hier.parent(fine) != coarse {
        return Err(LMError::HierarchyMismatch {
            fine: hier.fine_name(fine).to_owned(),
            coarse: hier.coarse_name(coarse).to_owned(),
        });
    }
    let ll_c = doc_log_likelihood(params, tokens, Label::Coarse(coarse))?;
    let ll_f = doc_log_likelihood(params, tokens, Label::Fine(fine))?;
    Ok((ll_c - ll_f + cfg.epsilon).max(0.0))
}

/// The training objective: coarse-conditioned log-likelihood of every
/// document, plus for each weakly supervised document its fine-conditioned
/// log-likelihood minus lambda times the hinge. Weakly supervised documents
/// appear in both sums.
pub fn objective(
    params: &LMParams,
    cfg: &LMConfig,
    corpus: &Corpus,
    hier: &LabelHierarchy,
    ws: &WeakSupervision,
) -> Result<f64, LMError> {
    if !ws.balanced {
        return Err(LMError::UnbalancedWeakSupervision);
    }
    ws.validate_against(corpus, hier)?;
    let mut total = 0.0;
    for doc in &corpus.docs {
        total += doc_log_likelihood(params, &doc.tokens, Label::Coarse(doc.coarse))?;
    }
    for f in hier.fine_ids() {
        for &d in ws.class(f) {
            let tokens = &corpus.doc(d).tokens;
            let ll_f = doc_log_likelihood(params, tokens, Label::Fine(f))?;
            let hl = hinge_loss(params, cfg, hier, tokens, f, hier.parent(f))?;
            total += ll_f - cfg.lambda * hl;
        }
    }
    Ok(total)
}
